"""The distillation outer loop."""
from __future__ import annotations

import copy
import csv
import logging
import math
import os
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import torch

from distillkit._utils.encoding import FriendlyJsonSerde
from distillkit.data import InitStrategy, RealDataset, sample_batch
from distillkit.errors import ConfigurationError, MissingArtifactError, NumericalFailure
from distillkit.nnkit.model import ArchDescriptor, ModelState
from distillkit.nnkit.pool import NetworkPool
from distillkit.nnkit.train import TrainConfig, train_steps
from distillkit.nnkit.trajectory import TrajectoryStore
from distillkit.objectives.common import ObjectiveResult
from distillkit.objectives.dist import cafe_loss, dm_loss
from distillkit.objectives.param import grad_match_loss, traj_match_loss
from distillkit.objectives.perf import frepo_loss, krr_loss, meta_loss
from distillkit.param_space.artifact import save_artifact
from distillkit.param_space.synthetic import SyntheticDataset, build_synthetic, materialize
from distillkit.types import Digest
from distillkit.utils.helpers import RngStreams
from distillkit.utils.validate import validate_finite

from .config import DistillConfig

CONFIG_FILE = "config.json"
HISTORY_FILE = "loss_history.csv"
CHECKPOINT_FILE = "checkpoint.pt"
FINAL_ARTIFACT = "synthetic.bin"
HISTORY_COLUMNS = ("iteration", "loss", "wall_ms")

HistoryRow = Tuple[int, float, float]
"""(iteration, loss, wall time in ms) of one completed outer iteration."""

EvalHook = Callable[["DistillRun"], None]


def make_optimizer(cfg: DistillConfig, tensors: List[torch.Tensor]) -> torch.optim.Optimizer:
    """Optimizer of the learnable synthetic tensors."""
    if cfg.syn_optimizer == "adam":
        return torch.optim.Adam(tensors, lr=cfg.syn_lr)
    momentum = cfg.syn_momentum if cfg.syn_optimizer == "sgd-momentum" else 0.0
    return torch.optim.SGD(tensors, lr=cfg.syn_lr, momentum=momentum)


def resolve_arch(arch: ArchDescriptor, real: RealDataset) -> ArchDescriptor:
    """``arch`` with the input shape and class count of ``real``."""
    resolved = arch._replace(in_shape=real.image_shape, num_classes=real.num_classes)
    try:
        resolved.validate()
    except ValueError as err:
        raise ConfigurationError(f"architecture {resolved.id} does not fit {real.name}: {err}") from err
    return resolved


class DistillRun(FriendlyJsonSerde):
    """State of one distillation run: the synthetic data, the network pool, the optimizer and the history.

    Every random draw comes from the run's named streams, so a run restored with :meth:`resume`
    continues exactly as the uninterrupted run would have.
    """

    logger = logging.getLogger("distillkit.engine.DistillRun")

    def __init__(
        self,
        real: RealDataset,
        cfg: DistillConfig,
        run_dir: Optional["os.PathLike[str]"] = None,
        trajectories: Optional[TrajectoryStore] = None,
    ) -> None:
        """Init DistillRun.

        :param real: Real training set; never modified.
        :param cfg: Run configuration.
        :param run_dir: Directory receiving the config, loss history, checkpoints and artifacts.
        :param trajectories: Trajectory store; defaults to ``cfg.trajectory_dir``.
        """
        cfg.validate()
        self.real = real
        self.config = cfg
        self.arch = resolve_arch(cfg.arch, real)
        self.run_dir = Path(run_dir) if run_dir is not None else None
        if trajectories is None and cfg.trajectory_dir:
            trajectories = TrajectoryStore(cfg.trajectory_dir)
        self.store = trajectories
        self.streams = RngStreams(cfg.seed)
        init = InitStrategy(kind=cfg.init, seed=self.streams.draw_seed("init"))
        self.synthetic: SyntheticDataset = build_synthetic(
            real, cfg.ipc, cfg.param, init, cfg.label_mode, self._label_teacher(), cfg.dsa
        )
        self.pool = NetworkPool(
            self.arch, cfg.source, generator=self.streams["network"], store=self.store, dtype=real.images.dtype
        )
        self.optimizer = make_optimizer(cfg, list(self.synthetic.learnables().values()))
        self.iteration = 0
        self.history: List[HistoryRow] = []
        self.best_loss = float("inf")
        self.since_best = 0
        if self.run_dir is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            self.write_document(self.run_dir / CONFIG_FILE, cfg.to_document())

    def _label_teacher(self) -> Optional[ModelState]:
        if self.config.label_mode != "teacher-soft":
            return None
        if self.store is None:
            raise MissingArtifactError("trajectory store")
        trajectory = self.store.sample(self.streams["label"])
        teacher = trajectory.model(len(trajectory) - 1)
        return teacher._replace(params=teacher.params.to(self.real.images.dtype))

    @property
    def real_per_class(self) -> int:
        """Real samples per class in every objective batch."""
        smallest = min(len(ids) for ids in self.real.class_index)
        return min(self.config.real_per_class, smallest)

    def _update_network(self, model: ModelState) -> ModelState:
        cfg = self.config
        if cfg.net_update == "none" or not cfg.net_steps:
            return model
        if cfg.net_update == "on-syn":
            images, labels = materialize(self.synthetic)
            data = (images.detach(), labels.detach())
            train = TrainConfig(steps=cfg.net_steps, lr=cfg.net_lr, loss=cfg.net_loss)
        else:
            data = (self.real.images, self.real.labels)
            train = TrainConfig(
                steps=cfg.net_steps,
                lr=cfg.net_lr,
                loss=cfg.net_loss,
                batch_size=cfg.net_batch,
                seed=self.streams.draw_seed("batch"),
            )
        trained = train_steps(model, data, train)
        self.pool.update(trained)
        return trained

    def objective(self, model: Optional[ModelState], aug_seed: Optional[int]) -> ObjectiveResult:
        """Loss and gradients of the configured objective at the fetched network."""
        cfg = self.config
        if cfg.objective == "traj-match":
            assert self.store is not None
            trajectory = self.store.sample(self.streams["network"])
            return traj_match_loss(self.synthetic, trajectory, cfg.traj_match, self.streams["network"], aug_seed)
        assert model is not None
        batch = sample_batch(self.real, self.real_per_class, self.streams["batch"])
        if cfg.objective == "meta":
            return meta_loss(self.synthetic, batch, model, cfg.meta, aug_seed)
        if cfg.objective == "krr":
            return krr_loss(self.synthetic, batch, model, cfg.krr, aug_seed)
        if cfg.objective == "frepo":
            return frepo_loss(self.synthetic, batch, model, cfg.krr, aug_seed)
        if cfg.objective == "grad-match":
            return grad_match_loss(self.synthetic, batch, model, cfg.grad_match, aug_seed)
        if cfg.objective == "dm":
            return dm_loss(self.synthetic, batch, model, cfg.dist_match, aug_seed)
        return cafe_loss(self.synthetic, batch, model, cfg.dist_match, aug_seed)

    def fetch(self) -> Optional[ModelState]:
        """Network of the next iteration, updated per the network-update policy."""
        if self.config.objective == "traj-match":
            return None
        return self._update_network(self.pool.fetch())

    def update(self, result: ObjectiveResult) -> None:
        """Apply one synthetic-optimizer step with the objective's gradients.

        The loss and gradients are checked before the step, and the tensors are restored when the
        step itself overflows, so a :class:`NumericalFailure` leaves the last finite state behind.
        """
        validate_finite("objective loss", torch.tensor(result.loss), self.iteration)
        learnables = self.synthetic.learnables()
        for name, tensor in learnables.items():
            validate_finite(f"gradient of {name}", result.grads[name], self.iteration)
        before = {name: tensor.detach().clone() for name, tensor in learnables.items()}
        optimizer_state = copy.deepcopy(self.optimizer.state_dict())
        for name, tensor in learnables.items():
            tensor.grad = result.grads[name].detach().to(tensor.dtype)
        self.optimizer.step()
        self.optimizer.zero_grad(set_to_none=True)
        for name, tensor in learnables.items():
            if not bool(torch.isfinite(tensor.detach()).all()):
                with torch.no_grad():
                    for other, value in learnables.items():
                        value.copy_(before[other])
                self.optimizer.load_state_dict(optimizer_state)
                raise NumericalFailure(f"synthetic tensor {name}", self.iteration)

    def step(self) -> float:
        """Run one outer iteration and return its loss."""
        started = time.perf_counter()
        model = self.fetch()
        aug_seed = self.streams.draw_seed("augment") if self.config.dsa is not None else None
        try:
            result = self.objective(model, aug_seed)
        except NumericalFailure as err:
            raise NumericalFailure("objective loss", self.iteration) from err
        self.update(result)
        wall_ms = (time.perf_counter() - started) * 1000.0
        self.iteration += 1
        self.history.append((self.iteration, result.loss, wall_ms))
        self._track_plateau(result.loss)
        self.logger.debug("Iteration: %d, Loss: %.6g, Wall: %.1f ms", self.iteration, result.loss, wall_ms)
        return result.loss

    def _track_plateau(self, loss: float) -> None:
        if math.isinf(self.best_loss) or loss < self.best_loss - self.config.plateau_tol * abs(self.best_loss):
            self.best_loss = loss
            self.since_best = 0
        else:
            self.since_best += 1

    @property
    def plateaued(self) -> bool:
        """True once the best loss has not improved for ``plateau_patience`` iterations."""
        patience = self.config.plateau_patience
        return bool(patience) and self.since_best >= patience

    @property
    def done(self) -> bool:
        """True at the iteration budget or on a plateau."""
        return self.iteration >= self.config.iterations or self.plateaued

    def run(self, on_eval: Optional[EvalHook] = None) -> DistillRun:
        """Iterate until :attr:`done`, writing checkpoints and intermediate artifacts on schedule."""
        cfg = self.config
        while not self.done:
            try:
                self.step()
            except NumericalFailure as err:
                self.logger.error("Aborting at iteration %d: %s", self.iteration, err)
                if self.run_dir is not None:
                    self.checkpoint()
                    self.write_history()
                raise
            if self.run_dir is not None and cfg.checkpoint_every and self.iteration % cfg.checkpoint_every == 0:
                self.checkpoint()
                self.write_history()
            if cfg.eval_every and self.iteration % cfg.eval_every == 0:
                if self.run_dir is not None:
                    self.save_artifact(self.run_dir / f"synthetic_{self.iteration:06d}.bin")
                if on_eval is not None:
                    on_eval(self)
        if self.plateaued:
            self.logger.info("Loss plateaued at iteration %d (best %.6g)", self.iteration, self.best_loss)
        if self.run_dir is not None:
            self.write_history()
            self.save_artifact(self.run_dir / FINAL_ARTIFACT)
        return self

    def save_artifact(self, path: "os.PathLike[str]") -> Digest:
        """Write the current synthetic dataset as an artifact."""
        return save_artifact(self.synthetic, path, self.real.name, self.config.seed, self.config.objective)

    def write_history(self, path: Optional["os.PathLike[str]"] = None) -> Path:
        """Write the loss history CSV (iteration, loss, wall_ms)."""
        if path is None:
            if self.run_dir is None:
                raise ConfigurationError("no run directory to write the loss history to")
            path = self.run_dir / HISTORY_FILE
        path = Path(path)
        with open(path, "w", newline="") as file_handle:
            writer = csv.writer(file_handle)
            writer.writerow(HISTORY_COLUMNS)
            writer.writerows((iteration, repr(loss), f"{wall_ms:.3f}") for iteration, loss, wall_ms in self.history)
        return path

    def state_dict(self) -> Dict[str, Any]:
        """Everything :meth:`load_state_dict` needs to continue the run."""
        return {
            "config": self.config.to_document(),
            "iteration": self.iteration,
            "history": list(self.history),
            "best_loss": self.best_loss,
            "since_best": self.since_best,
            "tensors": {name: value.detach().clone() for name, value in self.synthetic.learnables().items()},
            "optimizer": self.optimizer.state_dict(),
            "streams": self.streams.get_state(),
            "pool": self.pool.get_state(),
        }

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        """Restore a state captured with :meth:`state_dict` into this run."""
        if self.to_jsonable(state["config"]) != self.to_jsonable(self.config.to_document()):
            raise ConfigurationError("checkpoint was written by a run with a different configuration")
        learnables = self.synthetic.learnables()
        if set(learnables) != set(state["tensors"]):
            raise ConfigurationError(f"checkpoint tensors {sorted(state['tensors'])} do not match {sorted(learnables)}")
        with torch.no_grad():
            for name, tensor in learnables.items():
                tensor.copy_(state["tensors"][name])
        self.optimizer.load_state_dict(state["optimizer"])
        self.streams.set_state(state["streams"])
        self.pool.set_state(state["pool"])
        self.iteration = state["iteration"]
        self.history = [tuple(row) for row in state["history"]]  # type: ignore
        self.best_loss = state["best_loss"]
        self.since_best = state["since_best"]

    def checkpoint(self, path: Optional["os.PathLike[str]"] = None) -> Path:
        """Write a resumable checkpoint atomically."""
        if path is None:
            if self.run_dir is None:
                raise ConfigurationError("no run directory to write the checkpoint to")
            path = self.run_dir / CHECKPOINT_FILE
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        torch.save(self.state_dict(), tmp)
        os.replace(tmp, path)
        self.logger.debug("Wrote checkpoint at iteration %d to %s", self.iteration, path)
        return path

    def resume(self, path: "os.PathLike[str]") -> DistillRun:
        """Continue from a checkpoint written by :meth:`checkpoint`."""
        path = Path(path)
        if path.is_dir():
            path = path / CHECKPOINT_FILE
        if not path.is_file():
            raise MissingArtifactError("engine checkpoint", str(path))
        self.load_state_dict(torch.load(path, map_location="cpu"))
        self.logger.info("Resumed at iteration %d from %s", self.iteration, path)
        return self


def distill(
    real: RealDataset,
    cfg: DistillConfig,
    resume: Optional["os.PathLike[str]"] = None,
    run_dir: Optional["os.PathLike[str]"] = None,
    trajectories: Optional[TrajectoryStore] = None,
    on_eval: Optional[EvalHook] = None,
) -> DistillRun:
    """Distill ``real`` per ``cfg`` and return the finished run.

    Each outer iteration fetches a network, trains it per ``cfg.net_update``, evaluates the
    objective and applies one synthetic-optimizer step to every learnable tensor. The loop stops
    at ``cfg.iterations`` or when the loss plateaus. On a non-finite loss the run writes a
    checkpoint (when it has a run directory) and re-raises :class:`NumericalFailure`.

    :param real: Real training set.
    :param cfg: Run configuration.
    :param resume: Checkpoint file or run directory to continue from.
    :param run_dir: Directory for the config, loss history, checkpoints and artifacts.
    :param trajectories: Trajectory store, overriding ``cfg.trajectory_dir``.
    :param on_eval: Called every ``cfg.eval_every`` iterations with the run.
    """
    run = DistillRun(real, cfg, run_dir, trajectories)
    if resume is not None:
        run.resume(resume)
    return run.run(on_eval)

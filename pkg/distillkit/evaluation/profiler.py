"""Run-time and memory profiling of distillation objectives."""
from __future__ import annotations

import csv
import logging
import os
import time
import weakref
from pathlib import Path
from typing import Any, Iterable, List, NamedTuple, Optional

import torch
from typing_extensions import Literal

from distillkit.data import RealDataset
from distillkit.engine.config import DistillConfig
from distillkit.engine.runner import DistillRun
from distillkit.errors import ArgumentError
from distillkit.nnkit.trajectory import TrajectoryStore
from distillkit.utils.validate import validate_positive

logger = logging.getLogger("distillkit.evaluation")

PROFILE_COLUMNS = ("objective", "ipc", "runtime_per_loop_ms", "runtime_per_step_ms", "peak_memory_mb", "status")

MB = 1024.0 * 1024.0


class Profile(NamedTuple):
    """Cost of one outer iteration at one budget."""

    objective: str
    """Objective id."""
    ipc: int
    """Images per class."""
    runtime_per_loop_ms: float
    """Network update plus synthetic update, mean over the timed iterations."""
    runtime_per_step_ms: float
    """Synthetic update alone (objective and optimizer step)."""
    peak_memory_mb: float
    """High-water mark of autograd-saved tensors (or the CUDA allocator peak)."""
    status: Literal["ok", "out-of-memory"] = "ok"
    """``out-of-memory`` rows carry no measurements."""


class _Saved:
    """A tensor held by an autograd graph, counted while it is alive."""

    __slots__ = ("tensor", "__weakref__")

    def __init__(self, tensor: torch.Tensor) -> None:
        """Init _Saved."""
        self.tensor = tensor


class MemoryMeter:
    """Track the bytes autograd keeps for backward passes.

    Every tensor an autograd node saves is counted from the moment it is packed until its graph
    is released. With ``limit_mb`` set, exceeding the limit raises :class:`MemoryError`.
    """

    def __init__(self, limit_mb: Optional[float] = None) -> None:
        """Init MemoryMeter."""
        self.limit = None if limit_mb is None else limit_mb * MB
        self.live = 0
        self.peak = 0
        self._hooks: Any = None

    def _pack(self, tensor: torch.Tensor) -> _Saved:
        size = tensor.numel() * tensor.element_size()
        self.live += size
        self.peak = max(self.peak, self.live)
        saved = _Saved(tensor)
        weakref.finalize(saved, self._release, size)
        if self.limit is not None and self.live > self.limit:
            raise MemoryError(f"out of memory: saved tensors exceed {self.limit / MB:.1f} MB")
        return saved

    def _release(self, size: int) -> None:
        self.live -= size

    @staticmethod
    def _unpack(saved: _Saved) -> torch.Tensor:
        return saved.tensor

    def __enter__(self) -> MemoryMeter:
        """Start counting."""
        if torch.cuda.is_available():
            torch.cuda.reset_peak_memory_stats()
        self._hooks = torch.autograd.graph.saved_tensors_hooks(self._pack, self._unpack)
        self._hooks.__enter__()
        return self

    def __exit__(self, *exc_info: Any) -> None:
        """Stop counting."""
        self._hooks.__exit__(*exc_info)
        if torch.cuda.is_available():
            self.peak = max(self.peak, torch.cuda.max_memory_allocated())

    @property
    def peak_mb(self) -> float:
        """Peak in MB."""
        return self.peak / MB


def _is_oom(err: BaseException) -> bool:
    return isinstance(err, MemoryError) or "out of memory" in str(err).lower()


def profile_one(
    real: RealDataset,
    cfg: DistillConfig,
    iterations: int = 3,
    trajectories: Optional[TrajectoryStore] = None,
    memory_limit_mb: Optional[float] = None,
) -> Profile:
    """Time ``iterations`` outer loops of ``cfg`` after one warm-up loop.

    The network phase is fetch plus network update; with no network update (or with trajectory
    matching, whose networks come from the store) it is exactly zero.
    """
    validate_positive("iterations", iterations)
    run = DistillRun(real, cfg._replace(plateau_patience=0), trajectories=trajectories)
    timed_network = cfg.net_update != "none" and cfg.objective != "traj-match"
    network_ms = step_ms = 0.0
    meter = MemoryMeter(memory_limit_mb)
    try:
        with meter:
            for index in range(iterations + 1):
                started = time.perf_counter()
                model = run.fetch()
                fetched = time.perf_counter()
                aug_seed = run.streams.draw_seed("augment") if cfg.dsa is not None else None
                run.update(run.objective(model, aug_seed))
                finished = time.perf_counter()
                if index:
                    network_ms += (fetched - started) * 1000.0 if timed_network else 0.0
                    step_ms += (finished - fetched) * 1000.0
    except (RuntimeError, MemoryError) as err:
        if not _is_oom(err):
            raise
        logger.warning("Out of memory. Objective: %s, Ipc: %d (%s)", cfg.objective, cfg.ipc, err)
        return Profile(cfg.objective, cfg.ipc, float("nan"), float("nan"), float("nan"), "out-of-memory")
    step_ms /= iterations
    network_ms /= iterations
    result = Profile(cfg.objective, cfg.ipc, network_ms + step_ms, step_ms, meter.peak_mb)
    logger.debug(
        "Profiled. Objective: %s, Ipc: %d, Loop: %.1f ms, Step: %.1f ms, Peak: %.2f MB",
        result.objective,
        result.ipc,
        result.runtime_per_loop_ms,
        result.runtime_per_step_ms,
        result.peak_memory_mb,
    )
    return result


def profile(
    real: RealDataset,
    cfg: DistillConfig,
    ipcs: Iterable[int],
    iterations: int = 3,
    trajectories: Optional[TrajectoryStore] = None,
    memory_limit_mb: Optional[float] = None,
) -> List[Profile]:
    """One :class:`Profile` per images-per-class budget; out-of-memory budgets become failure rows."""
    budgets = list(ipcs)
    if not budgets or min(budgets) < 1:
        raise ArgumentError(f"every ipc must be >= 1, got {budgets}")
    cfg.validate()
    return [profile_one(real, cfg._replace(ipc=ipc), iterations, trajectories, memory_limit_mb) for ipc in budgets]


def write_profile_csv(path: "os.PathLike[str]", rows: Iterable[Profile]) -> Path:
    """Write the profile table."""
    path = Path(path)
    with open(path, "w", newline="") as file_handle:
        writer = csv.writer(file_handle)
        writer.writerow(PROFILE_COLUMNS)
        for row in rows:
            writer.writerow(
                (
                    row.objective,
                    row.ipc,
                    f"{row.runtime_per_loop_ms:.3f}",
                    f"{row.runtime_per_step_ms:.3f}",
                    f"{row.peak_memory_mb:.3f}",
                    row.status,
                )
            )
    return path

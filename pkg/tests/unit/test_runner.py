"""Unit tests for distillkit.engine.runner."""
import csv

import pytest
import torch

from distillkit.engine import PRESETS, DistillConfig, DistillRun, distill, preset
from distillkit.engine.runner import CHECKPOINT_FILE, CONFIG_FILE, FINAL_ARTIFACT, HISTORY_FILE, resolve_arch
from distillkit.errors import ConfigurationError, MissingArtifactError, NumericalFailure
from distillkit.nnkit.model import ArchDescriptor
from distillkit.objectives import TrajMatchConfig
from distillkit.objectives.common import ObjectiveResult
from distillkit.param_space.artifact import load_artifact

TINY = ArchDescriptor("mlp", 1, 16, "none")


def small(cfg: DistillConfig, iterations: int = 3, **changes) -> DistillConfig:
    """Shrink a config to a tiny network and a few iterations."""
    return cfg._replace(arch=TINY, iterations=iterations, real_per_class=8, **{"checkpoint_every": 0, **changes})


def constant_objective(run: DistillRun, loss: float = 1.0):
    """Objective stand-in returning a fixed loss and zero gradients."""

    def objective(model, aug_seed):
        grads = {name: torch.zeros_like(value) for name, value in run.synthetic.learnables().items()}
        return ObjectiveResult(loss=loss, grads=grads)

    return objective


def scripted_objective(run: DistillRun, losses):
    """Objective stand-in returning the given losses in turn, with zero gradients."""
    remaining = iter(losses)

    def objective(model, aug_seed):
        grads = {name: torch.zeros_like(value) for name, value in run.synthetic.learnables().items()}
        return ObjectiveResult(loss=float(next(remaining)), grads=grads)

    return objective


def snapshot(run: DistillRun):
    """Copies of the learnable synthetic tensors."""
    return {name: value.detach().clone() for name, value in run.synthetic.learnables().items()}


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_every_preset_runs(blobs, trajectory_store, name):
    """Test every preset completes a few iterations with finite losses."""
    cfg = preset(name)
    cfg = small(cfg, iterations=2, syn_lr=min(cfg.syn_lr, 1.0), trajectory_dir=str(trajectory_store.root))
    if cfg.objective == "traj-match":
        cfg = cfg._replace(traj_match=cfg.traj_match._replace(student_steps=2, teacher_steps=2, epoch_range=(0, 2)))
    run = distill(blobs, cfg)
    assert run.iteration == 2
    assert len(run.history) == 2
    assert all(torch.isfinite(torch.tensor(loss)) for _, loss, _ in run.history)


def test_zero_learning_rate_keeps_synthetic(blobs):
    """Test a zero synthetic learning rate leaves every tensor unchanged."""
    run = DistillRun(blobs, small(preset("dc"), syn_lr=0.0))
    before = snapshot(run)
    run.run()
    after = snapshot(run)
    assert all(torch.equal(before[name], after[name]) for name in before)


def test_same_seed_same_artifact(blobs, tmp_path):
    """Test two runs with the same seed write byte-identical artifacts."""
    cfg = small(preset("dsa"))
    distill(blobs, cfg, run_dir=tmp_path / "a")
    distill(blobs, cfg, run_dir=tmp_path / "b")
    assert (tmp_path / "a" / FINAL_ARTIFACT).read_bytes() == (tmp_path / "b" / FINAL_ARTIFACT).read_bytes()
    distill(blobs, cfg._replace(seed=1), run_dir=tmp_path / "c")
    assert (tmp_path / "a" / FINAL_ARTIFACT).read_bytes() != (tmp_path / "c" / FINAL_ARTIFACT).read_bytes()


@pytest.mark.parametrize("name", ["dsa", "frepo"])
def test_resume_matches_uninterrupted(blobs, tmp_path, name):
    """Test a run resumed from a checkpoint ends exactly where the uninterrupted run does."""
    cfg = small(preset(name), iterations=4)
    full = distill(blobs, cfg, run_dir=tmp_path / "full")

    partial = DistillRun(blobs, cfg, tmp_path / "partial")
    partial.step()
    partial.step()
    partial.checkpoint()
    resumed = distill(blobs, cfg, resume=tmp_path / "partial", run_dir=tmp_path / "resumed")

    assert resumed.iteration == 4
    assert [loss for _, loss, _ in resumed.history] == [loss for _, loss, _ in full.history]
    assert (tmp_path / "resumed" / FINAL_ARTIFACT).read_bytes() == (tmp_path / "full" / FINAL_ARTIFACT).read_bytes()


def test_resume_rejects_other_config(blobs, tmp_path):
    """Test a checkpoint cannot be resumed under a different configuration."""
    cfg = small(preset("dm"))
    run = DistillRun(blobs, cfg, tmp_path)
    run.step()
    run.checkpoint()
    with pytest.raises(ConfigurationError, match="different configuration"):
        DistillRun(blobs, cfg._replace(syn_lr=2.0)).resume(tmp_path)
    with pytest.raises(MissingArtifactError):
        DistillRun(blobs, cfg).resume(tmp_path / "elsewhere")


def test_run_directory_contents(blobs, tmp_path):
    """Test a run writes its config, history, checkpoint and artifacts."""
    cfg = small(preset("dm"), iterations=4, eval_every=2, checkpoint_every=2)
    seen = []
    run = distill(blobs, cfg, run_dir=tmp_path, on_eval=lambda r: seen.append(r.iteration))
    assert seen == [2, 4]
    for name in (CONFIG_FILE, HISTORY_FILE, CHECKPOINT_FILE, FINAL_ARTIFACT, "synthetic_000002.bin"):
        assert (tmp_path / name).is_file(), name
    with open(tmp_path / HISTORY_FILE, newline="") as file_handle:
        rows = list(csv.reader(file_handle))
    assert rows[0] == ["iteration", "loss", "wall_ms"]
    assert [int(row[0]) for row in rows[1:]] == [1, 2, 3, 4]
    assert [float(row[1]) for row in rows[1:]] == [loss for _, loss, _ in run.history]
    _, metadata = load_artifact(tmp_path / FINAL_ARTIFACT)
    assert metadata["objective"] == "dm"
    assert metadata["dataset"] == blobs.name


def test_numerical_failure_writes_checkpoint(blobs, tmp_path, monkeypatch):
    """Test a non-finite loss aborts the run after checkpointing the last good state."""
    run = DistillRun(blobs, small(preset("dm"), iterations=10), tmp_path)
    good = constant_objective(run)
    calls = []

    def failing(model, aug_seed):
        calls.append(aug_seed)
        if len(calls) > 2:
            raise NumericalFailure("loss", 0)
        return good(model, aug_seed)

    monkeypatch.setattr(run, "objective", failing)
    with pytest.raises(NumericalFailure, match="at step 2"):
        run.run()
    state = torch.load(tmp_path / CHECKPOINT_FILE)
    assert state["iteration"] == 2
    assert (tmp_path / HISTORY_FILE).is_file()


def test_plateau_stops_early(blobs, monkeypatch):
    """Test the loop stops once the loss has not improved for the patience window."""
    run = DistillRun(blobs, small(preset("dm"), iterations=100, plateau_patience=3))
    monkeypatch.setattr(run, "objective", constant_objective(run))
    run.run()
    assert run.plateaued
    assert run.iteration == 4


def test_decreasing_loss_uses_whole_budget(blobs, monkeypatch):
    """Test a steadily improving loss never counts as a plateau."""
    run = DistillRun(blobs, small(preset("dm"), iterations=20, plateau_patience=5))
    monkeypatch.setattr(run, "objective", scripted_objective(run, range(100, 0, -1)))
    run.run()
    assert run.iteration == 20
    assert not run.plateaued
    assert run.best_loss == 81.0


def test_plateau_counts_from_best_loss(blobs, monkeypatch):
    """Test the loop stops patience iterations after the last improvement."""
    run = DistillRun(blobs, small(preset("dm"), iterations=100, plateau_patience=3))
    monkeypatch.setattr(run, "objective", scripted_objective(run, [5.0, 4.0, 3.0] + [3.0] * 10))
    run.run()
    assert run.plateaued
    assert run.iteration == 6
    assert run.best_loss == 3.0


def test_plateau_state_survives_resume(blobs, tmp_path, monkeypatch):
    """Test a resumed run keeps the best loss and the plateau counter."""
    cfg = small(preset("dm"), iterations=10, plateau_patience=3)
    run = DistillRun(blobs, cfg, tmp_path)
    monkeypatch.setattr(run, "objective", scripted_objective(run, [5.0, 4.0, 4.0]))
    for _ in range(3):
        run.step()
    run.checkpoint()

    resumed = DistillRun(blobs, cfg).resume(tmp_path)
    assert resumed.best_loss == 4.0
    assert resumed.since_best == 1
    monkeypatch.setattr(resumed, "objective", scripted_objective(resumed, [4.0, 4.0, 1.0]))
    resumed.run()
    assert resumed.iteration == 5
    assert resumed.plateaued


def test_nonfinite_gradient_checkpoints_finite_state(blobs, tmp_path, monkeypatch):
    """Test NaN gradients abort before the step, so the checkpoint holds the last finite tensors."""
    run = DistillRun(blobs, small(preset("dm"), iterations=10), tmp_path)
    good = constant_objective(run)
    calls = []

    def poisoned(model, aug_seed):
        calls.append(aug_seed)
        result = good(model, aug_seed)
        if len(calls) < 2:
            return result
        nan = {name: torch.full_like(value, float("nan")) for name, value in result.grads.items()}
        return result._replace(grads=nan)

    before = snapshot(run)
    monkeypatch.setattr(run, "objective", poisoned)
    with pytest.raises(NumericalFailure, match="gradient of codes.images at step 1"):
        run.run()
    state = torch.load(tmp_path / CHECKPOINT_FILE)
    assert state["iteration"] == 1
    for name, value in state["tensors"].items():
        assert bool(torch.isfinite(value).all()), name
        assert torch.equal(value, before[name]), name


def test_overflowing_step_is_rolled_back(blobs, monkeypatch):
    """Test a step that overflows restores the tensors and the optimizer state."""
    run = DistillRun(blobs, small(preset("dm"), syn_lr=1e10))

    def huge(model, aug_seed):
        grads = {name: torch.full_like(value, 1e30) for name, value in run.synthetic.learnables().items()}
        return ObjectiveResult(loss=1.0, grads=grads)

    before = snapshot(run)
    monkeypatch.setattr(run, "objective", huge)
    with pytest.raises(NumericalFailure, match="synthetic tensor codes.images at step 0"):
        run.step()
    after = snapshot(run)
    assert all(torch.equal(before[name], after[name]) for name in before)
    assert run.optimizer.state_dict()["state"] == {}
    assert run.iteration == 0


def test_traj_match_with_accumulation(blobs, trajectory_store):
    """Test trajectory matching runs with soft teacher labels and the accumulating gradient."""
    traj = TrajMatchConfig(student_steps=3, teacher_steps=2, epoch_range=(0, 2), memory_mode="accumulate")
    cfg = small(preset("tesla"), traj_match=traj, trajectory_dir=str(trajectory_store.root))
    run = distill(blobs, cfg, trajectories=trajectory_store)
    assert run.iteration == 3
    assert run.synthetic.labels.values.shape == (3, 3)


def test_resolve_arch(blobs):
    """Test the architecture takes the dataset's shape and rejects misfits."""
    assert resolve_arch(TINY, blobs).in_shape == (1, 4, 4)
    assert resolve_arch(TINY, blobs).num_classes == 3
    with pytest.raises(ConfigurationError, match="does not fit"):
        resolve_arch(ArchDescriptor("mlp", 1, 16, "instance"), blobs)

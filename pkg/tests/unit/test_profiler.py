"""Unit tests for distillkit.evaluation.profiler."""
import csv
import math

import pytest
import torch

from distillkit.engine import preset
from distillkit.errors import ArgumentError
from distillkit.evaluation import MemoryMeter, profile, write_profile_csv
from distillkit.nnkit.model import ArchDescriptor
from distillkit.objectives import TrajMatchConfig

TINY = ArchDescriptor("mlp", 1, 16, "none")


def test_no_network_update_means_loop_equals_step(blobs):
    """Test the per-loop and per-step times coincide when nothing trains the network."""
    cfg = preset("dm")._replace(arch=TINY, dsa=None)
    rows = profile(blobs, cfg, [1, 2], iterations=2)
    assert [row.ipc for row in rows] == [1, 2]
    for row in rows:
        assert row.status == "ok"
        assert row.runtime_per_loop_ms == row.runtime_per_step_ms
        assert row.peak_memory_mb > 0.0


def test_network_update_is_timed(blobs):
    """Test a network update adds to the loop time."""
    (row,) = profile(blobs, preset("dc")._replace(arch=TINY), [1], iterations=2)
    assert row.runtime_per_loop_ms > row.runtime_per_step_ms


def test_out_of_memory_row(blobs):
    """Test exceeding the memory limit yields a failure row instead of an error."""
    (row,) = profile(blobs, preset("dc")._replace(arch=TINY), [1], iterations=1, memory_limit_mb=1e-6)
    assert row.status == "out-of-memory"
    assert math.isnan(row.peak_memory_mb)


def test_accumulate_keeps_less_alive(blobs, trajectory_store):
    """Test accumulating trajectory gradients peaks below the unrolled graph."""
    traj = TrajMatchConfig(student_steps=10, teacher_steps=2, epoch_range=(0, 2))
    cfg = preset("mtt")._replace(arch=TINY, dsa=None, traj_match=traj, trajectory_dir=str(trajectory_store.root))
    (unrolled,) = profile(blobs, cfg, [2], iterations=1)
    (accumulated,) = profile(blobs, cfg._replace(traj_match=traj._replace(memory_mode="accumulate")), [2], iterations=1)
    assert unrolled.peak_memory_mb > accumulated.peak_memory_mb
    assert unrolled.runtime_per_loop_ms == unrolled.runtime_per_step_ms


@pytest.mark.parametrize("ipcs", [[], [0], [1, -1]])
def test_invalid_budgets(blobs, ipcs):
    """Test every budget must be at least one image per class."""
    with pytest.raises(ArgumentError):
        profile(blobs, preset("dm")._replace(arch=TINY), ipcs)


def test_memory_meter_counts_saved_tensors():
    """Test the meter sees tensors saved for backward and releases them with the graph."""
    weight = torch.ones(256, requires_grad=True)
    with MemoryMeter() as meter:
        loss = (weight * weight).sum()
        assert meter.live >= 256 * 4
        del loss
    assert meter.peak >= 256 * 4
    assert meter.live == 0


def test_profile_csv(blobs, tmp_path):
    """Test the profile table layout."""
    rows = profile(blobs, preset("dm")._replace(arch=TINY, dsa=None), [1], iterations=1)
    path = write_profile_csv(tmp_path / "profile.csv", rows)
    with open(path, newline="") as file_handle:
        table = list(csv.reader(file_handle))
    assert table[0] == ["objective", "ipc", "runtime_per_loop_ms", "runtime_per_step_ms", "peak_memory_mb", "status"]
    assert table[1][0] == "dm"
    assert table[1][5] == "ok"

"""Unit tests for distillkit.engine.config."""
import json

import pytest

from distillkit.engine import PRESETS, DistillConfig, preset, support_matrix
from distillkit.engine.config import SUPPORTED_LABELS
from distillkit.errors import ConfigurationError
from distillkit.nnkit.model import NetworkSource


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_validate(name):
    """Test every preset is a valid configuration once its trajectory store is given."""
    cfg = preset(name)
    if cfg.objective == "traj-match" or cfg.label_mode == "teacher-soft":
        with pytest.raises(ConfigurationError, match="trajectory store"):
            cfg.validate()
        cfg = cfg._replace(trajectory_dir="teachers")
    cfg.validate()


def test_unknown_preset():
    """Test unknown presets list the available ones."""
    with pytest.raises(ConfigurationError, match="available presets: addmem"):
        preset("nope")


@pytest.mark.parametrize("objective", ["dm", "cafe"])
@pytest.mark.parametrize("label_mode", ["learnable", "teacher-soft"])
def test_distribution_matching_rejects_label_learning(objective, label_mode):
    """Test distribution matching only accepts fixed one-hot labels and reports the matrix."""
    cfg = DistillConfig(objective=objective, label_mode=label_mode, trajectory_dir="teachers")
    with pytest.raises(ConfigurationError) as exc_info:
        cfg.validate()
    assert "supported combinations" in str(exc_info.value)
    assert support_matrix() in str(exc_info.value)


def test_support_matrix_lists_every_objective():
    """Test the support matrix names every objective."""
    matrix = support_matrix()
    for objective in SUPPORTED_LABELS:
        assert f"{objective}: fixed-onehot" in matrix


def test_teacher_source_needs_store():
    """Test teacher-checkpoint networks need a trajectory store."""
    cfg = DistillConfig(source=NetworkSource(kind="teacher-checkpoint"))
    with pytest.raises(ConfigurationError, match="trajectory_dir"):
        cfg.validate()
    cfg._replace(trajectory_dir="teachers").validate()


@pytest.mark.parametrize(
    "changes",
    [
        {"objective": "nope"},
        {"ipc": 0},
        {"iterations": 0},
        {"syn_momentum": 1.5},
        {"net_update": "sometimes"},
        {"syn_optimizer": "lbfgs"},
    ],
)
def test_invalid_values(changes):
    """Test out-of-range values surface as ConfigurationError."""
    with pytest.raises(ConfigurationError):
        DistillConfig(**changes).validate()


@pytest.mark.parametrize("name", ["tesla", "idc", "haba"])
def test_document_round_trip(name):
    """Test a config survives JSON serialization with nested settings intact."""
    cfg = preset(name)._replace(trajectory_dir="teachers")
    doc = json.loads(json.dumps(cfg.to_document()))
    assert DistillConfig.from_document(doc) == cfg


def test_document_defaults():
    """Test missing keys take their defaults."""
    cfg = DistillConfig.from_document({"objective": "dm", "ipc": 10})
    assert cfg == DistillConfig(objective="dm", ipc=10)

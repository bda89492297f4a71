"""Unit tests for distillkit.param_space.artifact."""
import logging

import pytest
import torch

from distillkit.errors import FormatError, MissingArtifactError
from distillkit.param_space.artifact import decode_artifact, encode_artifact, load_artifact, save_artifact
from distillkit.param_space.augment import DSAConfig
from distillkit.param_space.synthetic import ParamConfig, build_synthetic, materialize


@pytest.mark.parametrize(
    "config, label_mode",
    [
        (ParamConfig(), "fixed-onehot"),
        (ParamConfig(kind="upsample", factor=2, upsample_mode="nearest"), "learnable"),
        (ParamConfig(kind="memory", bases=4), "learnable"),
        (ParamConfig(kind="hallucinator", decoders=2), "fixed-onehot"),
    ],
)
def test_load_restores_every_tensor(tmp_path, blobs, config, label_mode):
    """Test a loaded artifact holds the saved tensors bit for bit."""
    synthetic = build_synthetic(blobs, 1, config, label_mode=label_mode, augment=DSAConfig(ops=("flip",)))
    path = tmp_path / "synthetic.bin"
    save_artifact(synthetic, path, blobs.name, seed=3, objective="dm")
    loaded, metadata = load_artifact(path)
    assert metadata["kind"] == config.kind
    assert metadata["objective"] == "dm"
    assert loaded.config == config
    assert loaded.augment == DSAConfig(ops=("flip",))
    assert loaded.labels.mode == label_mode
    for name, value in synthetic.stored().items():
        assert torch.equal(value.detach(), loaded.stored()[name].detach()), name
    assert torch.equal(materialize(synthetic)[0].detach(), materialize(loaded)[0].detach())


def test_encoding_is_deterministic(blobs):
    """Test equal datasets encode to equal bytes."""
    first = encode_artifact(build_synthetic(blobs, 1), blobs.name, seed=0)
    assert first[:4] == b"DKSA"
    assert first == encode_artifact(build_synthetic(blobs, 1), blobs.name, seed=0)
    metadata, tensors = decode_artifact(first)
    assert metadata["ipc_equivalent"] == 1.0
    assert metadata["options"]["source_dtype"] == "float32"
    assert tensors["classes"].tolist() == [0.0, 1.0, 2.0]


def test_malformed_artifacts(tmp_path, blobs):
    """Test foreign bytes, other versions and missing files."""
    raw = encode_artifact(build_synthetic(blobs, 1), blobs.name)
    with pytest.raises(FormatError):
        decode_artifact(b"NOPE" + raw[4:])
    with pytest.raises(FormatError, match="unsupported artifact version 2"):
        decode_artifact(raw[:4] + b"\x02\x00" + raw[6:])
    with pytest.raises(MissingArtifactError, match="missing.bin"):
        load_artifact(tmp_path / "missing.bin")


def test_float64_is_rounded_and_recorded(tmp_path, blobs64, caplog):
    """Test a float64 dataset is stored as float32, with a warning and its source dtype recorded."""
    synthetic = build_synthetic(blobs64, 1)
    path = tmp_path / "synthetic.bin"
    with caplog.at_level(logging.WARNING, logger="distillkit.param_space"):
        save_artifact(synthetic, path, blobs64.name)
    assert "Rounding float64" in caplog.text
    loaded, metadata = load_artifact(path)
    assert metadata["options"]["source_dtype"] == "float64"
    images = loaded.stored()["codes.images"]
    assert images.dtype == torch.float32
    assert torch.allclose(images.double(), synthetic.stored()["codes.images"].detach(), atol=1e-5)

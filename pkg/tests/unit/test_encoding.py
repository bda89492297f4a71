"""Unit tests for distillkit._utils.encoding."""
import json
from typing import NamedTuple

import pytest

from distillkit._utils.encoding import FriendlyJsonSerde


class _Point(NamedTuple):
    x: int
    y: int


def test_unencodable_value_names_key():
    """Test the encoding error names the offending key."""
    with pytest.raises(TypeError) as exc_info:
        FriendlyJsonSerde().json_encode({"good": 1, "bad": object()})
    assert "'bad'" in str(exc_info.value.__cause__)


def test_write_document_is_sorted_and_deterministic(tmp_path):
    """Test documents are written with sorted keys and NamedTuples as objects."""
    serde = FriendlyJsonSerde()
    path = tmp_path / "doc.json"
    serde.write_document(path, {"b": _Point(1, 2), "a": (1, 2)})
    first = path.read_bytes()
    serde.write_document(path, {"a": [1, 2], "b": {"y": 2, "x": 1}})
    assert path.read_bytes() == first
    assert serde.read_document(path) == {"a": [1, 2], "b": {"x": 1, "y": 2}}
    assert not (tmp_path / "doc.json.tmp").exists()


def test_non_finite_floats_become_null():
    """Test NaN and infinity are written as null."""
    encoded = FriendlyJsonSerde().json_encode({"nan": float("nan"), "inf": float("-inf")})
    assert json.loads(encoded) == {"inf": None, "nan": None}


def test_bad_json_keeps_decode_error_type():
    """Test malformed documents raise JSONDecodeError."""
    with pytest.raises(json.decoder.JSONDecodeError):
        FriendlyJsonSerde().json_decode("{not json")

"""Byte layouts for synthetic artifacts and trajectory checkpoints."""
from construct import Bytes, Const, Int16ul, Int32ul, Int64ul, PascalString  # type: ignore
from construct import PrefixedArray
from construct import Struct as cStruct
from construct import this

from .shared import FLOAT32_SIZE, TENSOR_LAYOUT

ARTIFACT_VERSION = 1
"""Current synthetic artifact format version."""

ARTIFACT_LAYOUT = cStruct(
    "magic" / Const(b"DKSA"),
    "version" / Int16ul,
    "metadata" / PascalString(Int32ul, "utf8"),
    "tensors" / PrefixedArray(Int16ul, TENSOR_LAYOUT),
)

CHECKPOINT_LAYOUT = cStruct(
    "magic" / Const(b"DKTC"),
    "step" / Int64ul,
    "count" / Int32ul,
    "data" / Bytes(this.count * FLOAT32_SIZE),
)
"""A flat float32 parameter vector recorded at a teacher step."""

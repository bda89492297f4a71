"""Shared layouts."""
from math import prod

from construct import Bytes, Int8ul, Int16ul, Int32ul, PascalString  # type: ignore
from construct import Struct as cStruct
from construct import Array, this

FLOAT32_SIZE = 4
"""Bytes per stored real number."""

NAME_LAYOUT = PascalString(Int16ul, "utf8")

TENSOR_LAYOUT = cStruct(
    "name" / NAME_LAYOUT,
    "ndim" / Int8ul,
    "shape" / Array(this.ndim, Int32ul),
    "data" / Bytes(lambda this: FLOAT32_SIZE * prod(this.shape)),
)
"""One little-endian float32 tensor with its name and shape."""

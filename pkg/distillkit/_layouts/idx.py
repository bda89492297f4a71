"""Byte layouts for the IDX and CIFAR binary dataset formats."""
from enum import IntEnum

from construct import Bytes, Const, Int8ub, Int32ub  # type: ignore
from construct import Struct as cStruct
from construct import Array, this


class IdxDataType(IntEnum):
    """Element type codes of the IDX format."""

    UBYTE = 0x08
    BYTE = 0x09
    SHORT = 0x0B
    INT = 0x0C
    FLOAT = 0x0D
    DOUBLE = 0x0E


IMAGES_MAGIC = 0x00000803
"""Magic number of an IDX file holding N×H×W unsigned bytes."""

LABELS_MAGIC = 0x00000801
"""Magic number of an IDX file holding N unsigned bytes."""

IDX_MAGIC_LAYOUT = cStruct(
    "zero" / Const(b"\x00\x00"),
    "dtype" / Int8ub,
    "ndim" / Int8ub,
)

IDX_HEADER_LAYOUT = cStruct(
    "zero" / Const(b"\x00\x00"),
    "dtype" / Int8ub,
    "ndim" / Int8ub,
    "dims" / Array(this.ndim, Int32ub),
)

CIFAR_RECORD_LAYOUT = cStruct(
    "label" / Int8ub,
    "pixels" / Bytes(3 * 32 * 32),
)
"""One CIFAR binary batch record: a label byte followed by 3072 channel-major pixel bytes."""

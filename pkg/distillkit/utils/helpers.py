"""Helper functions."""
from hashlib import sha256
from typing import Dict, Iterable, Union

import torch
from base58 import b58encode

from distillkit.types import Digest

STREAM_NAMES = ("init", "network", "batch", "augment", "label")
"""Named random streams every run owns."""


def digest(*chunks: Union[bytes, str, torch.Tensor]) -> Digest:
    """Base58 sha256 digest of byte chunks, strings or tensors.

    >>> digest(b"distillkit") == digest("distillkit")
    True
    >>> digest(b"distillkit") == digest(b"distillkit", b"")
    True
    """
    hasher = sha256()
    for chunk in chunks:
        if isinstance(chunk, torch.Tensor):
            hasher.update(tensor_bytes(chunk))
        elif isinstance(chunk, str):
            hasher.update(chunk.encode("utf-8"))
        else:
            hasher.update(chunk)
    return Digest(b58encode(hasher.digest()).decode("utf-8"))


def tensor_bytes(tensor: torch.Tensor) -> bytes:
    """Raw bytes of a tensor in its own dtype, C order."""
    return tensor.detach().cpu().contiguous().numpy().tobytes()


def stream_seed(seed: int, name: str) -> int:
    """Derive the 63-bit seed of a named stream from the root seed.

    >>> stream_seed(0, "init") == stream_seed(0, "init")
    True
    >>> stream_seed(0, "init") == stream_seed(0, "network")
    False
    """
    return int.from_bytes(sha256(f"{seed}:{name}".encode("utf-8")).digest()[:8], byteorder="little") >> 1


def make_generator(seed: int, name: str = "init") -> torch.Generator:
    """CPU generator seeded from a named stream."""
    generator = torch.Generator()
    generator.manual_seed(stream_seed(seed, name))
    return generator


class RngStreams:
    """Named random streams derived from one root seed.

    Consuming one stream never perturbs another.
    """

    def __init__(self, seed: int, names: Iterable[str] = STREAM_NAMES) -> None:
        """Init RngStreams."""
        self.seed = seed
        self._streams: Dict[str, torch.Generator] = {name: make_generator(seed, name) for name in names}

    def __getitem__(self, name: str) -> torch.Generator:
        """Generator of the named stream."""
        return self._streams[name]

    def draw_seed(self, name: str) -> int:
        """Draw a fresh 63-bit seed from the named stream."""
        return int(torch.randint(0, 2 ** 62, (1,), generator=self._streams[name]).item())

    def get_state(self) -> Dict[str, torch.Tensor]:
        """Snapshot every stream state."""
        return {name: generator.get_state() for name, generator in self._streams.items()}

    def set_state(self, state: Dict[str, torch.Tensor]) -> None:
        """Restore stream states captured with :meth:`get_state`."""
        for name, value in state.items():
            self._streams[name].set_state(value)

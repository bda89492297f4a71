"""Network fetching: fresh draws, a snapshot cache, or teacher checkpoints."""
from __future__ import annotations

import logging
from typing import Any, Dict, List, Optional

import torch

from distillkit.errors import ArgumentError, MissingArtifactError

from .model import ArchDescriptor, ModelState, NetworkSource, build_model
from .trajectory import TrajectoryStore


class NetworkPool:
    """Mutable cache of networks used by one distillation run.

    ``snapshot-cache`` admits fresh networks until ``pool_size`` members exist, then samples
    members uniformly; :meth:`update` stores a trained network back in the slot it was fetched
    from. Every ``refresh_every`` fetches the oldest member is replaced by a fresh network.
    Single writer only.
    """

    logger = logging.getLogger("distillkit.nnkit.NetworkPool")

    def __init__(
        self,
        arch: ArchDescriptor,
        source: NetworkSource,
        generator: Optional[torch.Generator] = None,
        store: Optional[TrajectoryStore] = None,
        dtype: Optional[torch.dtype] = None,
    ) -> None:
        """Init NetworkPool."""
        source.validate()
        if source.kind == "teacher-checkpoint" and store is None:
            raise MissingArtifactError("trajectory store")
        self.arch = arch
        self.source = source
        self.store = store
        self.dtype = dtype
        self.generator = generator or torch.Generator().manual_seed(source.seed)
        self.members: List[ModelState] = []
        self.fetches = 0
        self.last_index: Optional[int] = None

    def __len__(self) -> int:
        """Number of cached networks."""
        return len(self.members)

    def fresh(self) -> ModelState:
        """A newly initialized network seeded from the pool generator."""
        seed = int(torch.randint(0, 2 ** 62, (1,), generator=self.generator).item())
        return build_model(self.arch, self.source, seed=seed, dtype=self.dtype)

    def fetch(self) -> ModelState:
        """Next network per the source kind."""
        self.fetches += 1
        if self.source.kind == "fresh-random":
            return self.fresh()
        if self.source.kind == "teacher-checkpoint":
            return self._fetch_teacher()
        refresh = self.source.refresh_every
        if refresh and self.members and self.fetches % refresh == 0:
            self.members.pop(0)
            self.members.append(self.fresh())
            self.logger.debug("Refreshed oldest pool member at fetch %d", self.fetches)
        if len(self.members) < self.source.pool_size:
            self.members.append(self.fresh())
            self.last_index = len(self.members) - 1
        else:
            self.last_index = int(torch.randint(len(self.members), (1,), generator=self.generator).item())
        return self.members[self.last_index]

    def _fetch_teacher(self) -> ModelState:
        assert self.store is not None
        trajectory = self.store.sample(self.generator)
        low, high = self.source.epoch_range
        high = min(high, len(trajectory) - 1)
        if low > high:
            raise ArgumentError(f"epoch_range {self.source.epoch_range} lies outside a {len(trajectory)}-checkpoint trajectory")
        position = int(torch.randint(low, high + 1, (1,), generator=self.generator).item())
        model = trajectory.model(position)
        return model._replace(params=model.params.to(self.dtype or torch.get_default_dtype()))

    def update(self, model: ModelState) -> None:
        """Cache a trained network in the slot of the last fetch (snapshot-cache only)."""
        if self.source.kind == "snapshot-cache" and self.last_index is not None:
            self.members[self.last_index] = model.detach()

    def get_state(self) -> Dict[str, Any]:
        """Snapshot of the pool for engine checkpoints."""
        return {
            "members": [member.params.clone() for member in self.members],
            "fetches": self.fetches,
            "last_index": self.last_index,
            "generator": self.generator.get_state(),
        }

    def set_state(self, state: Dict[str, Any]) -> None:
        """Restore a snapshot taken with :meth:`get_state`."""
        template = build_model(self.arch, self.source, dtype=self.dtype)
        self.members = [template.with_params(params) for params in state["members"]]
        self.fetches = state["fetches"]
        self.last_index = state["last_index"]
        self.generator.set_state(state["generator"])


def fetch_network(source: NetworkSource, pool: NetworkPool) -> ModelState:
    """Fetch the next network of ``pool``, which must have been built for ``source``."""
    if pool.source != source:
        raise ArgumentError("network source does not match the pool it is fetched from")
    return pool.fetch()

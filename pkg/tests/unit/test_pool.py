"""Unit tests for distillkit.nnkit.pool."""
import pytest
import torch

from distillkit.errors import ArgumentError, MissingArtifactError
from distillkit.nnkit.model import NetworkSource
from distillkit.nnkit.pool import NetworkPool, fetch_network


def test_fresh_random_draws_new_networks(tiny_mlp):
    """Test every fresh fetch is a new network."""
    pool = NetworkPool(tiny_mlp, NetworkSource(), generator=torch.Generator().manual_seed(0))
    first, second = pool.fetch(), pool.fetch()
    assert not torch.equal(first.params, second.params)
    assert len(pool) == 0


def test_snapshot_cache_admits_then_samples(tiny_mlp):
    """Test the cache fills up to pool_size and then reuses members."""
    source = NetworkSource(kind="snapshot-cache", pool_size=2)
    pool = NetworkPool(tiny_mlp, source, generator=torch.Generator().manual_seed(0))
    pool.fetch()
    pool.fetch()
    assert len(pool) == 2
    for _ in range(5):
        model = pool.fetch()
        assert any(torch.equal(model.params, member.params) for member in pool.members)
    assert len(pool) == 2


def test_snapshot_cache_update_replaces_slot(tiny_mlp):
    """Test a trained network is stored back in the slot it came from."""
    pool = NetworkPool(tiny_mlp, NetworkSource(kind="snapshot-cache", pool_size=1))
    model = pool.fetch()
    trained = model.with_params(model.params + 1.0)
    pool.update(trained)
    assert torch.equal(pool.fetch().params, trained.params)


def test_refresh_replaces_oldest(tiny_mlp):
    """Test the oldest member is replaced every refresh_every fetches."""
    pool = NetworkPool(tiny_mlp, NetworkSource(kind="snapshot-cache", pool_size=1, refresh_every=3))
    original = pool.fetch().params.clone()
    pool.fetch()
    refreshed = pool.fetch()
    assert not torch.equal(refreshed.params, original)


def test_teacher_checkpoint_within_epoch_range(trajectory_store, tiny_mlp):
    """Test teacher starts are drawn from the configured checkpoint window."""
    source = NetworkSource(kind="teacher-checkpoint", epoch_range=(1, 2))
    pool = NetworkPool(tiny_mlp, source, generator=torch.Generator().manual_seed(0), store=trajectory_store)
    allowed = [params for trajectory in trajectory_store.load_all() for _, params in trajectory.checkpoints[1:3]]
    for _ in range(6):
        model = fetch_network(source, pool)
        assert any(torch.equal(model.params, params) for params in allowed)
    with pytest.raises(ArgumentError):
        fetch_network(NetworkSource(), pool)


def test_teacher_source_needs_store(tiny_mlp):
    """Test teacher checkpoints without a store are rejected."""
    with pytest.raises(MissingArtifactError):
        NetworkPool(tiny_mlp, NetworkSource(kind="teacher-checkpoint"))


def test_pool_state_round_trip(tiny_mlp):
    """Test a restored pool continues with the same draws."""
    source = NetworkSource(kind="snapshot-cache", pool_size=3)
    pool = NetworkPool(tiny_mlp, source, generator=torch.Generator().manual_seed(2))
    pool.fetch()
    state = pool.get_state()
    expected = [pool.fetch().params for _ in range(4)]
    restored = NetworkPool(tiny_mlp, source, generator=torch.Generator())
    restored.set_state(state)
    assert all(torch.equal(a, restored.fetch().params) for a in expected)

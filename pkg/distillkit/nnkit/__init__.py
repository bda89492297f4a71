"""Differentiable model kit: functional networks, training, trajectories and network pools."""
from .model import (  # noqa: F401
    ArchDescriptor,
    LayerSpec,
    ModelState,
    NetworkSource,
    build_model,
    embed,
    forward,
    layer_map,
    model_loss,
    training_loss,
)
from .pool import NetworkPool, fetch_network  # noqa: F401
from .train import TrainConfig, Trajectory, descend, train_steps, unroll  # noqa: F401
from .trajectory import TrajectoryStore, record_teachers  # noqa: F401

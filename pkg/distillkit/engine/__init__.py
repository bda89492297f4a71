"""The distillation engine: configuration, presets and the outer loop."""
from .config import PRESETS, DistillConfig, preset, support_matrix  # noqa: F401
from .runner import DistillRun, distill  # noqa: F401

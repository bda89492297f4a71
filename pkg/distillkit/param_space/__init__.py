"""Synthetic-data parameterizations, siamese augmentation and artifact files."""
from .artifact import load_artifact, save_artifact  # noqa: F401
from .augment import DSAConfig, DSAParams, draw_params, dsa_apply  # noqa: F401
from .synthetic import (  # noqa: F401
    BudgetSummary,
    ParamConfig,
    SyntheticDataset,
    budget_summary,
    build_synthetic,
    float_budget,
    materialize,
)

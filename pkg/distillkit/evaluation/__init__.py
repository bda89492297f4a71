"""Evaluation of synthetic datasets: accuracy reports, baselines, transfer and profiling."""
from .harness import (  # noqa: F401
    EvalConfig,
    EvalReport,
    baseline,
    cross_arch,
    train_and_test,
    write_cross_arch_csv,
    write_performance_csv,
)
from .profiler import MemoryMeter, Profile, profile, write_profile_csv  # noqa: F401

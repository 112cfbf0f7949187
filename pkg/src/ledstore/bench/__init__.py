from .runner import (
    BenchReport,
    breakdown_report,
    emit_report,
    run_experiment,
    sweep_dataset_size,
    sweep_working_set,
)
from .workload import WorkloadConfig, gen_workload, shadow_replay

__all__ = [
    "BenchReport",
    "WorkloadConfig",
    "breakdown_report",
    "emit_report",
    "gen_workload",
    "run_experiment",
    "shadow_replay",
    "sweep_dataset_size",
    "sweep_working_set",
]

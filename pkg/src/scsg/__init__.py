"""Stochastically controlled stochastic gradient (SCSG) with geometric inner loops."""

from .analysis import BoundReport, bound_pl, bound_smooth, expected_cost
from .optimizer import (
    EpochSchedule,
    RunTrace,
    ScsgConfig,
    constant_schedule,
    run_scsg,
    run_sgd,
    run_svrg,
    schedule_version1,
    schedule_version2,
    schedule_version3,
)
from .problems import IfoCounter, Oracle, full_gradient, batch_gradient
from .sampling import RandomStream, derive_stream, sample_geometric, sample_subset, sample_weighted_index

__all__ = [
    "BoundReport",
    "EpochSchedule",
    "IfoCounter",
    "Oracle",
    "RandomStream",
    "RunTrace",
    "ScsgConfig",
    "batch_gradient",
    "bound_pl",
    "bound_smooth",
    "constant_schedule",
    "derive_stream",
    "expected_cost",
    "full_gradient",
    "run_scsg",
    "run_sgd",
    "run_svrg",
    "sample_geometric",
    "sample_subset",
    "sample_weighted_index",
    "schedule_version1",
    "schedule_version2",
    "schedule_version3",
]

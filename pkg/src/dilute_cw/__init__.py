"""Exact, Monte Carlo and asymptotic tools for the Curie-Weiss model on diluted random graphs."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    CapExceeded,
    ModelParams,
    SpinConfig,
    TwoGroupPartition,
    WeightedLaw,
    bg_log_weight,
    cw_exact_magnetization_law,
    cw_exact_two_group_law,
    cw_log_weight,
    enumerate_pushforward,
    group_sums,
    magnetization,
    overlap,
    z_cw,
)
from .graphs import GraphSample, ReplicaPlan, derive_replica_seed, sample_graph  # noqa: E402

__all__ = [
    "CapExceeded",
    "GraphSample",
    "ModelParams",
    "ReplicaPlan",
    "SpinConfig",
    "TwoGroupPartition",
    "WeightedLaw",
    "bg_log_weight",
    "cw_exact_magnetization_law",
    "cw_exact_two_group_law",
    "cw_log_weight",
    "derive_replica_seed",
    "enumerate_pushforward",
    "group_sums",
    "magnetization",
    "overlap",
    "sample_graph",
    "z_cw",
]

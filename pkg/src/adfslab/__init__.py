"""Accelerated decentralized stochastic optimization for finite sums."""

__version__ = "0.1.0"

from .adfs import (SamplingPlan, SparseADFS, adfs_step_dense, adfs_step_sparse, run_adfs,
                   run_ns_adfs, select_parameters)
from .apcg import make_schedule_cvx, make_schedule_sc, run_apcg
from .estimator import ADFSClassifier, ADFSRegressor
from .graph import augment, build_topology, load_graph, spectral_quantities
from .problem import (ProblemSpec, load_libsvm, prox_conjugate_tilde, prox_loss_1d,
                      solve_reference, synth_classification, synth_regression)
from .schedule import estimate_throughput, sample_schedule, simulate_time

__all__ = [
    "ADFSClassifier", "ADFSRegressor", "ProblemSpec", "SamplingPlan", "SparseADFS",
    "adfs_step_dense", "adfs_step_sparse", "augment", "build_topology", "estimate_throughput",
    "load_graph", "load_libsvm", "make_schedule_cvx", "make_schedule_sc", "prox_conjugate_tilde",
    "prox_loss_1d", "run_adfs", "run_apcg", "run_ns_adfs", "sample_schedule",
    "select_parameters", "simulate_time", "solve_reference", "spectral_quantities",
    "synth_classification", "synth_regression",
]

"""Near-optimal model sets across model classes via level-set estimation."""

__version__ = "0.1.0"

from .space import (CandidateSet, CashSpace, ConfigPoint, ModelClass, ParamSpec, SpaceError,
                    ThresholdSpec, ground_truth_set, sample_candidates)
from .gp import ClassKernel, SurrogateState, block_kernel, fit_hyperparams, matern52
from .lse import (ALGORITHMS, EpochState, Partition, RunConfig, RunRecord, delta, epsilon_accurate,
                  predicted_set, run_algorithm, update_partition)
from .capacity import CapacityResult, PredictionMatrix, brute_force_capacity, capacity_objective, solve_capacity
from .importance import Dataset, FIVector, Predictor, VIC, fit_learner, generate_st, pfi, pfi_vector, scale_fi, vic
from .bench import ExperimentConfig, Landscape, default_config, f1, make_landscape, run_experiment

__all__ = [
    "ALGORITHMS", "CandidateSet", "CapacityResult", "CashSpace", "ClassKernel", "ConfigPoint", "Dataset",
    "EpochState", "ExperimentConfig", "FIVector", "Landscape", "ModelClass", "ParamSpec", "Partition",
    "PredictionMatrix", "Predictor", "RunConfig", "RunRecord", "SpaceError", "SurrogateState",
    "ThresholdSpec", "VIC", "block_kernel", "brute_force_capacity", "capacity_objective", "default_config",
    "delta", "epsilon_accurate", "f1", "fit_hyperparams", "fit_learner", "generate_st", "ground_truth_set",
    "make_landscape", "matern52", "pfi", "pfi_vector", "predicted_set", "run_algorithm", "run_experiment",
    "sample_candidates", "scale_fi", "solve_capacity", "update_partition", "vic",
]

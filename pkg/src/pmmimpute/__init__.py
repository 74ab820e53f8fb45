"""Bayesian multiple imputation for the MMRM and for control-based and
delta-adjusted pattern-mixture models."""

__version__ = "0.1.0"

from .analyze import fit_mle_em, rubin_pool, run_pipeline
from .data import SimSpec, TrialDataset, index_patterns, load_csv, simulate_trial, write_csv
from .impute import PmmMethod
from .params import MarginalParams, SequentialParams
from .prior import PriorSpec, build_augmented, jeffreys, seq_prior_params
from .sampler import ChainConfig, run_chain

__all__ = [
    "ChainConfig", "MarginalParams", "PmmMethod", "PriorSpec", "SequentialParams",
    "SimSpec", "TrialDataset", "build_augmented", "fit_mle_em", "index_patterns",
    "jeffreys", "load_csv", "rubin_pool", "run_chain", "run_pipeline",
    "seq_prior_params", "simulate_trial", "write_csv",
]

"""Dynamic Bayesian source estimation on graph-structured state spaces."""

__version__ = "0.1.0"

from .em import EmConfig, dmap_em, e_step, m_step, smap_em, innovations_log_likelihood
from .estimation import kalman_filter, fixed_interval_smoother, lag_covariance, smooth, penalized_ls_solve
from .model import (ModelSpec, SourceGraph, FeedbackMatrix, NoiseModel, PriorSpec,
                    build_feedback_matrix, build_state_noise_cov, prior_log_density,
                    steady_state_covariance, perturbation_bound_check)
from .static import MneSpec, mne_estimate
from .evaluation import evaluate, compare_methods

__all__ = [
    "EmConfig", "dmap_em", "e_step", "m_step", "smap_em", "innovations_log_likelihood",
    "kalman_filter", "fixed_interval_smoother", "lag_covariance", "smooth", "penalized_ls_solve",
    "ModelSpec", "SourceGraph", "FeedbackMatrix", "NoiseModel", "PriorSpec",
    "build_feedback_matrix", "build_state_noise_cov", "prior_log_density",
    "steady_state_covariance", "perturbation_bound_check",
    "MneSpec", "mne_estimate", "evaluate", "compare_methods",
]

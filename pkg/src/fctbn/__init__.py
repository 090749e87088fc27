"""Functional continuous-time Bayesian networks over binary conditions.

Flip intensities are log-linear in per-subject covariates; structure and
parameters are learned jointly by adaptive group regularization, and
time-indexed risk queries are answered through the joint-state matrix
exponential, with an exact simulator as the Monte-Carlo oracle.  Rates are
per month.
"""

__version__ = "0.1.0"

from .evaluate import AucCell, evaluate_score_table, holdout_evaluate, roc_auc
from .inference import (JointGenerator, RiskCurves, amalgamate,
                        emergence_trajectory, interval_distribution,
                        marginal_on_probabilities, predict_onset,
                        transient_distribution)
from .learn import (CvResult, FitOptions, FitResult, PenaltyConfig,
                    adaptive_weights, cross_validate, fista_fit, fit_gmm,
                    gmm_early_stop, group_prox, penalized_objective,
                    regularization_path)
from .likelihood import (Segment, SufficientStats, decompose_segments,
                         gradient, log_likelihood, mle_intensities,
                         sufficient_stats)
from .model import (CoefficientTensor, Graph, ModelSpec, flip_rate_table,
                    intensity, model_from_dict, model_from_json, model_to_dict,
                    model_to_json, structure_from_coefficients)
from .simulate import (Cohort, CovariateSampler, Trajectory,
                       empirical_state_distribution, joint_index,
                       sample_trajectory, simulate_cohort)

__all__ = [
    "AucCell", "CoefficientTensor", "Cohort", "CovariateSampler", "CvResult",
    "FitOptions", "FitResult", "Graph", "JointGenerator", "ModelSpec",
    "PenaltyConfig", "RiskCurves", "Segment", "SufficientStats", "Trajectory",
    "adaptive_weights", "amalgamate", "cross_validate", "decompose_segments",
    "emergence_trajectory", "empirical_state_distribution",
    "evaluate_score_table", "fista_fit", "fit_gmm", "flip_rate_table",
    "gmm_early_stop", "gradient", "group_prox", "holdout_evaluate",
    "intensity", "interval_distribution", "joint_index", "log_likelihood",
    "marginal_on_probabilities", "mle_intensities", "model_from_dict",
    "model_from_json", "model_to_dict", "model_to_json", "penalized_objective",
    "predict_onset", "regularization_path", "roc_auc", "sample_trajectory",
    "simulate_cohort", "structure_from_coefficients", "sufficient_stats",
    "transient_distribution",
]

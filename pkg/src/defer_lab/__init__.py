"""Learning-to-defer surrogate losses, bounded probability estimators and
numerical checks of their consistency properties."""

from .dataset import Dataset, LabeledSample
from .errors import (BoundaryError, ConfigError, ConvergenceError, DatasetError, DeferLabError,
                     DivergedError, EstimatorOverflowError, InvalidDimensionError,
                     InvalidInputError)
from .estimators import (ProbEstimate, asym_softmax, asym_softmax_multi, clip_estimate,
                         estimate_ova, estimate_sova, estimate_ssm, softmax)
from .metrics import EvalReport, budgeted_error, build_report, coverage, ece, system_error
from .model import ScorerModel, TrainConfig, evaluate, forward, init_model, train
from .oracle import (ConditionalPoint, Defer, ExpertSpec, Predict, SyntheticSpec, bayes_decision,
                     check_regret_bound, closed_form_minimizer, conditional_risk, decide,
                     deferral_loss, minimize_conditional, sample_synthetic)
from .surrogates import LossKind, MulticlassLoss, grad, loss, loss_general, losses

__version__ = "0.1.0"

__all__ = [
    "BoundaryError", "ConditionalPoint", "ConfigError", "ConvergenceError", "Dataset",
    "DatasetError", "Defer", "DeferLabError", "DivergedError", "EstimatorOverflowError",
    "EvalReport", "ExpertSpec", "InvalidDimensionError", "InvalidInputError", "LabeledSample",
    "LossKind", "MulticlassLoss", "Predict", "ProbEstimate", "ScorerModel", "SyntheticSpec",
    "TrainConfig", "asym_softmax", "asym_softmax_multi", "bayes_decision", "budgeted_error",
    "build_report", "check_regret_bound", "clip_estimate", "closed_form_minimizer",
    "conditional_risk", "coverage", "decide", "deferral_loss", "ece", "estimate_ova",
    "estimate_sova", "estimate_ssm", "evaluate", "forward", "grad", "init_model", "loss",
    "loss_general", "losses", "minimize_conditional", "sample_synthetic", "softmax",
    "system_error", "train",
]

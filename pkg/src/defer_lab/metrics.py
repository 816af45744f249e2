"""Evaluation statistics: system error, coverage, ECE of expert-accuracy
estimates, budgeted error and accuracy histograms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .estimators import ProbEstimate
from .oracle import DecisionArray, deferral_losses

DEFAULT_BUDGETS = (0.1, 0.2, 0.3)
DEFAULT_ECE_BINS = 15


def system_error(decisions, labels, experts) -> float:
    """Sample mean of the 0-1-deferral loss."""
    if len(labels) == 0:
        raise InvalidInputError("empty input")
    return float(np.mean(deferral_losses(decisions, labels, experts)))


def coverage(decisions) -> float:
    """Fraction of samples the classifier answers itself."""
    d = DecisionArray.from_list(decisions)
    if len(d) == 0:
        raise InvalidInputError("empty input")
    return float(np.mean(~d.defer))


def bin_edges(bins: int) -> np.ndarray:
    # i / bins rather than linspace so that 0.3 prints as 0.3
    return np.arange(bins + 1) / bins


def bin_index(values, bins: int) -> np.ndarray:
    """Equal-width bins on [0, 1], right-inclusive; 0.0 falls in the first bin."""
    idx = np.searchsorted(bin_edges(bins), values, side="left") - 1
    return np.clip(idx, 0, bins - 1)


def ece(confidences, correct, bins: int = DEFAULT_ECE_BINS) -> float:
    """Expected calibration error ``sum_i b_i |p_i - c_i|`` over equal-width bins.

    Args:
        confidences: values in [0, 1]; clip unbounded estimates before calling.
        correct: matching booleans.
        bins: number of bins.
    """
    conf = np.asarray(confidences, dtype=np.float64).reshape(-1)
    hit = np.asarray(correct, dtype=np.float64).reshape(-1)
    if conf.shape != hit.shape:
        raise InvalidInputError("confidences and correct must have equal length")
    if conf.size == 0:
        raise InvalidInputError("empty input")
    if np.any(np.isnan(conf)) or np.any(conf < 0) or np.any(conf > 1):
        raise InvalidInputError("confidences must lie in [0, 1]")
    idx = bin_index(conf, bins)
    total = 0.0
    for b in range(bins):
        in_bin = idx == b
        count = int(in_bin.sum())
        if count:
            total += count / conf.size * abs(conf[in_bin].mean() - hit[in_bin].mean())
    return float(total)


def _class_predictions(estimates) -> np.ndarray:
    probs = estimates.class_probs if isinstance(estimates, ProbEstimate) else estimates
    return np.argmax(np.atleast_2d(probs), axis=1)


def budgeted_error(decisions, estimates: ProbEstimate, labels, experts, budget: float) -> float:
    """System error after capping the deferral fraction at ``budget``.

    While too many samples are deferred, the deferred sample with the lowest
    estimated accuracy of its chosen expert (smallest index on ties) is handed
    back to the classifier's argmax prediction.
    """
    if not 0.0 <= budget <= 1.0:
        raise InvalidInputError("budget must lie in [0, 1]")
    d = DecisionArray.from_list(decisions)
    n = len(d)
    allowed = math.floor(budget * n + 1e-9)
    deferred = np.flatnonzero(d.defer)
    excess = deferred.size - allowed
    if excess > 0:
        acc = np.atleast_2d(estimates.expert_acc)[deferred, d.index[deferred]]
        order = deferred[np.lexsort((deferred, acc))]
        undo = order[:excess]
        defer = d.defer.copy()
        index = d.index.copy()
        defer[undo] = False
        index[undo] = _class_predictions(estimates)[undo]
        d = DecisionArray(defer, index)
    return system_error(d, labels, experts)


@dataclass
class Histogram:
    edges: np.ndarray
    count_estimated: np.ndarray
    count_true: np.ndarray | None = None

    def rows(self):
        """``(bin_lo, bin_hi, count_estimated, count_true)`` per bin; count_true is
        empty when no ground truth was supplied."""
        for i in range(self.count_estimated.shape[0]):
            true = "" if self.count_true is None else int(self.count_true[i])
            yield float(self.edges[i]), float(self.edges[i + 1]), int(self.count_estimated[i]), true

    def to_dict(self) -> dict:
        return {
            "edges": self.edges.tolist(),
            "count_estimated": self.count_estimated.tolist(),
            "count_true": None if self.count_true is None else self.count_true.tolist(),
        }


def accuracy_histograms(estimated, truth=None, bins: int = 10) -> Histogram:
    """Binned counts of estimated and (optionally) true expert accuracies."""
    def counts(values):
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        return np.bincount(bin_index(values, bins), minlength=bins)

    return Histogram(bin_edges(bins), counts(estimated),
                     None if truth is None else counts(truth))


@dataclass
class EvalReport:
    error: float
    coverage: float
    ece: float
    budgeted_errors: dict = field(default_factory=dict)
    histogram: Histogram | None = None

    def to_dict(self) -> dict:
        return {
            "error": self.error,
            "coverage": self.coverage,
            "ece": self.ece,
            "budgeted_errors": {f"{b:g}": v for b, v in self.budgeted_errors.items()},
            "histogram": None if self.histogram is None else self.histogram.to_dict(),
        }


def expert_calibration_pairs(estimates: ProbEstimate, labels, experts):
    """Flattened (estimated accuracy, expert was right) over every sample and expert."""
    experts = np.asarray(experts)
    if experts.ndim == 1:
        experts = experts[:, None]
    right = experts == np.asarray(labels)[:, None]
    return np.atleast_2d(estimates.expert_acc).reshape(-1), right.reshape(-1)


def build_report(decisions, estimates: ProbEstimate, labels, experts,
                 budgets=DEFAULT_BUDGETS, ece_bins: int = DEFAULT_ECE_BINS,
                 true_expert_acc=None, hist_bins: int = 10) -> EvalReport:
    conf, right = expert_calibration_pairs(estimates, labels, experts)
    return EvalReport(
        error=system_error(decisions, labels, experts),
        coverage=coverage(decisions),
        ece=ece(conf, right, ece_bins),
        budgeted_errors={float(b): budgeted_error(decisions, estimates, labels, experts, b)
                         for b in budgets},
        histogram=accuracy_histograms(conf, true_expert_acc, hist_bins),
    )

"""Softmax variants and the probability estimators built on them.

Score arrays have shape ``(..., K + M)``: the first ``K`` entries score the
classes, the remaining ``M`` entries score deferral to each expert. Every
function here is vectorised over the leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import EstimatorOverflowError, InvalidDimensionError, InvalidInputError

SIMPLEX_TOL = 1e-9


def check_scores(u, n_classes: int, n_experts: int | None = None) -> np.ndarray:
    """Validate a score array and return it as float64.

    ``n_experts=None`` accepts any expert count of at least one.
    """
    u = np.asarray(u, dtype=np.float64)
    if n_classes < 2:
        raise InvalidDimensionError(f"need at least 2 classes, got K={n_classes}")
    if u.ndim == 0:
        raise InvalidDimensionError("scores must be at least one-dimensional")
    width = u.shape[-1]
    if n_experts is None:
        if width < n_classes + 1:
            raise InvalidDimensionError(
                f"score length {width} leaves no expert dimension for K={n_classes}"
            )
    elif width != n_classes + n_experts:
        raise InvalidDimensionError(
            f"score length {width} != K + M = {n_classes} + {n_experts}"
        )
    if not np.all(np.isfinite(u)):
        raise InvalidInputError("scores must be finite")
    return u


@dataclass(frozen=True)
class ProbEstimate:
    """Estimated class posteriors and per-expert accuracies.

    ``bounded`` records whether the producing estimator guarantees its range
    is the simplex times ``[0, 1]^M``. ``raw`` holds per-dimension sigmoids for
    one-vs-all estimators and is ``None`` otherwise.
    """

    class_probs: np.ndarray
    expert_acc: np.ndarray
    bounded: bool
    raw: np.ndarray | None = None

    def __post_init__(self):
        cp = np.asarray(self.class_probs, dtype=np.float64)
        ea = np.asarray(self.expert_acc, dtype=np.float64)
        if np.any(cp < 0) or np.any(np.abs(cp.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
            raise InvalidInputError("class_probs must lie on the probability simplex")
        if np.any(np.isnan(ea)) or np.any(ea < 0):
            raise InvalidInputError("expert_acc must be non-negative")
        if self.bounded and np.any(ea > 1):
            raise InvalidInputError("bounded estimate with expert_acc > 1")
        object.__setattr__(self, "class_probs", cp)
        object.__setattr__(self, "expert_acc", ea)

    @property
    def n_classes(self) -> int:
        return self.class_probs.shape[-1]

    @property
    def n_experts(self) -> int:
        return self.expert_acc.shape[-1]

    def as_vector(self) -> np.ndarray:
        """Concatenate class and expert parts into one ``(..., K + M)`` array."""
        return np.concatenate([self.class_probs, self.expert_acc], axis=-1)


def logsumexp(a, axis=-1, keepdims=False):
    """Max-shifted log-sum-exp; all ``-inf`` slices give ``-inf``."""
    a = np.asarray(a, dtype=np.float64)
    top = np.max(a, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - top), axis=axis, keepdims=True)) + top
    return out if keepdims else np.squeeze(out, axis=axis)


def softmax(u) -> np.ndarray:
    """Max-shifted softmax over the last axis."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 0 or u.shape[-1] < 2:
        raise InvalidDimensionError("softmax needs a vector of length >= 2")
    if not np.all(np.isfinite(u)):
        raise InvalidInputError("softmax input must be finite")
    z = np.exp(u - u.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def log_nonmax_mass(class_scores: np.ndarray) -> np.ndarray:
    """``log(sum_c exp(u_c) - max_c exp(u_c))`` without the subtraction.

    The largest entry (first one on ties) is dropped and the rest are
    log-sum-exp'd, so no cancellation happens.
    """
    top = np.argmax(class_scores, axis=-1)
    mask = np.zeros(class_scores.shape, dtype=bool)
    np.put_along_axis(mask, top[..., None], True, axis=-1)
    rest = np.where(mask, -np.inf, class_scores)
    return logsumexp(rest, axis=-1)


def expert_logits(u: np.ndarray, n_classes: int) -> np.ndarray:
    """Logit of each asymmetric-softmax expert output, shape ``(..., M)``."""
    return u[..., n_classes:] - log_nonmax_mass(u[..., :n_classes])[..., None]


def asym_softmax_multi(u, n_classes: int) -> ProbEstimate:
    """Asymmetric softmax with one or more expert dimensions.

    Each expert output is normalised on its own against the non-maximal
    class mass, ``exp(u_e) / (exp(u_e) + sum_c exp(u_c) - max_c exp(u_c))``.
    """
    u = check_scores(u, n_classes)
    probs = softmax(u[..., :n_classes])
    return ProbEstimate(probs, expit(expert_logits(u, n_classes)), bounded=True)


def asym_log_softmax(u, n_classes: int) -> np.ndarray:
    """Logarithm of every asymmetric-softmax output, shape ``(..., K + M)``.

    Outputs that round to 1.0 in linear space stay distinct here: each entry
    is ``-log1p(exp(log_nonmax_mass - u_i))`` for the top class and the
    experts, so ordering follows ``u`` exactly.
    """
    u = check_scores(u, n_classes)
    cls = u[..., :n_classes]
    rest = log_nonmax_mass(cls)[..., None]
    top = np.max(cls, axis=-1, keepdims=True)
    out = np.empty_like(u)
    # log softmax_c = (u_c - top) - log1p(exp(rest - top))
    out[..., :n_classes] = (cls - top) - np.log1p(np.exp(rest - top))
    out[..., n_classes:] = -np.log1p(np.exp(rest - u[..., n_classes:]))
    return out


def asym_softmax(u, n_classes: int) -> ProbEstimate:
    """Single-expert asymmetric softmax; output lies in the simplex times [0, 1]."""
    check_scores(u, n_classes, 1)
    return asym_softmax_multi(u, n_classes)


def estimate_ssm(u, n_classes: int, on_overflow: str = "raise") -> ProbEstimate:
    """Unbounded estimator paired with the symmetric softmax loss.

    Every coordinate of the ordinary softmax is divided by one minus the
    deferral coordinate. The expert part can exceed one.

    Args:
        u: scores of length ``K + 1``.
        n_classes: ``K``.
        on_overflow: ``"raise"`` to signal a deferral softmax output of 1.0
            (zero denominator), ``"inf"`` to return ``inf`` there instead.
    """
    u = check_scores(u, n_classes, 1)
    psi = softmax(u)
    degenerate = psi[..., n_classes] >= 1.0
    if np.any(degenerate) and on_overflow == "raise":
        raise EstimatorOverflowError("deferral softmax output is 1; estimator undefined")
    # psi_y / (1 - psi_{K+1}) simplifies to a softmax over the class block, and
    # the expert coordinate to exp(u_{K+1} - logsumexp(class block)).
    with np.errstate(over="ignore"):
        expert = np.exp(u[..., n_classes:] - logsumexp(u[..., :n_classes], axis=-1, keepdims=True))
    expert = np.where(degenerate[..., None], np.inf, expert)
    return ProbEstimate(softmax(u[..., :n_classes]), expert, bounded=False)


def estimate_ova(u, n_classes: int) -> ProbEstimate:
    """Per-dimension logistic estimator of the asymmetric one-vs-all loss.

    ``raw`` keeps the sigmoids of all dimensions; ``class_probs`` is the class
    block renormalised onto the simplex for reporting.
    """
    u = check_scores(u, n_classes)
    raw = expit(u)
    cls = raw[..., :n_classes]
    return ProbEstimate(cls / cls.sum(axis=-1, keepdims=True), raw[..., n_classes:],
                        bounded=True, raw=raw)


def estimate_sova(u, n_classes: int) -> ProbEstimate:
    """Unbounded estimator induced by the symmetric one-vs-all loss.

    The sigmoid of each dimension estimates ``beta / (1 + Pr(M=Y|x))``; undoing
    that scaling gives ``sigma(u_e) / (1 - sigma(u_e)) = exp(u_e)`` for the
    expert, which is unbounded above.
    """
    u = check_scores(u, n_classes, 1)
    raw = expit(u)
    cls = raw[..., :n_classes]
    with np.errstate(over="ignore"):
        expert = np.exp(u[..., n_classes:])
    return ProbEstimate(cls / cls.sum(axis=-1, keepdims=True), expert, bounded=False, raw=raw)


def clip_estimate(e):
    """Clamp expert accuracies into [0, 1].

    Accepts a :class:`ProbEstimate` (class part untouched, result flagged
    bounded) or a bare array of expert accuracies.
    """
    if isinstance(e, ProbEstimate):
        return ProbEstimate(e.class_probs, np.clip(e.expert_acc, 0.0, 1.0), bounded=True, raw=e.raw)
    return np.clip(np.asarray(e, dtype=np.float64), 0.0, 1.0)

"""Ground-truth side of the library.

Synthetic distributions with closed-form posteriors, the Bayes-optimal
deferral rule, the 0-1-deferral loss, exact conditional surrogate risks, their
minimizers, and the pointwise regret-transfer check.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numpy as np

from .dataset import Dataset
from .errors import BoundaryError, ConvergenceError, InvalidDimensionError, InvalidInputError
from .estimators import check_scores, logsumexp, softmax
from .surrogates import LossKind, _loss_and_grad, _prepare


# --------------------------------------------------------------------------
# decisions

@dataclass(frozen=True)
class Predict:
    label: int


@dataclass(frozen=True)
class Defer:
    expert: int = 0


Decision = Union[Predict, Defer]


@dataclass
class DecisionArray:
    """Vectorised decisions: ``defer[i]`` selects the variant and ``index[i]``
    is the predicted class or the consulted expert."""

    defer: np.ndarray
    index: np.ndarray

    def __post_init__(self):
        self.defer = np.asarray(self.defer, dtype=bool).reshape(-1)
        self.index = np.asarray(self.index, dtype=np.int64).reshape(-1)
        if self.defer.shape != self.index.shape:
            raise InvalidInputError("defer and index must have equal length")

    def __len__(self) -> int:
        return self.defer.shape[0]

    def __iter__(self):
        for d, i in zip(self.defer, self.index):
            yield Defer(int(i)) if d else Predict(int(i))

    def __getitem__(self, i) -> Decision:
        return Defer(int(self.index[i])) if self.defer[i] else Predict(int(self.index[i]))

    @classmethod
    def from_list(cls, decisions) -> "DecisionArray":
        if isinstance(decisions, DecisionArray):
            return decisions
        decisions = list(decisions)
        defer = [isinstance(d, Defer) for d in decisions]
        index = [d.expert if isinstance(d, Defer) else d.label for d in decisions]
        return cls(np.array(defer, dtype=bool), np.array(index, dtype=np.int64))


@dataclass(frozen=True)
class ConditionalPoint:
    """True class posterior ``eta`` and expert accuracies ``p`` at one input."""

    eta: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=np.float64).reshape(-1)
        p = np.atleast_1d(np.asarray(self.p, dtype=np.float64)).reshape(-1)
        if eta.shape[0] < 2:
            raise InvalidDimensionError("eta needs at least two classes")
        if np.any(eta < 0) or abs(eta.sum() - 1.0) > 1e-9:
            raise InvalidInputError("eta must lie on the simplex")
        if p.shape[0] < 1 or np.any(p < 0) or np.any(p > 1):
            raise InvalidInputError("expert accuracies must lie in [0, 1]")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "p", p)

    @property
    def n_classes(self) -> int:
        return self.eta.shape[0]

    @property
    def n_experts(self) -> int:
        return self.p.shape[0]


def bayes_decision(c: ConditionalPoint) -> Decision:
    """Defer to the most accurate expert iff it beats the best class posterior.

    Ties go to ``Predict`` and then to the smallest index.
    """
    best_expert = int(np.argmax(c.p))
    if np.max(c.eta) < c.p[best_expert]:
        return Defer(best_expert)
    return Predict(int(np.argmax(c.eta)))


def decide_batch(scores, n_classes: int) -> DecisionArray:
    scores = check_scores(np.atleast_2d(scores), n_classes)
    cls, exp = scores[:, :n_classes], scores[:, n_classes:]
    defer = exp.max(axis=1) > cls.max(axis=1)
    index = np.where(defer, np.argmax(exp, axis=1), np.argmax(cls, axis=1))
    return DecisionArray(defer, index)


def decide(u, n_classes: int) -> Decision:
    """Decision induced by a score vector; deferral needs a strictly larger expert score."""
    return decide_batch(np.asarray(u)[None, :], n_classes)[0]


def deferral_losses(decisions, labels, experts) -> np.ndarray:
    d = DecisionArray.from_list(decisions)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    experts = np.asarray(experts, dtype=np.int64)
    if experts.ndim == 1:
        experts = experts[:, None]
    if len(d) != labels.shape[0] or experts.shape[0] != labels.shape[0]:
        raise InvalidInputError("decisions, labels and experts must have equal length")
    rows = np.arange(labels.shape[0])
    expert_pred = experts[rows, np.where(d.defer, d.index, 0)]
    wrong = np.where(d.defer, expert_pred != labels, d.index != labels)
    return wrong.astype(np.int64)


def deferral_loss(d: Decision, y: int, m) -> int:
    """0-1-deferral loss of one decision."""
    m = np.atleast_1d(m)
    if isinstance(d, Defer):
        return int(m[d.expert] != y)
    return int(d.label != y)


# --------------------------------------------------------------------------
# conditional risk

def _expectation_table(kind, etas, ps, n_classes):
    """Enumerate every (label, expert-correctness pattern) with its probability.

    All shipped losses depend on an expert's prediction only through whether
    it equals the label, so an incorrect expert is represented by the label
    ``(y + 1) % K`` and the expectation is exact.
    """
    n, M = ps.shape
    labels, experts, weights = [], [], []
    for y in range(n_classes):
        for pattern in itertools.product((True, False), repeat=M):
            correct = np.array(pattern)
            w = etas[:, y] * np.prod(np.where(correct, ps, 1.0 - ps), axis=1)
            labels.append(np.full(n, y))
            experts.append(np.where(correct, y, (y + 1) % n_classes) * np.ones((n, M), dtype=np.int64))
            weights.append(w)
    # layout: block b covers rows [b*n, (b+1)*n)
    return np.concatenate(labels), np.concatenate(experts), np.stack(weights)


class _RiskEvaluator:
    """Reusable evaluator of conditional risk (and gradient) for a batch of points."""

    def __init__(self, kind, etas, ps, n_classes):
        self.kind = LossKind(kind)
        self.K = n_classes
        self.n = etas.shape[0]
        self.width = n_classes + ps.shape[1]
        self.labels, self.experts, self.weights = _expectation_table(self.kind, etas, ps, n_classes)
        self.blocks = self.weights.shape[0]
        # validates the label/expert tables once
        _prepare(self.kind, np.zeros((self.labels.shape[0], self.width)),
                 self.labels, self.experts, n_classes)

    def __call__(self, scores, need_grad=True):
        tiled = np.tile(scores, (self.blocks, 1))
        values, grads = _loss_and_grad(self.kind, tiled, self.labels, self.experts, self.K, need_grad)
        risk = np.einsum("bn,bn->n", self.weights, values.reshape(self.blocks, self.n))
        if not need_grad:
            return risk, None
        g = np.einsum("bn,bnd->nd", self.weights, grads.reshape(self.blocks, self.n, self.width))
        return risk, g


def _stack_points(points):
    points = list(points)
    K, M = points[0].n_classes, points[0].n_experts
    if any(c.n_classes != K or c.n_experts != M for c in points):
        raise InvalidDimensionError("all points in a batch must share K and M")
    return np.stack([c.eta for c in points]), np.stack([c.p for c in points]), K


def conditional_risk_and_grad(kind, u, c: ConditionalPoint):
    """Exact conditional surrogate risk at ``u`` and its gradient."""
    u = check_scores(u, c.n_classes, c.n_experts)
    ev = _RiskEvaluator(kind, c.eta[None, :], c.p[None, :], c.n_classes)
    risk, g = ev(u[None, :])
    return float(risk[0]), g[0]


def conditional_risk(kind, u, c: ConditionalPoint) -> float:
    """``sum_y eta_y * E[loss(u, y, m) | y]`` with the expert correct w.p. ``p``."""
    u = check_scores(u, c.n_classes, c.n_experts)
    ev = _RiskEvaluator(kind, c.eta[None, :], c.p[None, :], c.n_classes)
    return float(ev(u[None, :], need_grad=False)[0][0])


def sample_conditional(c: ConditionalPoint, n: int, rng: np.random.Generator):
    """Draw ``n`` (label, expert predictions) pairs from a conditional point.

    A wrong expert picks uniformly among the other ``K - 1`` labels.
    """
    K, M = c.n_classes, c.n_experts
    y = rng.choice(K, size=n, p=c.eta)
    correct = rng.random((n, M)) < c.p
    wrong = (y[:, None] + rng.integers(1, K, size=(n, M))) % K
    return y, np.where(correct, y[:, None], wrong)


def conditional_risk_mc(kind, u, c: ConditionalPoint, n: int = 10**6, seed: int = 0):
    """Monte-Carlo estimate of the conditional risk: ``(mean, standard error)``."""
    from .surrogates import losses

    rng = np.random.default_rng(seed)
    y, m = sample_conditional(c, n, rng)
    u = check_scores(u, c.n_classes, c.n_experts)
    values = losses(kind, np.broadcast_to(u, (n, u.shape[0])), y, m, c.n_classes)
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(n))


# --------------------------------------------------------------------------
# minimizers

def closed_form_minimizer(c: ConditionalPoint) -> np.ndarray:
    """Minimizer of the asymmetric-softmax conditional risk.

    Class scores are ``log eta``; expert ``j`` gets
    ``log(p_j * (1 - max eta) / (1 - p_j))`` so that its asymmetric-softmax
    output equals ``p_j``.
    """
    _check_interior(c)
    top = np.max(c.eta)
    return np.concatenate([np.log(c.eta), np.log(c.p * (1.0 - top) / (1.0 - c.p))])


def _check_interior(c: ConditionalPoint):
    if np.any(c.p <= 0) or np.any(c.p >= 1):
        raise BoundaryError("expert accuracy on the boundary {0, 1}: minimizer diverges")
    if np.any(c.eta <= 0):
        raise BoundaryError("zero class posterior: minimizer diverges")


def _check_kind(kind, M):
    kind = LossKind(kind)
    if not kind.multi_expert and M != 1:
        raise InvalidDimensionError(f"{kind.name} takes exactly one expert")
    return kind


def minimize_conditional_batch(kind, points, step: float = 0.5, max_iter: int = 10_000,
                               tol: float = 1e-6, stop_tol: float = 1e-11):
    """Gradient descent on the conditional risk of many points at once.

    Starts from zero scores and takes fixed steps; iteration stops early once
    every gradient norm is below ``stop_tol``.

    Returns:
        ``(scores, grad_norms)`` with shapes ``(n, K + M)`` and ``(n,)``.

    Raises:
        ConvergenceError: if any final gradient norm is at least ``tol``.
    """
    points = list(points)
    for c in points:
        _check_interior(c)
    etas, ps, K = _stack_points(points)
    kind = _check_kind(kind, ps.shape[1])
    ev = _RiskEvaluator(kind, etas, ps, K)
    u = np.zeros((etas.shape[0], K + ps.shape[1]))
    for _ in range(max_iter):
        _, g = ev(u)
        norms = np.linalg.norm(g, axis=1)
        if norms.max() < stop_tol:
            break
        u -= step * g
    _, g = ev(u)
    norms = np.linalg.norm(g, axis=1)
    if not np.all(np.isfinite(norms)) or norms.max() >= tol:
        bad = int(np.sum(~(norms < tol)))
        raise ConvergenceError(f"{bad} of {len(points)} points not stationary", float(np.nanmax(norms)))
    return u, norms


def minimize_conditional(kind, c: ConditionalPoint, method: str = "auto", **gd_options) -> np.ndarray:
    """Minimizer of the conditional surrogate risk at one point.

    ``method="auto"`` uses the closed form for the asymmetric-softmax kinds
    and gradient descent otherwise; ``"gradient_descent"`` forces the
    numerical route for any kind.
    """
    kind = _check_kind(kind, c.n_experts)
    _check_interior(c)
    if method == "closed_form" or (method == "auto" and kind in (LossKind.ASM, LossKind.ASM_MULTI)):
        if kind not in (LossKind.ASM, LossKind.ASM_MULTI):
            raise InvalidInputError(f"no closed form for {kind.name}")
        return closed_form_minimizer(c)
    if method not in ("auto", "gradient_descent"):
        raise InvalidInputError(f"unknown method {method!r}")
    u, _ = minimize_conditional_batch(kind, [c], **gd_options)
    return u[0]


def canonical_shift(u, n_classes: int) -> np.ndarray:
    """Shift scores so the class block has log-sum-exp zero.

    The asymmetric softmax is invariant to adding a constant to every score,
    so this picks one representative per equivalence class.
    """
    u = np.asarray(u, dtype=np.float64)
    return u - logsumexp(u[..., :n_classes], axis=-1, keepdims=True)


# --------------------------------------------------------------------------
# regret transfer

class RegretCheck(NamedTuple):
    lhs: float
    rhs: float
    holds: bool


def pointwise_deferral_risk(d: Decision, c: ConditionalPoint) -> float:
    if isinstance(d, Defer):
        return 1.0 - float(c.p[d.expert])
    return 1.0 - float(c.eta[d.label])


def check_regret_bound(u, c: ConditionalPoint, kind=LossKind.ASM, slack: float = 1e-9) -> RegretCheck:
    """Pointwise regret transfer check for the asymmetric softmax loss.

    ``lhs`` is the larger of the classifier's 0-1 excess (argmax of the class
    block) and the 0-1-deferral excess of the induced decision. ``rhs`` is
    ``sqrt(2 * surrogate excess)`` with the excess measured against the exact
    minimizer.
    """
    if LossKind(kind) is not LossKind.ASM:
        raise InvalidInputError("the regret bound is stated for the single-expert ASM loss")
    K = c.n_classes
    u = check_scores(u, K, 1)
    u_star = minimize_conditional(LossKind.ASM, c)
    excess = conditional_risk(kind, u, c) - conditional_risk(kind, u_star, c)
    rhs = float(np.sqrt(2.0 * max(excess, 0.0)))
    cls_excess = float(np.max(c.eta) - c.eta[int(np.argmax(u[:K]))])
    bayes = 1.0 - max(float(np.max(c.eta)), float(np.max(c.p)))
    defer_excess = pointwise_deferral_risk(decide(u, K), c) - bayes
    lhs = max(cls_excess, defer_excess)
    return RegretCheck(lhs, rhs, lhs <= rhs + slack)


# --------------------------------------------------------------------------
# synthetic data

@dataclass(frozen=True)
class ExpertSpec:
    """Expert correct w.p. ``p`` on classes ``< k``, uniform over all classes otherwise."""

    k: int
    p: float


@dataclass(frozen=True)
class SyntheticSpec:
    k_classes: int
    feature_dim: int
    class_means: tuple
    sigma: float
    experts: tuple = field(default_factory=lambda: (ExpertSpec(1, 1.0),))
    n: int = 1000
    seed: int = 0

    def __post_init__(self):
        means = np.asarray(self.class_means, dtype=np.float64)
        experts = tuple(e if isinstance(e, ExpertSpec) else ExpertSpec(**e) for e in self.experts)
        object.__setattr__(self, "experts", experts)
        object.__setattr__(self, "class_means", tuple(tuple(float(v) for v in row) for row in means))
        if self.k_classes < 2:
            raise InvalidInputError("k_classes must be >= 2")
        if self.feature_dim < 1:
            raise InvalidInputError("feature_dim must be >= 1")
        if means.shape != (self.k_classes, self.feature_dim):
            raise InvalidInputError(
                f"class_means must be {self.k_classes} x {self.feature_dim}, got {means.shape}")
        if not np.all(np.isfinite(means)):
            raise InvalidInputError("class_means must be finite")
        if not self.sigma > 0:
            raise InvalidInputError("sigma must be positive")
        if not experts:
            raise InvalidInputError("at least one expert is required")
        for e in experts:
            if not 1 <= e.k <= self.k_classes:
                raise InvalidInputError(f"expert k={e.k} outside [1, {self.k_classes}]")
            if not 0.0 <= e.p <= 1.0:
                raise InvalidInputError(f"expert p={e.p} outside [0, 1]")
        if self.n < 1:
            raise InvalidInputError("n must be >= 1")

    @property
    def means(self) -> np.ndarray:
        return np.asarray(self.class_means)

    def to_dict(self) -> dict:
        return {
            "k_classes": self.k_classes,
            "feature_dim": self.feature_dim,
            "class_means": [list(r) for r in self.class_means],
            "sigma": self.sigma,
            "experts": [{"k": e.k, "p": e.p} for e in self.experts],
            "n": self.n,
            "seed": self.seed,
        }

    def expert_class_accuracy(self) -> np.ndarray:
        """``(M, K)`` table of Pr(expert correct | Y = y)."""
        K = self.k_classes
        return np.array([[e.p if y < e.k else 1.0 / K for y in range(K)] for e in self.experts])


def polygon_means(k_classes: int, distance: float, feature_dim: int = 2) -> np.ndarray:
    """Class means on a regular polygon whose neighbouring vertices are ``distance`` apart."""
    if feature_dim < 2:
        raise InvalidInputError("polygon layout needs feature_dim >= 2")
    radius = distance / (2.0 * np.sin(np.pi / k_classes))
    angle = 2.0 * np.pi * np.arange(k_classes) / k_classes
    means = np.zeros((k_classes, feature_dim))
    means[:, 0] = radius * np.cos(angle)
    means[:, 1] = radius * np.sin(angle)
    return means


def posteriors(spec: SyntheticSpec, features) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form class posteriors ``(n, K)`` and expert accuracies ``(n, M)``."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    sq = ((x[:, None, :] - spec.means[None, :, :]) ** 2).sum(axis=2)
    eta = softmax(-sq / (2.0 * spec.sigma**2))
    table = spec.expert_class_accuracy()
    # a mixture of the table entries lies in [min, max]; clipping removes
    # rounding drift so a constant-accuracy expert is reported exactly
    acc = np.clip(eta @ table.T, table.min(axis=1), table.max(axis=1))
    return eta, acc


@dataclass
class SyntheticSample:
    data: Dataset
    eta: np.ndarray
    expert_acc: np.ndarray
    bayes_risk: float

    def truth(self, i: int) -> ConditionalPoint:
        return ConditionalPoint(self.eta[i], self.expert_acc[i])


def sample_synthetic(spec: SyntheticSpec) -> SyntheticSample:
    """Draw a labeled sample from an isotropic Gaussian mixture with simulated experts.

    ``bayes_risk`` averages the pointwise risk of the Bayes decision,
    ``1 - max(max_y eta_y, max_j p_j)``, over the drawn inputs.
    """
    K, n = spec.k_classes, spec.n
    rng = np.random.default_rng(spec.seed)
    y = rng.integers(K, size=n)
    x = spec.means[y] + spec.sigma * rng.standard_normal((n, spec.feature_dim))
    preds = np.empty((n, len(spec.experts)), dtype=np.int64)
    for j, e in enumerate(spec.experts):
        hit = rng.random(n) < e.p
        other = (y + rng.integers(1, K, size=n)) % K
        uniform = rng.integers(K, size=n)
        preds[:, j] = np.where(y < e.k, np.where(hit, y, other), uniform)
    eta, acc = posteriors(spec, x)
    risk = 1.0 - np.maximum(eta.max(axis=1), acc.max(axis=1))
    return SyntheticSample(Dataset(x, y, preds), eta, acc, float(risk.mean()))

"""Randomised property sweeps shipped with the CLI ``verify`` mode.

Each sweep returns a :class:`CheckResult`; failures carry a few
counterexamples so they can be dumped and replayed.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .estimators import (asym_log_softmax, asym_softmax, asym_softmax_multi, clip_estimate,
                         estimate_ova, estimate_ssm)
from .oracle import (ConditionalPoint, bayes_decision, canonical_shift, check_regret_bound,
                     closed_form_minimizer, decide, minimize_conditional_batch)
from .surrogates import LossKind, MulticlassLoss, losses, losses_and_grads, losses_general

log = logging.getLogger(__name__)

GRAD_STEP = 1e-5
GRAD_RTOL = 1e-5


@dataclass
class CheckResult:
    name: str
    cases: int
    failures: int = 0
    worst: float = 0.0
    tolerance: float | None = None
    counterexamples: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def record(self, example: dict, limit: int = 5):
        self.failures += 1
        if len(self.counterexamples) < limit:
            self.counterexamples.append(_jsonable(example))

    def to_dict(self) -> dict:
        """JSON form; wall-clock time is left out so reports are reproducible."""
        return {
            "name": self.name,
            "passed": self.passed,
            "cases": self.cases,
            "failures": self.failures,
            "worst": self.worst,
            "tolerance": self.tolerance,
            "counterexamples": self.counterexamples,
        }

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        tol = "" if self.tolerance is None else f" tol={self.tolerance:g}"
        return (f"[{status}] {self.name}: {self.cases - self.failures}/{self.cases} ok, "
                f"worst={self.worst:.3e}{tol} ({self.seconds:.1f}s)")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _timed(fn):
    def wrapper(*args, **kwargs):
        start = time.perf_counter()
        result = fn(*args, **kwargs)
        result.seconds = time.perf_counter() - start
        return result
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def random_points(rng, n_classes: int, count: int, n_experts: int = 1,
                  lo: float = 0.05, hi: float = 0.95) -> list[ConditionalPoint]:
    """Conditional points with every posterior and accuracy in ``[lo, hi]``.

    Posteriors are Dirichlet(1) draws, rejected until all entries are in range.
    """
    points = []
    while len(points) < count:
        eta = rng.dirichlet(np.ones(n_classes))
        if eta.min() >= lo and eta.max() <= hi:
            points.append(ConditionalPoint(eta, rng.uniform(lo, hi, size=n_experts)))
    return points


def _random_scores(rng, n, K, M, scale=3.0, min_gap=1e-3):
    """Uniform scores whose two largest class scores differ by at least ``min_gap``
    so central differences never straddle the max-kink of the asymmetric softmax."""
    out = np.empty((0, K + M))
    while out.shape[0] < n:
        u = rng.uniform(-scale, scale, size=(n, K + M))
        top2 = np.sort(u[:, :K], axis=1)[:, -2:]
        out = np.vstack([out, u[top2[:, 1] - top2[:, 0] >= min_gap]])
    return out[:n]


@_timed
def gradient_check(rng, n: int = 100, class_counts=(2, 5, 10), kinds=tuple(LossKind),
                   h: float = GRAD_STEP, rtol: float = GRAD_RTOL) -> CheckResult:
    """Analytic gradients against central finite differences, every loss kind."""
    res = CheckResult("gradient vs central differences", 0, tolerance=rtol)
    for kind in kinds:
        kind = LossKind(kind)
        M = 2 if kind.multi_expert else 1
        for K in class_counts:
            u = _random_scores(rng, n, K, M)
            y = rng.integers(K, size=n)
            m = rng.integers(K, size=(n, M))
            # make [m == y] roughly balanced
            m[:, 0] = np.where(rng.random(n) < 0.5, y, m[:, 0])
            _, g = losses_and_grads(kind, u, y, m, K)
            fd = np.empty_like(u)
            for j in range(K + M):
                step = np.zeros(K + M)
                step[j] = h
                fd[:, j] = (losses(kind, u + step, y, m, K) - losses(kind, u - step, y, m, K)) / (2 * h)
            rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-12)
            worst_row = rel.max(axis=1)
            res.cases += n
            res.worst = max(res.worst, float(worst_row.max()))
            for i in np.flatnonzero(worst_row >= rtol):
                res.record({"kind": kind.value, "K": K, "u": u[i], "y": y[i], "m": m[i],
                            "analytic": g[i], "numeric": fd[i]})
    return res


@_timed
def boundedness_check(rng, n: int = 100_000, max_classes: int = 10, scale: float = 50.0,
                      n_experts=(1, 2)) -> CheckResult:
    """Range and maxima preservation of the asymmetric softmax on random scores.

    Maxima preservation is checked on the log outputs, which keep the order
    of values that round to 1.0, and on the linear outputs wherever their
    maximum is unique in floating point.
    """
    res = CheckResult("asymmetric softmax boundedness and maxima preservation", 0, tolerance=1e-9)
    for M in n_experts:
        K = rng.integers(2, max_classes + 1, size=n)
        for k in np.unique(K):
            rows = int(np.sum(K == k))
            u = rng.uniform(-scale, scale, size=(rows, k + M))
            est = asym_softmax(u, k) if M == 1 else asym_softmax_multi(u, k)
            out = est.as_vector()
            sum_err = np.abs(est.class_probs.sum(axis=1) - 1.0)
            in_range = np.all((est.expert_acc >= 0) & (est.expert_acc <= 1), axis=1)
            srt = np.sort(u, axis=1)
            unique = srt[:, -1] > srt[:, -2]
            target = np.argmax(u, axis=1)
            keep_log = np.argmax(asym_log_softmax(u, k), axis=1) == target
            out_srt = np.sort(out, axis=1)
            out_unique = out_srt[:, -1] > out_srt[:, -2]
            keep_lin = (np.argmax(out, axis=1) == target) | ~out_unique
            ok = (sum_err <= 1e-9) & in_range & (~unique | (keep_log & keep_lin))
            res.cases += rows
            res.worst = max(res.worst, float(sum_err.max()))
            for i in np.flatnonzero(~ok):
                res.record({"K": int(k), "M": M, "u": u[i], "output": out[i]})
    return res


@_timed
def equivalence_check(rng, n: int = 10_000, max_classes: int = 10, tol: float = 1e-9) -> CheckResult:
    """The generic reformulation with the asymmetric multiclass losses reproduces
    the asymmetric softmax and one-vs-all surrogates."""
    res = CheckResult("generic reformulation equivalence", n, tolerance=tol)
    pairs = ((MulticlassLoss.PHI_ASM, LossKind.ASM), (MulticlassLoss.PHI_OVA, LossKind.AOVA))
    Ks = rng.integers(2, max_classes + 1, size=n)
    for K in np.unique(Ks):
        K = int(K)
        count = int(np.sum(Ks == K))
        u = rng.uniform(-5, 5, size=(count, K + 1))
        y = rng.integers(K, size=count)
        m = np.where(rng.random(count) < 0.5, y, rng.integers(K, size=count))
        diff = np.zeros(count)
        for phi, kind in pairs:
            gap = np.abs(losses_general(phi, u, y, m, K) - losses(kind, u, y, m, K))
            diff = np.maximum(diff, gap)
        res.worst = max(res.worst, float(diff.max()))
        for i in np.flatnonzero(~(diff < tol)):
            res.record({"K": K, "u": u[i], "y": y[i], "m": m[i], "diff": diff[i]})
    return res


@_timed
def recovery_check(rng, n: int = 1000, class_counts=(2, 3, 4)) -> CheckResult:
    """Minimizers of the conditional risk recover the true posteriors.

    Closed-form ASM within 1e-4; gradient-descent ASM within 1e-3 of the closed
    form (after removing the common score shift); SSM and AOVA minimizers
    within 1e-3 through their own estimators.
    """
    res = CheckResult("conditional-risk minimizer recovery", 0, tolerance=1e-3)
    sizes = np.diff(np.linspace(0, n, len(class_counts) + 1).round().astype(int))
    for K, size in zip(class_counts, sizes):
        if size == 0:
            continue
        points = random_points(rng, K, int(size))
        truth = np.stack([np.concatenate([c.eta, c.p]) for c in points])
        closed = np.stack([closed_form_minimizer(c) for c in points])
        err = {"asm_closed": np.abs(asym_softmax(closed, K).as_vector() - truth).max(axis=1)}
        u_gd, _ = minimize_conditional_batch(LossKind.ASM, points)
        err["asm_gd_vs_closed"] = np.abs(canonical_shift(u_gd, K) - closed).max(axis=1)
        u_ssm, _ = minimize_conditional_batch(LossKind.SSM, points)
        err["ssm"] = np.abs(estimate_ssm(u_ssm, K).as_vector() - truth).max(axis=1)
        u_ova, _ = minimize_conditional_batch(LossKind.AOVA, points)
        err["aova"] = np.abs(estimate_ova(u_ova, K).raw - truth).max(axis=1)
        limits = {"asm_closed": 1e-4, "asm_gd_vs_closed": 1e-3, "ssm": 1e-3, "aova": 1e-3}
        res.cases += int(size)
        for i in range(int(size)):
            bad = {k: float(v[i]) for k, v in err.items() if not v[i] < limits[k]}
            if bad:
                res.record({"K": K, "eta": points[i].eta, "p": points[i].p, "errors": bad})
        res.worst = max(res.worst, *(float(v.max()) for v in err.values()))
    return res


@_timed
def multi_expert_recovery_check(rng, n: int = 200, class_counts=(2, 3), n_experts: int = 2) -> CheckResult:
    """Gradient descent on the multi-expert loss recovers every expert's accuracy."""
    res = CheckResult(f"multi-expert (M={n_experts}) recovery", 0, tolerance=1e-3)
    sizes = np.diff(np.linspace(0, n, len(class_counts) + 1).round().astype(int))
    for K, size in zip(class_counts, sizes):
        points = random_points(rng, K, int(size), n_experts=n_experts)
        truth = np.stack([np.concatenate([c.eta, c.p]) for c in points])
        u, _ = minimize_conditional_batch(LossKind.ASM_MULTI, points)
        err = np.abs(asym_softmax_multi(u, K).as_vector() - truth).max(axis=1)
        closed = np.stack([closed_form_minimizer(c) for c in points])
        err_closed = np.abs(asym_softmax_multi(closed, K).as_vector() - truth).max(axis=1)
        worst = np.maximum(err, err_closed)
        res.cases += int(size)
        res.worst = max(res.worst, float(worst.max()))
        for i in np.flatnonzero(worst >= 1e-3):
            res.record({"K": K, "eta": points[i].eta, "p": points[i].p, "error": worst[i]})
    return res


def _regret_scores(rng, c: ConditionalPoint, mode: int) -> np.ndarray:
    K = c.n_classes
    if mode == 0:
        return rng.uniform(-5, 5, size=K + 1)
    scale = 0.5 if mode == 1 else 1e-2
    return closed_form_minimizer(c) + scale * rng.standard_normal(K + 1)


@_timed
def regret_check(rng, n: int = 10_000, class_counts=(2, 3, 4)) -> CheckResult:
    """Pointwise regret transfer bound on random (eta, p, u).

    Scores are drawn uniformly, or as the exact minimizer plus Gaussian noise
    of two sizes so that small-excess cases are covered.
    """
    res = CheckResult("regret transfer bound", n, tolerance=1e-9)
    # worst is the largest lhs - rhs seen; negative means slack everywhere
    res.worst = -np.inf
    for i in range(n):
        K = int(class_counts[i % len(class_counts)])
        c = random_points(rng, K, 1, lo=0.01, hi=0.99)[0]
        u = _regret_scores(rng, c, i % 3)
        r = check_regret_bound(u, c)
        res.worst = max(res.worst, r.lhs - r.rhs)
        if not r.holds:
            res.record({"eta": c.eta, "p": c.p, "u": u, "lhs": r.lhs, "rhs": r.rhs})
    return res


@_timed
def maxima_consistency_check(rng, n: int = 1000, class_counts=(2, 3, 4)) -> CheckResult:
    """Decision of the exact minimizer equals the Bayes decision off ties."""
    res = CheckResult("minimizer decision matches Bayes rule", 0)
    for i in range(n):
        K = int(class_counts[i % len(class_counts)])
        c = random_points(rng, K, 1)[0]
        if abs(c.eta.max() - c.p.max()) <= 1e-6:
            continue
        res.cases += 1
        got, want = decide(closed_form_minimizer(c), K), bayes_decision(c)
        if got != want:
            res.record({"eta": c.eta, "p": c.p, "decided": repr(got), "bayes": repr(want)})
    return res


@_timed
def unboundedness_witness() -> CheckResult:
    """The symmetric-softmax estimator exceeds 1 at (0, 0, ln 4); clipping maps it to 1."""
    res = CheckResult("symmetric softmax unboundedness witness", 1)
    est = estimate_ssm([0.0, 0.0, np.log(4.0)], 2)
    value = float(est.expert_acc[0])
    clipped = float(clip_estimate(est).expert_acc[0])
    res.worst = abs(value - 2.0)
    if value != 2.0 or clipped != 1.0:
        res.record({"expert_acc": value, "clipped": clipped})
    return res


def worker_threads() -> int:
    """Thread cap from ``DEFER_LAB_THREADS``; 1 when unset."""
    raw = os.environ.get("DEFER_LAB_THREADS", "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise InvalidInputError(f"DEFER_LAB_THREADS must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise InvalidInputError(f"DEFER_LAB_THREADS must be a positive integer, got {raw!r}")
    return value


def run_all(seed: int = 0, sizes=None, threads: int | None = None) -> list[CheckResult]:
    """Run every sweep; each gets its own generator derived from ``seed``.

    ``threads`` defaults to the ``DEFER_LAB_THREADS`` environment variable
    (1 when unset).
    """
    sizes = dict(sizes or {})
    if threads is None:
        threads = worker_threads()
    jobs = [
        (gradient_check, {"n": sizes.get("gradient", 100)}),
        (boundedness_check, {"n": sizes.get("boundedness", 100_000)}),
        (recovery_check, {"n": sizes.get("recovery", 1000)}),
        (multi_expert_recovery_check, {"n": sizes.get("multi_expert", 200)}),
        (equivalence_check, {"n": sizes.get("equivalence", 10_000)}),
        (regret_check, {"n": sizes.get("regret", 10_000)}),
        (maxima_consistency_check, {"n": sizes.get("recovery", 1000)}),
        (unboundedness_witness, None),
    ]

    def call(i):
        fn, kwargs = jobs[i]
        if kwargs is None:
            return fn()
        return fn(np.random.default_rng([seed, i]), **kwargs)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(call, range(len(jobs))))
    for r in results:
        log.info(r.line())
    return results

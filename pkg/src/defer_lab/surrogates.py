"""Surrogate losses for learning to defer, with analytic gradients.

Labels and expert predictions are 0-indexed class ids. Inside the generic
``phi`` formulation the deferral option is the extra class id ``K``.

The binary loss used by the one-vs-all kinds is the logistic loss
``xi(z) = log(1 + exp(-z))``.
"""

from __future__ import annotations

import enum

import numpy as np
from scipy.special import expit

from .errors import InvalidDimensionError, InvalidInputError
from .estimators import check_scores, expert_logits, log_nonmax_mass, logsumexp, softmax


class LossKind(str, enum.Enum):
    ASM = "asm"
    SSM = "ssm"
    AOVA = "aova"
    SOVA = "sova"
    ASM_MULTI = "asm_multi"

    @property
    def multi_expert(self) -> bool:
        return self is LossKind.ASM_MULTI


class MulticlassLoss(str, enum.Enum):
    CE_SYM = "ce_sym"
    PHI_ASM = "phi_asm"
    PHI_OVA = "phi_ova"


def xi(z):
    """Logistic binary loss."""
    return np.logaddexp(0.0, -np.asarray(z, dtype=np.float64))


def _softplus(z):
    return np.logaddexp(0.0, z)


def _prepare(kind: LossKind, scores, labels, experts, n_classes: int):
    kind = LossKind(kind)
    scores = check_scores(np.atleast_2d(scores), n_classes)
    n, width = scores.shape
    n_experts = width - n_classes
    if not kind.multi_expert and n_experts != 1:
        raise InvalidDimensionError(f"{kind.name} takes exactly one expert, got M={n_experts}")
    labels = np.asarray(labels).reshape(-1)
    experts = np.asarray(experts)
    if experts.ndim <= 1 and n_experts == 1:
        experts = experts.reshape(-1, 1)
    experts = np.atleast_2d(experts)
    if labels.shape[0] != n or experts.shape != (n, n_experts):
        raise InvalidDimensionError(
            f"got {labels.shape[0]} labels and experts of shape {experts.shape} "
            f"for {n} score rows with M={n_experts}"
        )
    for name, arr in (("label", labels), ("expert prediction", experts)):
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(np.equal(np.mod(arr, 1), 0)):
                raise InvalidInputError(f"{name} must be an integer class index")
        if np.any(arr < 0) or np.any(arr >= n_classes):
            raise InvalidInputError(f"{name} out of range [0, {n_classes})")
    return kind, scores, labels.astype(np.intp), experts.astype(np.intp)


def _onehot(index: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((index.shape[0], width))
    out[np.arange(index.shape[0]), index] = 1.0
    return out


def _nonmax_weights(class_scores: np.ndarray) -> np.ndarray:
    """d/du_c of ``log_nonmax_mass``: softmax over the non-maximal classes, 0 at the max.

    On ties the first maximal index is treated as the excluded one.
    """
    rows = np.arange(class_scores.shape[0])
    rest = class_scores.copy()
    rest[rows, np.argmax(class_scores, axis=-1)] = -np.inf
    return np.exp(rest - log_nonmax_mass(class_scores)[..., None])


def _loss_and_grad(kind, scores, labels, experts, n_classes, need_grad):
    K = n_classes
    n, width = scores.shape
    rows = np.arange(n)
    agree = experts == labels[:, None]  # [m_j == y], shape (n, M)
    grad = None

    if kind in (LossKind.ASM, LossKind.ASM_MULTI):
        cls = scores[:, :K]
        ce = logsumexp(cls, axis=1) - cls[rows, labels]
        z = expert_logits(scores, K)
        binary = np.where(agree, _softplus(-z), _softplus(z))
        value = ce + binary.sum(axis=1)
        if need_grad:
            dz = expit(z) - agree
            grad = np.empty_like(scores)
            grad[:, :K] = softmax(cls) - _onehot(labels, K)
            grad[:, :K] -= dz.sum(axis=1, keepdims=True) * _nonmax_weights(cls)
            grad[:, K:] = dz

    elif kind is LossKind.SSM:
        lse = logsumexp(scores, axis=1)
        t = agree[:, 0]
        value = (lse - scores[rows, labels]) + t * (lse - scores[:, K])
        if need_grad:
            p = softmax(scores)
            grad = (p - _onehot(labels, width)) + t[:, None] * (p - _onehot(np.full(n, K), width))

    elif kind is LossKind.AOVA:
        target = _onehot(labels, width)
        target[:, K] = agree[:, 0]
        value = np.where(target > 0, _softplus(-scores), _softplus(scores)).sum(axis=1)
        if need_grad:
            grad = expit(scores) - target

    elif kind is LossKind.SOVA:
        t = agree[:, 0]
        t_label = _onehot(labels, width)
        t_defer = _onehot(np.full(n, K), width)
        phi_label = np.where(t_label > 0, _softplus(-scores), _softplus(scores)).sum(axis=1)
        phi_defer = np.where(t_defer > 0, _softplus(-scores), _softplus(scores)).sum(axis=1)
        value = phi_label + t * phi_defer
        if need_grad:
            s = expit(scores)
            grad = (s - t_label) + t[:, None] * (s - t_defer)

    else:  # pragma: no cover
        raise InvalidInputError(f"unknown loss kind {kind!r}")
    return value, grad


def losses(kind, scores, labels, experts, n_classes: int) -> np.ndarray:
    """Per-row surrogate loss for score rows of shape ``(n, K + M)``."""
    kind, scores, labels, experts = _prepare(kind, scores, labels, experts, n_classes)
    return _loss_and_grad(kind, scores, labels, experts, n_classes, False)[0]


def losses_and_grads(kind, scores, labels, experts, n_classes: int):
    """Per-row losses ``(n,)`` and their score gradients ``(n, K + M)``."""
    kind, scores, labels, experts = _prepare(kind, scores, labels, experts, n_classes)
    return _loss_and_grad(kind, scores, labels, experts, n_classes, True)


def loss(kind, u, y, m, n_classes: int) -> float:
    """Surrogate loss of a single score vector.

    Args:
        kind: a :class:`LossKind` or its string value.
        u: score vector of length ``K + M``.
        y: true label.
        m: expert prediction, or a sequence of ``M`` predictions.
        n_classes: ``K``.
    """
    return float(losses(kind, np.asarray(u)[None, :], [y], np.reshape(m, (1, -1)), n_classes)[0])


def grad(kind, u, y, m, n_classes: int) -> np.ndarray:
    _, g = losses_and_grads(kind, np.asarray(u)[None, :], [y], np.reshape(m, (1, -1)), n_classes)
    return g[0]


def batch_loss_and_grad(kind, scores, labels, experts, n_classes: int):
    """Mean loss over the batch and its gradient w.r.t. every score row.

    Row ``i`` of the returned gradient is ``grad_i / n``, i.e. the derivative
    of the mean loss, so it can be fed straight into backpropagation.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    if scores.shape[0] == 0:
        raise InvalidInputError("empty batch")
    values, grads = losses_and_grads(kind, scores, labels, experts, n_classes)
    n = values.shape[0]
    return float(np.sum(values) / n), grads / n


def multiclass_losses(phi, scores, targets, n_classes: int) -> np.ndarray:
    """Row-wise (K+1)-class loss ``phi(u, target)``; ``target == K`` is deferral."""
    phi = MulticlassLoss(phi)
    K = n_classes
    scores = check_scores(np.atleast_2d(scores), K, 1)
    targets = np.asarray(targets).reshape(-1).astype(np.intp)
    if targets.shape[0] != scores.shape[0]:
        raise InvalidDimensionError("one target per score row required")
    if np.any(targets < 0) or np.any(targets > K):
        raise InvalidInputError(f"target out of range [0, {K}]")
    rows = np.arange(scores.shape[0])
    defer = targets == K
    picked = scores[rows, targets]
    if phi is MulticlassLoss.CE_SYM:
        return logsumexp(scores, axis=1) - picked
    if phi is MulticlassLoss.PHI_ASM:
        z = expert_logits(scores, K)[:, 0]
        log_defer, log_keep = -_softplus(-z), -_softplus(z)
        keep = logsumexp(scores[:, :K], axis=1) - picked - log_keep
        return np.where(defer, log_keep - log_defer, keep)
    # PHI_OVA
    u_defer = scores[:, K]
    everything = xi(-scores).sum(axis=1)
    keep = xi(picked) + everything - xi(-picked)
    return np.where(defer, xi(u_defer) - xi(-u_defer), keep)


def multiclass_loss(phi, u, target: int, n_classes: int) -> float:
    """Single-vector form of :func:`multiclass_losses`."""
    u = check_scores(u, n_classes, 1)
    return float(multiclass_losses(phi, u[None, :], [target], n_classes)[0])


def losses_general(phi, scores, labels, experts, n_classes: int) -> np.ndarray:
    """Generic reformulation ``phi(u, y) + [m == y] * phi(u, K)`` per row."""
    labels = np.asarray(labels).reshape(-1)
    experts = np.asarray(experts)
    if experts.ndim == 2:
        if experts.shape[1] != 1:
            raise InvalidDimensionError("the generic reformulation is single-expert")
        experts = experts[:, 0]
    experts = experts.reshape(-1)
    if labels.shape != experts.shape:
        raise InvalidDimensionError("labels and experts must have equal length")
    for arr in (labels, experts):
        if np.any(arr < 0) or np.any(arr >= n_classes):
            raise InvalidInputError("label/expert out of range")
    agree = experts == labels
    value = multiclass_losses(phi, scores, labels, n_classes)
    defer = multiclass_losses(phi, scores, np.full(labels.shape[0], n_classes), n_classes)
    return value + np.where(agree, defer, 0.0)


def loss_general(phi, u, y, m, n_classes: int) -> float:
    """Single-sample form of :func:`losses_general`."""
    m = np.reshape(m, -1)
    if m.shape[0] != 1:
        raise InvalidDimensionError("the generic reformulation is single-expert")
    u = check_scores(u, n_classes, 1)
    return float(losses_general(phi, u[None, :], [y], m, n_classes)[0])

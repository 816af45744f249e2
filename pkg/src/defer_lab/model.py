"""Scorer models and the minibatch training loop.

Models are plain numpy: an affine map (``linear``) or affine-ReLU-affine
(``mlp``), with hand-written backpropagation.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import DivergedError, InvalidDimensionError, InvalidInputError
from .estimators import (ProbEstimate, asym_softmax_multi, clip_estimate, estimate_ova,
                         estimate_sova, estimate_ssm)
from .oracle import DecisionArray, decide_batch, deferral_losses
from .surrogates import LossKind, batch_loss_and_grad, losses

log = logging.getLogger(__name__)

ARCHITECTURES = ("linear", "mlp")
OPTIMIZERS = ("sgd_cosine", "adam")


@dataclass
class ScorerModel:
    arch: str
    input_dim: int
    n_classes: int
    n_experts: int
    params: dict
    hidden: int | None = None
    seed: int = 0
    loss: str | None = None

    @property
    def output_dim(self) -> int:
        return self.n_classes + self.n_experts

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def copy(self) -> "ScorerModel":
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        """Checkpoint document; weight arrays are stored row-major as nested lists."""
        return {
            "arch": self.arch,
            "input_dim": self.input_dim,
            "n_classes": self.n_classes,
            "n_experts": self.n_experts,
            "hidden": self.hidden,
            "seed": self.seed,
            "loss": self.loss,
            "params": {k: v.tolist() for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ScorerModel":
        model = cls(
            arch=doc["arch"],
            input_dim=int(doc["input_dim"]),
            n_classes=int(doc["n_classes"]),
            n_experts=int(doc["n_experts"]),
            hidden=doc.get("hidden"),
            seed=int(doc.get("seed", 0)),
            loss=doc.get("loss"),
            params={k: np.asarray(v, dtype=np.float64) for k, v in doc["params"].items()},
        )
        expected = _param_shapes(model.arch, model.input_dim, model.output_dim, model.hidden)
        got = {k: v.shape for k, v in model.params.items()}
        if got != expected:
            raise InvalidInputError(f"checkpoint parameter shapes {got} != expected {expected}")
        if not all(np.all(np.isfinite(v)) for v in model.params.values()):
            raise InvalidInputError("checkpoint contains non-finite parameters")
        return model


def _param_shapes(arch, d, out, hidden):
    if arch == "linear":
        return {"W": (d, out), "b": (out,)}
    if arch == "mlp":
        return {"W1": (d, hidden), "b1": (hidden,), "W2": (hidden, out), "b2": (out,)}
    raise InvalidInputError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")


def init_model(arch: str, input_dim: int, n_classes: int, n_experts: int = 1,
               seed: int = 0, hidden: int = 32) -> ScorerModel:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    if min(input_dim, n_classes, n_experts) < 1 or (arch == "mlp" and hidden < 1):
        raise InvalidDimensionError("model dimensions must be positive")
    rng = np.random.default_rng(seed)
    shapes = _param_shapes(arch, input_dim, n_classes + n_experts, hidden if arch == "mlp" else None)
    params = {}
    for name, shape in shapes.items():
        if len(shape) == 2:
            bound = 1.0 / math.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
        else:
            params[name] = np.zeros(shape)
    return ScorerModel(arch, input_dim, n_classes, n_experts, params,
                       hidden=hidden if arch == "mlp" else None, seed=seed)


def _check_features(model, features):
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.input_dim:
        raise InvalidDimensionError(f"feature dim {x.shape[1]} != model input dim {model.input_dim}")
    return x, single


def _forward(model, x):
    p = model.params
    if model.arch == "linear":
        return x @ p["W"] + p["b"], None
    h = x @ p["W1"] + p["b1"]
    return np.maximum(h, 0.0) @ p["W2"] + p["b2"], h


def _backward(model, x, hidden_pre, d_scores):
    p = model.params
    if model.arch == "linear":
        return {"W": x.T @ d_scores, "b": d_scores.sum(axis=0)}
    act = np.maximum(hidden_pre, 0.0)
    d_hidden = (d_scores @ p["W2"].T) * (hidden_pre > 0)
    return {
        "W1": x.T @ d_hidden,
        "b1": d_hidden.sum(axis=0),
        "W2": act.T @ d_scores,
        "b2": d_scores.sum(axis=0),
    }


def forward(model: ScorerModel, features) -> np.ndarray:
    """Score vectors for one feature vector ``(d,)`` or a matrix ``(n, d)``."""
    x, single = _check_features(model, features)
    scores, _ = _forward(model, x)
    return scores[0] if single else scores


def loss_and_param_grads(model: ScorerModel, kind, data: Dataset):
    """Mean surrogate loss over ``data`` and its gradient w.r.t. every parameter."""
    x, _ = _check_features(model, data.features)
    scores, hidden_pre = _forward(model, x)
    value, d_scores = batch_loss_and_grad(kind, scores, data.labels, data.experts, model.n_classes)
    return value, _backward(model, x, hidden_pre, d_scores)


def mean_loss(model: ScorerModel, kind, data: Dataset) -> float:
    scores = forward(model, data.features)
    return float(np.mean(losses(kind, scores, data.labels, data.experts, model.n_classes)))


@dataclass
class TrainConfig:
    loss: LossKind = LossKind.ASM
    optimizer: str = "adam"
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 128
    # decoupled: params -= step * weight_decay * params, outside the gradient
    weight_decay: float = 0.0
    seed: int = 0
    adam_betas: tuple = field(default=(0.9, 0.999))
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.loss = LossKind(self.loss)
        if self.optimizer not in OPTIMIZERS:
            raise InvalidInputError(f"unknown optimizer {self.optimizer!r}; expected one of {OPTIMIZERS}")
        if not self.lr >= 0:
            raise InvalidInputError("learning rate must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidInputError("epochs and batch_size must be >= 1")
        if self.weight_decay < 0:
            raise InvalidInputError("weight_decay must be non-negative")


def cosine_step(base: float, t: int, total: int) -> float:
    return base * 0.5 * (1.0 + math.cos(math.pi * t / total))


def train(model: ScorerModel, data: Dataset, cfg: TrainConfig):
    """Minibatch first-order training.

    The data order is reshuffled each epoch with a generator seeded by
    ``(cfg.seed, epoch)``, so a run is a pure function of the config, the
    initial model and the data.

    Returns:
        ``(trained_model, history)`` where ``history[e]`` is the mean training
        loss over the whole dataset after epoch ``e``.
    """
    if len(data) == 0:
        raise InvalidInputError("empty training set")
    if data.feature_dim != model.input_dim or data.n_experts != model.n_experts:
        raise InvalidDimensionError("data dimensions do not match the model")
    if LossKind(cfg.loss) is not LossKind.ASM_MULTI and model.n_experts != 1:
        raise InvalidDimensionError(f"{cfg.loss.name} needs a single-expert model")
    model = model.copy()
    model.loss = cfg.loss.value
    n = len(data)
    batches_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = batches_per_epoch * cfg.epochs
    beta1, beta2 = cfg.adam_betas
    moment1 = {k: np.zeros_like(v) for k, v in model.params.items()}
    moment2 = {k: np.zeros_like(v) for k, v in model.params.items()}
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        for b in range(batches_per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            value, grads = loss_and_param_grads(model, cfg.loss, data.take(idx))
            if not math.isfinite(value):
                raise DivergedError(epoch, b, value)
            if cfg.optimizer == "sgd_cosine":
                lr = cosine_step(cfg.lr, step, total_steps)
                for k, g in grads.items():
                    model.params[k] -= lr * (g + cfg.weight_decay * model.params[k])
            else:
                lr = cfg.lr
                t = step + 1
                for k, g in grads.items():
                    moment1[k] = beta1 * moment1[k] + (1 - beta1) * g
                    moment2[k] = beta2 * moment2[k] + (1 - beta2) * g * g
                    m_hat = moment1[k] / (1 - beta1**t)
                    v_hat = moment2[k] / (1 - beta2**t)
                    model.params[k] -= lr * (m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
                                             + cfg.weight_decay * model.params[k])
            step += 1
        epoch_loss = mean_loss(model, cfg.loss, data)
        if not math.isfinite(epoch_loss):
            raise DivergedError(epoch, batches_per_epoch - 1, epoch_loss)
        history.append(epoch_loss)
        log.debug("epoch %d loss %.6f", epoch, epoch_loss)
    return model, history


@dataclass
class Evaluation:
    decisions: DecisionArray
    estimates: ProbEstimate
    deferral_losses: np.ndarray


def estimator_for(kind, scores, n_classes: int) -> ProbEstimate:
    """Probability estimate paired with each loss; unbounded ones are clipped."""
    kind = LossKind(kind)
    if kind in (LossKind.ASM, LossKind.ASM_MULTI):
        return asym_softmax_multi(scores, n_classes)
    if kind is LossKind.SSM:
        return clip_estimate(estimate_ssm(scores, n_classes, on_overflow="inf"))
    if kind is LossKind.SOVA:
        return clip_estimate(estimate_sova(scores, n_classes))
    return estimate_ova(scores, n_classes)


def evaluate(model: ScorerModel, data: Dataset, kind=None) -> Evaluation:
    """Decisions, paired probability estimates and per-sample 0-1-deferral losses."""
    kind = LossKind(kind if kind is not None else (model.loss or LossKind.ASM))
    scores = forward(model, data.features)
    decisions = decide_batch(scores, model.n_classes)
    return Evaluation(decisions, estimator_for(kind, scores, model.n_classes),
                      deferral_losses(decisions, data.labels, data.experts))

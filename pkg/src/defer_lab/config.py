"""Run configuration: JSON schema, validation and defaults."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .metrics import DEFAULT_BUDGETS, DEFAULT_ECE_BINS
from .oracle import SyntheticSpec
from .surrogates import LossKind

MODES = ("train", "evaluate", "simulate", "verify")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ExpertConfig(_Strict):
    k: int = Field(ge=1)
    p: float = Field(ge=0.0, le=1.0)


class SyntheticConfig(_Strict):
    k_classes: int = Field(ge=2)
    feature_dim: int = Field(ge=1)
    class_means: list[list[float]]
    sigma: float = Field(gt=0.0)
    experts: list[ExpertConfig] = Field(min_length=1)
    n: int = Field(ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _shapes(self):
        if len(self.class_means) != self.k_classes or any(
                len(row) != self.feature_dim for row in self.class_means):
            raise ValueError(f"class_means must be {self.k_classes} x {self.feature_dim}")
        for e in self.experts:
            if e.k > self.k_classes:
                raise ValueError(f"expert k={e.k} exceeds k_classes={self.k_classes}")
        return self

    def to_spec(self, n: int | None = None, seed: int | None = None) -> SyntheticSpec:
        return SyntheticSpec(
            k_classes=self.k_classes,
            feature_dim=self.feature_dim,
            class_means=self.class_means,
            sigma=self.sigma,
            experts=[{"k": e.k, "p": e.p} for e in self.experts],
            n=self.n if n is None else n,
            seed=self.seed if seed is None else seed,
        )


class CsvConfig(_Strict):
    train: str
    test: Optional[str] = None
    k_classes: int = Field(ge=2)
    n_experts: int = Field(default=1, ge=1)


class DataConfig(_Strict):
    synthetic: Optional[SyntheticConfig] = None
    csv: Optional[CsvConfig] = None
    # synthetic only: size of a held-out draw made with seed + 1
    n_test: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _one_source(self):
        if (self.synthetic is None) == (self.csv is None):
            raise ValueError("exactly one of 'synthetic' or 'csv' must be given")
        if self.csv is not None and self.n_test is not None:
            raise ValueError("n_test applies to synthetic data only; give csv.test instead")
        return self

    @property
    def n_classes(self) -> int:
        return self.synthetic.k_classes if self.synthetic else self.csv.k_classes

    @property
    def n_experts(self) -> int:
        return len(self.synthetic.experts) if self.synthetic else self.csv.n_experts


class ModelConfig(_Strict):
    arch: Literal["linear", "mlp"] = "mlp"
    hidden: int = Field(default=32, ge=1)


class TrainSection(_Strict):
    optimizer: Literal["sgd_cosine", "adam"] = "adam"
    lr: float = Field(default=1e-3, ge=0.0)
    epochs: int = Field(default=200, ge=1)
    batch_size: int = Field(default=128, ge=1)
    weight_decay: float = Field(default=0.0, ge=0.0)


class VerifyConfig(_Strict):
    gradient: int = Field(default=100, ge=1)
    boundedness: int = Field(default=100_000, ge=1)
    recovery: int = Field(default=1000, ge=1)
    equivalence: int = Field(default=10_000, ge=1)
    regret: int = Field(default=10_000, ge=1)
    multi_expert: int = Field(default=200, ge=1)


class RunConfig(_Strict):
    mode: Optional[Literal["train", "evaluate", "simulate", "verify"]] = None
    loss: LossKind = LossKind.ASM
    model: ModelConfig = ModelConfig()
    train: TrainSection = TrainSection()
    data: Optional[DataConfig] = None
    budgets: list[float] = Field(default_factory=lambda: list(DEFAULT_BUDGETS))
    ece_bins: int = Field(default=DEFAULT_ECE_BINS, ge=1)
    hist_bins: int = Field(default=10, ge=1)
    out_dir: str = "runs"
    seed: int = 0
    checkpoint: Optional[str] = None
    verify: VerifyConfig = VerifyConfig()

    @field_validator("budgets")
    @classmethod
    def _budget_range(cls, v):
        for b in v:
            if not 0.0 <= b <= 1.0:
                raise ValueError(f"budget {b} outside [0, 1]")
        return v

    @model_validator(mode="after")
    def _consistency(self):
        if self.data is not None and self.loss is not LossKind.ASM_MULTI and self.data.n_experts != 1:
            raise ValueError(f"loss {self.loss.value} supports one expert; data has {self.data.n_experts}")
        return self

    def resolved(self) -> dict:
        return self.model_dump(mode="json")


def _format_errors(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        parts.append(f"{path}: {e['msg']}")
    return "; ".join(parts)


def config_from_dict(doc: dict, **overrides) -> RunConfig:
    doc = dict(doc)
    doc.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as err:
        raise ConfigError(_format_errors(err)) from None


def parse_config(path, **overrides) -> RunConfig:
    """Load and validate a JSON run config; unknown keys are rejected."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    if not isinstance(doc, dict):
        raise ConfigError("<root>: config must be a JSON object")
    return config_from_dict(doc, **overrides)

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray
    label: int
    experts: tuple[int, ...]


@dataclass
class Dataset:
    """Column-wise storage of labeled samples.

    ``features`` is ``(n, d)``, ``labels`` is ``(n,)`` and ``experts`` is
    ``(n, M)``; labels and expert predictions are 0-indexed class ids.
    """

    features: np.ndarray
    labels: np.ndarray
    experts: np.ndarray

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        experts = np.asarray(self.experts, dtype=np.int64)
        if experts.ndim == 1:
            experts = experts[:, None]
        self.experts = experts
        n = self.features.shape[0]
        if self.labels.shape[0] != n or self.experts.shape[0] != n:
            raise InvalidInputError("features, labels and experts disagree on row count")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def __getitem__(self, i: int) -> LabeledSample:
        return LabeledSample(self.features[i].copy(), int(self.labels[i]),
                             tuple(int(v) for v in self.experts[i]))

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_experts(self) -> int:
        return self.experts.shape[1]

    def take(self, index) -> "Dataset":
        return Dataset(self.features[index], self.labels[index], self.experts[index])

    @classmethod
    def from_samples(cls, samples) -> "Dataset":
        samples = list(samples)
        if not samples:
            raise InvalidInputError("no samples")
        return cls(np.stack([s.features for s in samples]),
                   [s.label for s in samples],
                   [list(s.experts) for s in samples])

"""CSV datasets and JSON artifacts.

Dataset files have a header ``x0..x{d-1},y,m0..m{M-1}``; labels and expert
predictions are 0-indexed. Floats are written with ``repr`` so a write/read
round trip is exact.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .errors import DatasetError

log = logging.getLogger(__name__)


def _header(d: int, m: int) -> list[str]:
    return [f"x{i}" for i in range(d)] + ["y"] + [f"m{j}" for j in range(m)]


def write_dataset(path, data: Dataset) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_header(data.feature_dim, data.n_experts))
        for x, y, m in zip(data.features, data.labels, data.experts):
            w.writerow([repr(float(v)) for v in x] + [int(y)] + [int(v) for v in m])


def _parse_header(header: list[str], n_experts: int | None):
    header = [h.strip() for h in header]
    if "y" not in header:
        raise DatasetError("header has no 'y' column", row=1)
    split = header.index("y")
    d = split
    m = len(header) - split - 1
    if d < 1 or m < 1 or header != _header(d, m):
        raise DatasetError(f"header must read x0..x{{d-1}},y,m0..m{{M-1}}; got {header}", row=1)
    if n_experts is not None and m != n_experts:
        raise DatasetError(f"file has {m} expert columns, expected {n_experts}", row=1)
    return d, m


def _parse_index(text: str, what: str, n_classes: int, row: int) -> int:
    try:
        value = int(text)
    except ValueError:
        raise DatasetError(f"{what} {text!r} is not an integer", row=row) from None
    if not 0 <= value < n_classes:
        raise DatasetError(f"{what} {value} outside [0, {n_classes})", row=row)
    return value


def load_dataset(path, n_classes: int, n_experts: int | None = None) -> Dataset:
    """Read a dataset CSV.

    Raises:
        DatasetError: with the offending line number for ragged rows,
            non-numeric or non-finite features, or out-of-range labels.
    """
    path = Path(path)
    try:
        fh = path.open(newline="")
    except FileNotFoundError:
        raise DatasetError(f"dataset file not found: {path}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetError(f"{path} is empty")
        d, m = _parse_header(header, n_experts)
        features, labels, experts = [], [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1 + m:
                raise DatasetError(f"expected {d + 1 + m} fields, got {len(row)}", row=line)
            try:
                x = [float(v) for v in row[:d]]
            except ValueError:
                raise DatasetError("non-numeric feature", row=line) from None
            if not all(math.isfinite(v) for v in x):
                raise DatasetError("non-finite feature", row=line)
            features.append(x)
            labels.append(_parse_index(row[d], "label", n_classes, line))
            experts.append([_parse_index(v, "expert prediction", n_classes, line) for v in row[d + 1:]])
    if not labels:
        raise DatasetError(f"{path} has a header but no samples")
    log.info("loaded %s: %d rows, d=%d, M=%d", path, len(labels), d, m)
    return Dataset(np.array(features), np.array(labels), np.array(experts))


def write_truth(path, eta: np.ndarray, expert_acc: np.ndarray) -> None:
    path = Path(path)
    K, M = eta.shape[1], expert_acc.shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"eta{i}" for i in range(K)] + [f"p{j}" for j in range(M)])
        for e, p in zip(eta, expert_acc):
            w.writerow([repr(float(v)) for v in e] + [repr(float(v)) for v in p])


def write_histogram(path, hist) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count_estimated", "count_true"])
        for lo, hi, est, true in hist.rows():
            w.writerow([repr(lo), repr(hi), est, true])


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())

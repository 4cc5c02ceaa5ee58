"""Datasets, train/validation/test splits and linearly-scaled error measures."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels as K


class DataError(ValueError):
    """Raised for unreadable or unusable datasets."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    target: np.ndarray
    name: str = "data"

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.target, dtype=np.float64)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise DataError(f"{self.name}: features {X.shape} and target {y.shape} disagree")
        if X.shape[0] < 4:
            raise DataError(f"{self.name}: need at least 4 rows, got {X.shape[0]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DataError(f"{self.name}: non-finite values")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "target", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> tuple[np.ndarray, np.ndarray]:
        return self.features[idx], self.target[idx]


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


@dataclass(frozen=True)
class ScaledFitness:
    a: float
    b: float
    mse: float
    nmse: float


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path, name: str | None = None) -> Dataset:
    """Read a numeric CSV; the last column is the target.

    A first row containing any non-numeric cell is treated as a header.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    if not rows:
        raise DataError(f"{path}: empty file")
    start = 0 if all(_is_number(c) for c in rows[0]) else 1
    if start == len(rows):
        raise DataError(f"{path}: header but no data rows")
    width = len(rows[start])
    if width < 2:
        raise DataError(f"{path}: need at least one feature and a target column")
    data = np.empty((len(rows) - start, width))
    for i, row in enumerate(rows[start:], start=start + 1):
        if len(row) != width:
            raise DataError(f"{path}: row {i} has {len(row)} fields, expected {width}")
        for j, cell in enumerate(row):
            try:
                data[i - start - 1, j] = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {i}, column {j + 1}: not a number: {cell!r}") from None
    return Dataset(data[:, :-1], data[:, -1], name or path.stem)


def split(dataset: Dataset, rng: np.random.Generator) -> SplitIndices:
    """Random 50/25/25 partition; floor on train and validation, rest to test."""
    n = dataset.n if isinstance(dataset, Dataset) else int(dataset)
    if n < 4:
        raise DataError("need at least 4 rows to split")
    perm = rng.permutation(n)
    n_train, n_val = n // 2, n // 4
    return SplitIndices(perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])


def linear_scale(y, p) -> tuple[float, float]:
    """Intercept and slope of the least-squares fit ``y ~ a + b p``."""
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    _, a, b = K.scaled_mse(y, p)
    return float(a), float(b)


def scaled_mse(y, p) -> float:
    """MSE after optimal linear scaling of ``p``; ``inf`` for non-finite ``p``."""
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    return float(K.scaled_mse(y, p)[0])


def scaled_fitness(y, p) -> ScaledFitness:
    y = np.asarray(y, dtype=np.float64)
    mse, a, b = K.scaled_mse(y, np.asarray(p, dtype=np.float64))
    return ScaledFitness(float(a), float(b), float(mse), 100.0 * float(mse) / _variance(y))


def _variance(y: np.ndarray) -> float:
    var = float(np.var(y))
    if not var > 0.0:
        raise DataError("target has zero variance; NMSE undefined")
    return var


def nmse(y, p) -> float:
    """100 * scaled MSE / var(y)."""
    y = np.asarray(y, dtype=np.float64)
    return 100.0 * scaled_mse(y, p) / _variance(y)


def nmse_fixed(y, p, a: float, b: float) -> float:
    """100 * MSE(y, a + b p) / var(y) with a given (typically training) scale."""
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(all="ignore"):
        err = float(np.mean((y - (a + b * p)) ** 2))
    if not np.isfinite(err):
        err = np.inf
    return 100.0 * err / _variance(y)


class TrainingData:
    """Feature matrix and target prepared for the compiled evaluators."""

    def __init__(self, X, y):
        self.X = np.asarray(X, dtype=np.float64)
        self.y = np.ascontiguousarray(y, dtype=np.float64)
        self.XT = np.ascontiguousarray(self.X.T)
        if self.X.shape[0] != self.y.shape[0] or self.y.shape[0] == 0:
            raise DataError("features and target disagree in length")

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

"""Symbolic-regression datasets: formula generators, CSV loading and splitting."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace

import numpy as np

from ..gp.evolve import RegressionTask
from ..gp.primitives import PrimitiveSet, default_pset


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class RegressionDataset:
    X: np.ndarray
    y: np.ndarray
    name: str = "dataset"
    train_idx: np.ndarray | None = None
    test_idx: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=np.float64).ravel()
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        for arr in (X, y):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if (self.train_idx is None) != (self.test_idx is None):
            raise ValueError("give both split index arrays or neither")
        if self.train_idx is not None:
            tr = np.asarray(self.train_idx, dtype=np.int64)
            te = np.asarray(self.test_idx, dtype=np.int64)
            both = np.concatenate([tr, te])
            if both.size != self.n_rows or not np.array_equal(np.sort(both), np.arange(self.n_rows)):
                raise ValueError("train/test split must be disjoint and cover every row")
            object.__setattr__(self, "train_idx", tr)
            object.__setattr__(self, "test_idx", te)

    @property
    def n_rows(self) -> int:
        return int(self.X.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.X.shape[1])

    def split(self, test_fraction: float = 0.1, seed: int = 0) -> "RegressionDataset":
        tr, te = train_test_split(self.n_rows, test_fraction, seed)
        return replace(self, train_idx=tr, test_idx=te)

    def task(self, pset: PrimitiveSet | None = None,
             const_range: tuple[float, float] | None = (-1.0, 1.0)) -> RegressionTask:
        ds = self if self.train_idx is not None else self.split(0.0)
        pset = pset or default_pset(self.n_features, const_range)
        return RegressionTask.from_arrays(ds.X, ds.y, ds.train_idx, ds.test_idx, pset)


def train_test_split(n_rows: int, test_fraction: float, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Shuffled ``(train, test)`` row indices with ``round(test_fraction * n)`` test rows."""
    if not 0.0 <= test_fraction <= 1.0:
        raise ValueError(f"test_fraction must lie in [0, 1], got {test_fraction}")
    perm = np.random.default_rng(seed).permutation(n_rows)
    n_test = int(round(test_fraction * n_rows))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


# -- generators ---------------------------------------------------------------------

def _check_n(n: int) -> None:
    if n <= 0:
        raise ValueError(f"row count must be positive, got {n}")


def friedman1(X: np.ndarray) -> np.ndarray:
    x0, x1, x2, x3, x4 = (X[:, i] for i in range(5))
    return 10 * np.sin(np.pi * x0 * x1) + 20 * (x2 - 0.5) ** 2 + 10 * x3 + 5 * x4


def friedman2(X: np.ndarray) -> np.ndarray:
    # printed form: the reciprocal uses x2*x4 where the classical one has x1*x3
    x0, x1, x2, x4 = X[:, 0], X[:, 1], X[:, 2], X[:, 4]
    with np.errstate(divide="ignore", invalid="ignore"):
        return (x0 ** 2 + (x1 * x2 - 1 / (x2 * x4)) ** 2) ** 0.5


def friedman3(X: np.ndarray) -> np.ndarray:
    x0, x1, x2, x3 = X[:, 0], X[:, 1], X[:, 2], X[:, 3]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.arctan((x1 * x2 - 1 / (x1 * x3)) / x0)


def f2(X: np.ndarray) -> np.ndarray:
    return (X[:, 0] - 3) ** 4 + (X[:, 1] - 2) ** 3


def non_analytic(X: np.ndarray) -> np.ndarray:
    x = X[:, 0]
    return np.where(x > 0, (x + 1) ** 2, np.sin(x))


FORMULAS = {"friedman1": friedman1, "friedman2": friedman2, "friedman3": friedman3,
            "f2": f2, "non_analytic": non_analytic}

# Friedman-2/3 columns: x0, x1, x2, x3, x4
_F23_LOW = np.array([0.0, 40 * np.pi, 0.0, 1.0, 0.0])
_F23_HIGH = np.array([100.0, 560 * np.pi, 1.0, 11.0, 1.0])


def gen_friedman(which: int, n: int = 5000, noise: float = 0.0, seed: int = 0,
                 n_features: int = 5) -> RegressionDataset:
    """Friedman problem ``which`` (1, 2 or 3) with ``noise * N(0, 1)`` added to y.

    Friedman-1 draws every column from U[0, 1]; extra columns beyond five are
    irrelevant to y.
    """
    _check_n(n)
    rng = np.random.default_rng(seed)
    if which == 1:
        if n_features < 5:
            raise ValueError("Friedman-1 needs at least 5 features")
        X = rng.uniform(0.0, 1.0, (n, n_features))
    elif which in (2, 3):
        X = rng.uniform(_F23_LOW, _F23_HIGH, (n, 5))
    else:
        raise ValueError(f"unknown Friedman problem {which}")
    y = FORMULAS[f"friedman{which}"](X)
    if noise:
        y = y + noise * rng.standard_normal(n)
    return RegressionDataset(X, y, f"friedman{which}")


def gen_f2(n: int = 5000, seed: int = 0) -> RegressionDataset:
    _check_n(n)
    X = np.random.default_rng(seed).uniform(-10.0, 10.0, (n, 2))
    return RegressionDataset(X, f2(X), "f2")


def gen_nonanalytic(n: int = 5000, seed: int = 0) -> RegressionDataset:
    _check_n(n)
    X = np.random.default_rng(seed).uniform(-10.0, 10.0, (n, 1))
    return RegressionDataset(X, non_analytic(X), "non_analytic")


# -- CSV -----------------------------------------------------------------------------

def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path: str | os.PathLike, target_column: int | str = -1,
             expect_shape: tuple[int, int] | None = None, name: str | None = None,
             delimiter: str | None = None) -> RegressionDataset:
    """Numeric CSV; a first row with any non-numeric cell is taken as a header.

    ``target_column`` is an index or (with a header) a column name.
    ``expect_shape`` is ``(rows, features)`` excluding the target.
    """
    path = os.fspath(path)
    with open(path, newline="") as fh:
        text = fh.read()
    if delimiter is None:
        first = text.split("\n", 1)[0]
        delimiter = "\t" if "\t" in first else ";" if ";" in first else ","
    rows = [(i, r) for i, r in enumerate(csv.reader(text.splitlines(), delimiter=delimiter), start=1)
            if r and any(c.strip() for c in r)]
    if not rows:
        raise DatasetFormatError(f"{path}: no data rows")
    header = None
    if not all(_is_number(c) for c in rows[0][1]):
        header = [c.strip() for c in rows[0][1]]
        rows = rows[1:]
    if not rows:
        raise DatasetFormatError(f"{path}: header but no data rows")
    width = len(header) if header else len(rows[0][1])
    data = np.empty((len(rows), width))
    for r, (lineno, cells) in enumerate(rows):
        if len(cells) != width:
            raise DatasetFormatError(f"{path}:{lineno}: expected {width} columns, got {len(cells)}")
        for c, cell in enumerate(cells):
            try:
                data[r, c] = float(cell)
            except ValueError:
                raise DatasetFormatError(
                    f"{path}:{lineno}: column {c + 1} is not numeric: {cell!r}") from None
    if isinstance(target_column, str):
        if header is None or target_column not in header:
            raise DatasetFormatError(f"{path}: no column named {target_column!r}")
        target = header.index(target_column)
    else:
        target = target_column % width
    X = np.delete(data, target, axis=1)
    if expect_shape is not None and X.shape != tuple(expect_shape):
        raise DatasetFormatError(f"{path}: expected shape {tuple(expect_shape)}, got {X.shape}")
    return RegressionDataset(X, data[:, target], name or os.path.splitext(os.path.basename(path))[0])


def save_csv(dataset: RegressionDataset, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(dataset.n_features)] + ["y"])
        for row, target in zip(dataset.X, dataset.y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(target))])

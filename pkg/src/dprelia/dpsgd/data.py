"""Datasets: CSV files (header row, label in the last column) and synthetic Gaussian blobs.

A dataset id is either a CSV path or a blob spec such as
``blobs:n=2000,dims=20,classes=2,sep=1.0,seed=0``. The last ``test_fraction``
of the rows (default 0.2) is held out as the test split.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from .. import rng as rngmod
from ..errors import InvalidInputError

TEST_FRACTION = 0.2

BLOB_DEFAULTS = {"n": 2000, "dims": 20, "classes": 2, "sep": 1.0, "seed": 0}


@dataclass(frozen=True)
class Dataset:
    dataset_id: str
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.X_train.shape[1]

    @property
    def num_classes(self) -> int:
        return int(max(self.y_train.max(), self.y_test.max())) + 1

    @property
    def n_train(self) -> int:
        return self.X_train.shape[0]


def make_blobs(n: int, dims: int, classes: int = 2, sep: float = 1.0, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Isotropic unit-variance Gaussian clusters whose centres sit at distance ``sep`` from the origin."""
    if n < classes or dims < 1 or classes < 2:
        raise InvalidInputError(f"bad blob parameters n={n}, dims={dims}, classes={classes}")
    gen = rngmod.stream(seed, rngmod.DATA)
    directions = gen.normal(size=(classes, dims))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    centres = sep * directions
    y = np.arange(n) % classes
    gen.shuffle(y)
    X = centres[y] + gen.normal(size=(n, dims))
    return X, y.astype(np.int64)


def write_csv(path: str | Path, X: np.ndarray, y: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(X.shape[1])] + ["label"])
        for row, label in zip(X, y):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


def read_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InvalidInputError(f"cannot read dataset {path}: {exc}") from exc
    if len(rows) < 2:
        raise InvalidInputError(f"dataset {path} has no data rows")
    body = rows[1:]
    width = len(rows[0])
    if any(len(r) != width for r in body):
        raise InvalidInputError(f"dataset {path} has ragged rows")
    try:
        X = np.array([[float(v) for v in r[:-1]] for r in body])
        y = np.array([int(float(r[-1])) for r in body], dtype=np.int64)
    except ValueError as exc:
        raise InvalidInputError(f"non-numeric value in {path}: {exc}") from exc
    if y.min() < 0:
        raise InvalidInputError(f"negative label in {path}")
    return X, y


def parse_blob_spec(dataset_id: str) -> dict:
    if not dataset_id.startswith("blobs"):
        raise InvalidInputError(f"not a blob spec: {dataset_id!r}")
    params = dict(BLOB_DEFAULTS)
    _, _, rest = dataset_id.partition(":")
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, eq, value = item.partition("=")
        if not eq or key not in BLOB_DEFAULTS:
            raise InvalidInputError(f"bad blob parameter {item!r} in {dataset_id!r}")
        params[key] = float(value) if key == "sep" else int(value)
    return params


def split(dataset_id: str, X: np.ndarray, y: np.ndarray, test_fraction: float = TEST_FRACTION) -> Dataset:
    n_test = int(math.floor(len(y) * test_fraction))
    if n_test < 1 or n_test >= len(y):
        raise InvalidInputError(f"dataset {dataset_id!r} too small to split ({len(y)} rows)")
    cut = len(y) - n_test
    return Dataset(dataset_id, X[:cut], y[:cut], X[cut:], y[cut:])


@lru_cache(maxsize=32)
def load_dataset(dataset_id: str, test_fraction: Optional[float] = None) -> Dataset:
    frac = TEST_FRACTION if test_fraction is None else test_fraction
    if dataset_id.startswith("blobs"):
        X, y = make_blobs(**parse_blob_spec(dataset_id))
    else:
        X, y = read_csv(dataset_id)
    ds = split(dataset_id, X, y, frac)
    for arr in (ds.X_train, ds.y_train, ds.X_test, ds.y_test):
        arr.setflags(write=False)
    return ds

"""Trial scoring between two supervectors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionMismatch
from .supervector import Supervector

METHODS = ("cosine", "inner_product")


@dataclass(frozen=True)
class TrialScore:
    value: float
    method: str


def _dot(x: Supervector, y: Supervector) -> float:
    if x.length != y.length:
        raise DimensionMismatch(f"supervector lengths differ: {x.length} vs {y.length}")
    if x.indices is None and y.indices is None:
        return float(np.dot(x.values, y.values))
    if x.indices is not None and y.indices is not None:
        # walk the smaller map; products are taken in ascending index order
        # either way, so the result is symmetric
        small, large = (x, y) if x.indices.size <= y.indices.size else (y, x)
        if large.indices.size == 0:
            return 0.0
        pos = np.minimum(np.searchsorted(large.indices, small.indices), large.indices.size - 1)
        hit = large.indices[pos] == small.indices
        a, b = small.values[hit], large.values[pos[hit]]
    else:
        sparse, dense = (x, y) if x.indices is not None else (y, x)
        a, b = sparse.values, dense.values[sparse.indices]
    return float(np.dot(a, b))


def norm(x: Supervector) -> float:
    v = x.values
    return math.sqrt(float(np.dot(v, v)))


def inner_product(x: Supervector, y: Supervector) -> TrialScore:
    return TrialScore(_dot(x, y), "inner_product")


def cosine(x: Supervector, y: Supervector) -> TrialScore:
    nx, ny = norm(x), norm(y)
    if nx == 0.0 or ny == 0.0:
        raise DataError("zero vector: cosine similarity is undefined")
    return TrialScore(_dot(x, y) / (nx * ny), "cosine")


def score(x: Supervector, y: Supervector, method: str) -> float:
    if method == "cosine":
        return cosine(x, y).value
    if method in ("inner_product", "inner"):
        return inner_product(x, y).value
    raise DataError(f"unknown scoring method {method!r}")


def l2_normalize(x: Supervector) -> Supervector:
    n = norm(x)
    if n == 0.0:
        raise DataError("zero vector cannot be normalized")
    return x.scaled(1.0 / n)

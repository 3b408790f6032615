"""Utterance-level supervectors and their on-disk format."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagic, DataError, TruncatedFile, VersionMismatch

SUPERVECTOR_MAGIC = b"UBSV"
SUPERVECTOR_VERSION = 1
KINDS = {"ubsc": 1, "gmm": 2}
_KIND_NAMES = {v: k for k, v in KINDS.items()}
# UBSC supervectors longer than this are kept as (index, value) pairs
DENSE_LIMIT = 4096

_HEADER = struct.Struct("<4sIBQQ")
_PAIR = np.dtype([("index", "<u8"), ("value", "<f4")])


@dataclass(frozen=True)
class Supervector:
    """A length-``length`` vector, stored densely or as sorted (index, value) pairs.

    ``indices is None`` means ``values`` is the full dense vector.
    """

    kind: str
    length: int
    values: np.ndarray
    indices: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown supervector kind {self.kind!r}")
        if self.indices is None and self.values.shape != (self.length,):
            raise DataError("dense supervector values do not match its length")
        if self.indices is not None and self.indices.shape != self.values.shape:
            raise DataError("sparse supervector indices and values differ in size")

    @classmethod
    def from_dense(cls, kind: str, dense) -> "Supervector":
        dense = np.asarray(dense, dtype=np.float64)
        if kind == "ubsc" and dense.size > DENSE_LIMIT:
            idx = np.flatnonzero(dense)
            return cls(kind, dense.size, dense[idx], idx.astype(np.int64))
        return cls(kind, dense.size, dense)

    @classmethod
    def from_pairs(cls, kind: str, length: int, indices, values) -> "Supervector":
        indices = np.asarray(indices, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        order = np.argsort(indices, kind="stable")
        indices, values = indices[order], values[order]
        if indices.size and (indices[0] < 0 or indices[-1] >= length):
            raise DataError("supervector index out of range")
        if np.any(np.diff(indices) == 0):
            raise DataError("duplicate supervector index")
        if kind == "ubsc" and length > DENSE_LIMIT:
            return cls(kind, length, values, indices)
        dense = np.zeros(length)
        dense[indices] = values
        return cls(kind, length, dense)

    @property
    def is_sparse(self) -> bool:
        return self.indices is not None

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """Non-zero (indices, values), indices ascending."""
        if self.indices is not None:
            keep = self.values != 0
            return self.indices[keep], self.values[keep]
        idx = np.flatnonzero(self.values)
        return idx, self.values[idx]

    def to_dense(self) -> np.ndarray:
        if self.indices is None:
            return self.values.copy()
        out = np.zeros(self.length)
        out[self.indices] = self.values
        return out

    def scaled(self, factor: float) -> "Supervector":
        return Supervector(self.kind, self.length, self.values * factor,
                           None if self.indices is None else self.indices.copy())


def write_supervector(path, sv: Supervector) -> None:
    idx, vals = sv.support()
    pairs = np.empty(idx.size, dtype=_PAIR)
    pairs["index"] = idx
    pairs["value"] = vals
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SUPERVECTOR_MAGIC, SUPERVECTOR_VERSION, KINDS[sv.kind],
                              sv.length, idx.size))
        fh.write(pairs.tobytes())


def read_supervector(path) -> Supervector:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TruncatedFile(f"{path}: truncated supervector header")
    magic, version, kind, length, nnz = _HEADER.unpack_from(data)
    if magic != SUPERVECTOR_MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != SUPERVECTOR_VERSION:
        raise VersionMismatch(f"{path}: unsupported supervector version {version}")
    if kind not in _KIND_NAMES:
        raise DataError(f"{path}: unknown supervector kind {kind}")
    if len(data) != _HEADER.size + nnz * _PAIR.itemsize:
        raise TruncatedFile(f"{path}: supervector payload size mismatch")
    pairs = np.frombuffer(data, dtype=_PAIR, offset=_HEADER.size)
    return Supervector.from_pairs(_KIND_NAMES[kind], length,
                                  pairs["index"].astype(np.int64), pairs["value"])

"""Universal background sparse coding.

The background model is an ensemble of ``V`` codebooks, each ``k`` frames
drawn without replacement from the pooled training frames. A frame is coded
per codebook as a one-hot vector at its nearest center; an utterance's
supervector is the frame average of the concatenated codes.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    ConfigError,
    DataError,
    DimensionMismatch,
    EmptyUtterance,
    PoolTooSmall,
    TruncatedFile,
    VersionMismatch,
    WrongModelKind,
)
from .supervector import DENSE_LIMIT, Supervector

MODEL_MAGIC = b"UBSM"
MODEL_VERSION = 1
KIND_UBSC = 1
KIND_GMM = 2
_PREFIX = struct.Struct("<4sIB")
_UBSC_HEADER = struct.Struct("<4sIBIIIQ")

# relative slack under which two expanded distances are re-checked exactly
_TIE_RTOL = 1e-11
# distance-matrix budget per block, in float64 entries
_BLOCK_ENTRIES = 1 << 22


@dataclass(frozen=True)
class UbscModel:
    centers: np.ndarray  # (V, k, d) float32
    seed: int = 0
    # pool row indices each center came from; not persisted
    source_indices: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        c = self.centers
        if c.ndim != 3 or min(c.shape) < 1:
            raise DataError("centers must have shape (V, k, d) with V, k, d >= 1")
        if c.dtype != np.float32:
            raise DataError("centers are stored as float32")
        if not np.all(np.isfinite(c)):
            raise DataError("non-finite center values")

    @property
    def V(self) -> int:
        return self.centers.shape[0]

    @property
    def k(self) -> int:
        return self.centers.shape[1]

    @property
    def dim(self) -> int:
        return self.centers.shape[2]

    def __eq__(self, other):
        if not isinstance(other, UbscModel):
            return NotImplemented
        return self.seed == other.seed and np.array_equal(self.centers, other.centers)


def _as_pool(pool) -> np.ndarray:
    if isinstance(pool, (list, tuple)):
        pool = np.concatenate([np.asarray(u) for u in pool], axis=0)
    pool = np.asarray(pool)
    if pool.ndim != 2:
        raise DimensionMismatch("training pool must be an (n, d) matrix")
    return pool


def train_ubsc(pool, k: int, V: int, seed: int) -> UbscModel:
    """Draw ``V`` independent codebooks of ``k`` distinct pool frames each."""
    if k < 1 or V < 1:
        raise ConfigError("k and V must be >= 1")
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    pool = _as_pool(pool)
    n = pool.shape[0]
    if n < k:
        raise PoolTooSmall(f"pool smaller than k: {n} frames, k={k}")
    if not np.all(np.isfinite(pool)):
        raise DataError("non-finite values in training pool")
    rng = np.random.default_rng(seed)
    picks = np.stack([rng.choice(n, size=k, replace=False) for _ in range(V)])
    centers = pool[picks].astype(np.float32)
    return UbscModel(centers, seed=seed, source_indices=picks)


def nearest_centers(frames, centers) -> np.ndarray:
    """Index of the nearest center (squared Euclidean) for every frame.

    Ties go to the lowest index. Candidates within rounding distance of the
    minimum of the expanded ``|w|^2 - 2 x.w`` form are re-ranked on the
    direct difference, so the result does not depend on BLAS rounding.
    """
    X = np.asarray(frames, dtype=np.float64)
    W = np.asarray(centers, dtype=np.float64)
    if X.ndim != 2 or W.ndim != 2 or X.shape[1] != W.shape[1]:
        raise DimensionMismatch(f"frames {X.shape} and centers {W.shape} do not match")
    ww = np.einsum("ij,ij->i", W, W)
    xx = np.einsum("ij,ij->i", X, X)
    scale = ww.max()
    block = max(1, _BLOCK_ENTRIES // W.shape[0])
    out = np.empty(X.shape[0], dtype=np.int64)
    for start in range(0, X.shape[0], block):
        xb = X[start:start + block]
        dist = xb @ W.T
        dist *= -2.0
        dist += ww
        best = np.argmin(dist, axis=1)
        dmin = dist[np.arange(xb.shape[0]), best]
        tol = _TIE_RTOL * (xx[start:start + block] + scale)
        close = dist <= (dmin + tol)[:, None]
        for row in np.flatnonzero(close.sum(axis=1) > 1):
            cand = np.flatnonzero(close[row])
            diff = W[cand] - xb[row]
            exact = np.einsum("ij,ij->i", diff, diff)
            best[row] = cand[np.argmin(exact)]
        out[start:start + block] = best
    return out


def encode_frame(x, codebook) -> np.ndarray:
    """One-hot code of ``x`` against a single ``(k, d)`` codebook."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch("encode_frame takes a single d-dim vector")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite input frame")
    codebook = np.asarray(codebook)
    j = nearest_centers(x[None, :], codebook)[0]
    code = np.zeros(codebook.shape[0])
    code[j] = 1.0
    return code


def _check_utterance(X, model: UbscModel) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyUtterance("empty utterance")
    if X.shape[1] != model.dim:
        raise DimensionMismatch(f"utterance dim {X.shape[1]} != model dim {model.dim}")
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite values in utterance")
    return X


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def sparse_codes(X, model: UbscModel, threads: int = 1) -> np.ndarray:
    """Winning center per frame and base model, shape ``(N, V)``."""
    X = _check_utterance(X, model)
    cols = _map(lambda v: nearest_centers(X, model.centers[v]), range(model.V), threads)
    return np.stack(cols, axis=1)


def supervector(X, model: UbscModel, threads: int = 1) -> Supervector:
    """Frame-averaged concatenated one-hot codes (length ``V * k``).

    Each k-block holds integer counts divided by N, so the result is exact and
    independent of ``threads``.
    """
    codes = sparse_codes(X, model, threads)
    n, k = codes.shape[0], model.k
    idx_parts, val_parts = [], []
    for v in range(model.V):
        counts = np.bincount(codes[:, v], minlength=k)
        nz = np.flatnonzero(counts)
        idx_parts.append(nz + v * k)
        val_parts.append(counts[nz] / n)
    indices = np.concatenate(idx_parts)
    values = np.concatenate(val_parts)
    length = model.V * k
    if length > DENSE_LIMIT:
        return Supervector("ubsc", length, values, indices)
    dense = np.zeros(length)
    dense[indices] = values
    return Supervector("ubsc", length, dense)


def write_ubsc_model(path, model: UbscModel) -> None:
    header = _UBSC_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, KIND_UBSC,
                               model.V, model.k, model.dim, model.seed)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(model.centers, dtype="<f4").tobytes())


def model_kind(data: bytes, path="<model>") -> int:
    """Validate the shared model prefix and return the kind byte."""
    if len(data) < _PREFIX.size:
        raise TruncatedFile(f"{path}: truncated model")
    magic, version, kind = _PREFIX.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise VersionMismatch(f"{path}: unsupported model version {version}")
    return kind


def read_ubsc_model(path, dim: int | None = None) -> UbscModel:
    data = Path(path).read_bytes()
    kind = model_kind(data, path)
    if kind != KIND_UBSC:
        raise WrongModelKind(f"{path}: wrong model kind {kind}, expected UBSC ({KIND_UBSC})")
    if len(data) < _UBSC_HEADER.size:
        raise TruncatedFile(f"{path}: truncated model")
    _, _, _, V, k, d, seed = _UBSC_HEADER.unpack_from(data)
    if dim is not None and d != dim:
        raise DimensionMismatch(f"{path}: model dim {d}, expected {dim}")
    expected = _UBSC_HEADER.size + 4 * V * k * d
    if len(data) < expected:
        raise TruncatedFile(f"{path}: truncated model")
    if len(data) > expected:
        raise DataError(f"{path}: trailing bytes after model data")
    centers = np.frombuffer(data, dtype="<f4", offset=_UBSC_HEADER.size)
    return UbscModel(centers.reshape(V, k, d).astype(np.float32), seed=seed)

"""Diagonal-covariance GMM universal background model (the baseline).

Training follows the usual recipe for this baseline: every component starts
from the mean and variance of one randomly chosen training utterance with
equal priors, then plain EM runs for a fixed number of iterations. Utterances
are embedded by averaging posterior-weighted first- and second-order frame
statistics.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import KIND_GMM, MODEL_MAGIC, MODEL_VERSION, model_kind
from .errors import (
    ConfigError,
    DataError,
    DimensionMismatch,
    EmptyUtterance,
    NumericError,
    TruncatedFile,
    WrongModelKind,
)
from .supervector import Supervector

DEFAULT_FLOOR_FACTOR = 1e-4
# absolute lower bound so a constant pool dimension still gets a positive floor
_MIN_FLOOR = 1e-12
_EM_BLOCK = 4096
_LOG_2PI = math.log(2.0 * math.pi)
_GMM_HEADER = struct.Struct("<4sIBIIQd")


@dataclass(frozen=True)
class DiagonalGmm:
    weights: np.ndarray    # (M,)
    means: np.ndarray      # (M, d)
    variances: np.ndarray  # (M, d)
    var_floor: np.ndarray  # (d,)
    floor_factor: float = DEFAULT_FLOOR_FACTOR
    seed: int = 0

    def __post_init__(self):
        M, d = self.means.shape
        if self.weights.shape != (M,) or self.variances.shape != (M, d) \
                or self.var_floor.shape != (d,):
            raise DimensionMismatch("inconsistent GMM parameter shapes")

    @property
    def M(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def __eq__(self, other):
        if not isinstance(other, DiagonalGmm):
            return NotImplemented
        return (self.seed == other.seed and self.floor_factor == other.floor_factor
                and all(np.array_equal(getattr(self, f), getattr(other, f))
                        for f in ("weights", "means", "variances", "var_floor")))


def variance_floor(pool, factor: float = DEFAULT_FLOOR_FACTOR) -> np.ndarray:
    pool = np.asarray(pool, dtype=np.float64)
    return np.maximum(factor * pool.var(axis=0), _MIN_FLOOR)


def init_gmm(utterances, M: int, seed: int,
             floor_factor: float = DEFAULT_FLOOR_FACTOR) -> DiagonalGmm:
    """Start each component at the statistics of one random utterance.

    Utterances are drawn with replacement across components; those with fewer
    than two frames have no sample variance and are skipped.
    """
    if M < 1:
        raise ConfigError("M must be >= 1")
    utterances = [np.asarray(u, dtype=np.float64) for u in utterances]
    if not utterances:
        raise DataError("no utterances to initialize from")
    floor = variance_floor(np.concatenate(utterances), floor_factor)
    eligible = [u for u in utterances if u.shape[0] >= 2]
    if not eligible:
        raise DataError("no utterance with at least 2 frames to initialize from")
    rng = np.random.default_rng(seed)
    picks = rng.integers(len(eligible), size=M)
    means = np.stack([eligible[i].mean(axis=0) for i in picks])
    variances = np.stack([eligible[i].var(axis=0, ddof=1) for i in picks])
    return DiagonalGmm(np.full(M, 1.0 / M), means, np.maximum(variances, floor),
                       floor, floor_factor, seed)


def _log_weights(gmm):
    with np.errstate(divide="ignore"):
        return np.log(gmm.weights)


def _log_joint_fast(X, gmm: DiagonalGmm) -> np.ndarray:
    """log(w_c N(x; mu_c, var_c)) for a block of frames, via matrix products."""
    prec = 1.0 / gmm.variances
    const = _log_weights(gmm) - 0.5 * (gmm.dim * _LOG_2PI + np.log(gmm.variances).sum(axis=1))
    quad = (X * X) @ prec.T - 2.0 * (X @ (gmm.means * prec).T) \
        + np.sum(gmm.means ** 2 * prec, axis=1)
    return const - 0.5 * quad


def _log_joint_exact(X, gmm: DiagonalGmm) -> np.ndarray:
    """Same as the fast form but row-local, so a frame's value never depends
    on where it sits in the batch."""
    prec = 1.0 / gmm.variances
    const = _log_weights(gmm) - 0.5 * (gmm.dim * _LOG_2PI + np.log(gmm.variances).sum(axis=1))
    diff = X[:, None, :] - gmm.means[None, :, :]
    return const - 0.5 * np.sum(diff * diff * prec[None, :, :], axis=2)


def _normalize(log_joint):
    with np.errstate(divide="ignore", invalid="ignore"):
        top = log_joint.max(axis=1)
        if not np.all(np.isfinite(top)):
            row = int(np.flatnonzero(~np.isfinite(top))[0])
            raise NumericError(f"all component likelihoods underflow for frame {row}")
        lse = top + np.log(np.exp(log_joint - top[:, None]).sum(axis=1))
    return np.exp(log_joint - lse[:, None]), lse


def frame_posteriors(X, gmm: DiagonalGmm) -> np.ndarray:
    """Component posteriors for each frame, shape ``(N, M)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != gmm.dim:
        raise DimensionMismatch(f"frames {X.shape} do not match GMM dim {gmm.dim}")
    out = np.empty((X.shape[0], gmm.M))
    step = max(1, (1 << 21) // (gmm.M * gmm.dim))
    for s in range(0, X.shape[0], step):
        out[s:s + step] = _normalize(_log_joint_exact(X[s:s + step], gmm))[0]
    return out


def posteriors(x, gmm: DiagonalGmm) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch("posteriors takes a single d-dim vector")
    return frame_posteriors(x[None, :], gmm)[0]


def _estep_block(X, gmm):
    gamma, lse = _normalize(_log_joint_fast(X, gmm))
    return gamma.sum(axis=0), gamma.T @ X, gamma.T @ (X * X), float(lse.sum())


def _accumulate(X, gmm, threads):
    blocks = [X[s:s + _EM_BLOCK] for s in range(0, X.shape[0], _EM_BLOCK)]
    if threads <= 1:
        parts = [_estep_block(b, gmm) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda b: _estep_block(b, gmm), blocks))
    occ, first, second, ll = parts[0]
    occ, first, second = occ.copy(), first.copy(), second.copy()
    for o, f, s, l in parts[1:]:
        occ += o
        first += f
        second += s
        ll += l
    return occ, first, second, ll


def log_likelihood(gmm: DiagonalGmm, X, threads: int = 1) -> float:
    """Total log-likelihood of the frames under the mixture."""
    return _accumulate(np.asarray(X, dtype=np.float64), gmm, threads)[3]


def em_fit(gmm: DiagonalGmm, pool, iterations: int, threads: int = 1,
           history: list | None = None) -> DiagonalGmm:
    """Run exactly ``iterations`` EM steps.

    If ``history`` is given, the total log-likelihood before each step and
    after the last one is appended to it.
    """
    if iterations < 1:
        raise ConfigError("iterations must be >= 1")
    X = np.asarray(pool, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != gmm.dim:
        raise DimensionMismatch(f"pool {X.shape} does not match GMM dim {gmm.dim}")
    if X.shape[0] < gmm.M:
        raise DataError(f"pool of {X.shape[0]} frames is smaller than M={gmm.M}")
    n = X.shape[0]
    for _ in range(iterations):
        occ, first, second, ll = _accumulate(X, gmm, threads)
        if history is not None:
            history.append(ll)
        dead = np.flatnonzero(~(occ > 0))
        if dead.size:
            raise NumericError(f"component {int(dead[0])} has zero occupancy (posteriors underflow)")
        weights = occ / n
        weights /= weights.sum()
        means = first / occ[:, None]
        variances = np.maximum(second / occ[:, None] - means ** 2, gmm.var_floor)
        gmm = DiagonalGmm(weights, means, variances, gmm.var_floor, gmm.floor_factor, gmm.seed)
    if history is not None:
        history.append(log_likelihood(gmm, X, threads))
    return gmm


def train_gmm(utterances, M: int, iterations: int, seed: int, threads: int = 1,
              floor_factor: float = DEFAULT_FLOOR_FACTOR) -> DiagonalGmm:
    utterances = [np.asarray(u, dtype=np.float64) for u in utterances]
    gmm = init_gmm(utterances, M, seed, floor_factor)
    return em_fit(gmm, np.concatenate(utterances), iterations, threads)


def _column_sums(P: np.ndarray) -> np.ndarray:
    # sorting first makes the sum independent of frame order
    return np.sort(P, axis=0).sum(axis=0)


def gmm_supervector(X, gmm: DiagonalGmm) -> Supervector:
    """Frame average of ``[g_c x ; g_c x*x]`` over components ``c`` (length 2 M d)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyUtterance("empty utterance")
    gamma = frame_posteriors(X, gmm)
    n, d = X.shape
    stats = np.stack([X, X * X], axis=1)  # (N, 2, d)
    chunk = max(1, (1 << 22) // max(1, n * 2 * d))
    out = np.empty((gmm.M, 2 * d))
    for c in range(0, gmm.M, chunk):
        g = gamma[:, c:c + chunk]
        P = (g[:, :, None, None] * stats[:, None, :, :]).reshape(n, -1)
        out[c:c + chunk] = _column_sums(P).reshape(-1, 2 * d)
    return Supervector("gmm", 2 * gmm.M * d, (out / n).ravel())


def write_gmm_model(path, gmm: DiagonalGmm) -> None:
    header = _GMM_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, KIND_GMM, gmm.M, gmm.dim,
                              gmm.seed, gmm.floor_factor)
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in (gmm.weights, gmm.means, gmm.variances, gmm.var_floor):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_gmm_model(path, dim: int | None = None) -> DiagonalGmm:
    data = Path(path).read_bytes()
    kind = model_kind(data, path)
    if kind != KIND_GMM:
        raise WrongModelKind(f"{path}: wrong model kind {kind}, expected GMM ({KIND_GMM})")
    if len(data) < _GMM_HEADER.size:
        raise TruncatedFile(f"{path}: truncated model")
    _, _, _, M, d, seed, factor = _GMM_HEADER.unpack_from(data)
    if dim is not None and d != dim:
        raise DimensionMismatch(f"{path}: model dim {d}, expected {dim}")
    expected = _GMM_HEADER.size + 8 * (M + 2 * M * d + d)
    if len(data) < expected:
        raise TruncatedFile(f"{path}: truncated model")
    if len(data) > expected:
        raise DataError(f"{path}: trailing bytes after model data")
    values = np.frombuffer(data, dtype="<f8", offset=_GMM_HEADER.size).astype(np.float64)
    w, rest = values[:M], values[M:]
    means, rest = rest[:M * d].reshape(M, d), rest[M * d:]
    variances, floor = rest[:M * d].reshape(M, d), rest[M * d:]
    return DiagonalGmm(w, means, variances, floor, factor, seed)

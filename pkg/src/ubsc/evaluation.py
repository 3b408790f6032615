"""Trial generation, EER/DET computation, significance tests and parameter studies."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm as _normal

from .core import supervector, train_ubsc
from .corpus import Corpus
from .errors import ConfigError, DataError, NoImposters, UbscError
from .gmm import gmm_supervector, train_gmm
from .scoring import score

TRIAL_LABELS = ("target", "imposter")


@dataclass
class TrialSet:
    """Ordered (enroll, test) utterance pairs, stored as indices into ``utterance_ids``."""

    utterance_ids: list[str]
    enroll: np.ndarray
    test: np.ndarray
    target: np.ndarray
    speakers: dict[str, str] = field(default_factory=dict)

    def __len__(self):
        return self.enroll.size

    @property
    def n_target(self) -> int:
        return int(self.target.sum())

    @property
    def n_imposter(self) -> int:
        return int(self.target.size - self.target.sum())

    def rows(self):
        ids = self.utterance_ids
        for e, t, y in zip(self.enroll.tolist(), self.test.tolist(), self.target.tolist()):
            yield ids[e], ids[t], "target" if y else "imposter"


def generate_trials(test_utterances: dict[str, list[str]]) -> TrialSet:
    """Every ordered pair of distinct test utterances; target iff same speaker.

    With S speakers of t test utterances each this gives S t (t-1) target and
    S t (S-1) t imposter trials.
    """
    S = len(test_utterances)
    counts = {len(v) for v in test_utterances.values()}
    if len(counts) > 1:
        raise DataError(f"speakers have different numbers of test utterances: {sorted(counts)}")
    t = counts.pop() if counts else 0
    if t < 1:
        raise DataError("need at least one test utterance per speaker")
    if S < 2:
        raise NoImposters("no imposters: need at least two speakers")
    ids = [u for utts in test_utterances.values() for u in utts]
    if len(set(ids)) != len(ids):
        raise DataError("test utterance ids are not unique")
    spk = np.repeat(np.arange(S), t)
    n = S * t
    enroll = np.repeat(np.arange(n), n)
    test = np.tile(np.arange(n), n)
    keep = enroll != test
    enroll, test = enroll[keep], test[keep]
    speakers = {u: s for s, utts in test_utterances.items() for u in utts}
    return TrialSet(ids, enroll, test, spk[enroll] == spk[test], speakers)


def write_trials(path, trials: TrialSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["enroll_id", "test_id", "label"])
        w.writerows(trials.rows())


def read_trials(path) -> TrialSet:
    ids: dict[str, int] = {}
    enroll, test, target = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"enroll_id", "test_id", "label"} <= set(reader.fieldnames):
            raise DataError(f"{path}: trials need enroll_id,test_id,label columns")
        for row in reader:
            if row["label"] not in TRIAL_LABELS:
                raise DataError(f"{path}: bad label {row['label']!r}")
            enroll.append(ids.setdefault(row["enroll_id"], len(ids)))
            test.append(ids.setdefault(row["test_id"], len(ids)))
            target.append(row["label"] == "target")
    return TrialSet(list(ids), np.array(enroll, dtype=np.int64), np.array(test, dtype=np.int64),
                    np.array(target, dtype=bool))


def score_trials(trials: TrialSet, vectors: dict, method: str,
                 test_vectors: dict | None = None) -> np.ndarray:
    """Score every trial.

    With a single ``vectors`` map scores are symmetric, so each unordered pair
    is scored once. ``test_vectors`` gives the test side its own lookup.
    """
    cache: dict[tuple[int, int], float] = {}
    ids = trials.utterance_ids
    symmetric = test_vectors is None
    test_vectors = vectors if symmetric else test_vectors
    out = np.empty(len(trials))
    for i, (e, t) in enumerate(zip(trials.enroll.tolist(), trials.test.tolist())):
        key = (e, t) if e < t or not symmetric else (t, e)
        val = cache.get(key)
        if val is None:
            try:
                if symmetric:
                    val = score(vectors[ids[key[0]]], vectors[ids[key[1]]], method)
                else:
                    val = score(vectors[ids[e]], test_vectors[ids[t]], method)
            except KeyError as exc:
                raise DataError(f"no supervector for utterance {exc.args[0]!r}") from None
            cache[key] = val
        out[i] = val
    return out


def write_scores(path, trials: TrialSet, scores) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["enroll_id", "test_id", "label", "score"])
        for (e, t, label), s in zip(trials.rows(), np.asarray(scores).tolist()):
            w.writerow([e, t, label, repr(float(s))])


def read_scores(path) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(scores, is_target)`` from a score CSV."""
    scores, target = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"label", "score"} <= set(reader.fieldnames):
            raise DataError(f"{path}: scores need label and score columns")
        for row in reader:
            if row["label"] not in TRIAL_LABELS:
                raise DataError(f"{path}: bad label {row['label']!r}")
            scores.append(float(row["score"]))
            target.append(row["label"] == "target")
    return np.array(scores), np.array(target, dtype=bool)


# --------------------------------------------------------------------------
# EER / DET
# --------------------------------------------------------------------------

def _split_scores(scores, is_target):
    scores = np.asarray(scores, dtype=np.float64)
    is_target = np.asarray(is_target, dtype=bool)
    if scores.shape != is_target.shape or scores.ndim != 1:
        raise DataError("scores and labels must be 1-D and of equal length")
    if not np.all(np.isfinite(scores)):
        raise DataError("non-finite scores")
    tgt, imp = np.sort(scores[is_target]), np.sort(scores[~is_target])
    if tgt.size == 0 or imp.size == 0:
        raise DataError("need at least one target and one imposter score")
    return scores, tgt, imp


def _sweep(scores, is_target):
    scores, tgt, imp = _split_scores(scores, is_target)
    thresholds = np.unique(scores)
    # accept iff score >= threshold
    far = (imp.size - np.searchsorted(imp, thresholds, side="left")) / imp.size
    frr = np.searchsorted(tgt, thresholds, side="left") / tgt.size
    return thresholds, far, frr


@dataclass(frozen=True)
class DetCurve:
    threshold: np.ndarray
    far: np.ndarray
    frr: np.ndarray

    def __len__(self):
        return self.threshold.size


def det_points(scores, is_target) -> DetCurve:
    """(threshold, FAR, FRR) at every distinct score value, thresholds ascending."""
    return DetCurve(*_sweep(scores, is_target))


def compute_eer(scores, is_target) -> tuple[float, float]:
    """Equal error rate and the threshold where it occurs.

    FAR - FRR is non-increasing along the threshold sweep; a final point at
    +inf (FAR 0, FRR 1) closes the sweep. The EER is read off where the
    difference changes sign, interpolating linearly between the two points
    around the crossing.
    """
    thr, far, frr = _sweep(scores, is_target)
    far = np.append(far, 0.0)
    frr = np.append(frr, 1.0)
    diff = far - frr
    j = int(np.flatnonzero(diff >= 0)[-1])
    if diff[j] == 0:
        return float(far[j]), float(thr[j])
    alpha = diff[j] / (diff[j] - diff[j + 1])
    eer = far[j] + alpha * (far[j + 1] - far[j])
    if j + 1 < thr.size:
        threshold = thr[j] + alpha * (thr[j + 1] - thr[j])
    else:
        threshold = thr[j]
    return float(eer), float(threshold)


def write_det(path, det: DetCurve) -> None:
    with np.errstate(divide="ignore"):
        pfar, pfrr = _normal.ppf(det.far), _normal.ppf(det.frr)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "far", "frr", "probit_far", "probit_frr"])
        for row in zip(det.threshold.tolist(), det.far.tolist(), det.frr.tolist(),
                       pfar.tolist(), pfrr.tolist()):
            w.writerow([repr(v) for v in row])


# --------------------------------------------------------------------------
# Welch t-test
# --------------------------------------------------------------------------

def _beta_cf(a, b, x, max_iter=1000, eps=1e-16):
    # modified Lentz evaluation of the incomplete beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _beta_cf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _beta_cf(b, a, 1.0 - x) / b


def welch_statistic(a, b) -> tuple[float, float]:
    """Welch t statistic and Welch-Satterthwaite degrees of freedom."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    se2 = va + vb
    t = (a.mean() - b.mean()) / math.sqrt(se2)
    df = se2 ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
    return float(t), float(df)


def t_test(a, b, alpha: float = 0.05) -> tuple[float, bool]:
    """Two-tailed Welch t-test; returns ``(p_value, reject)`` with reject iff p < alpha.

    When both samples have zero variance, p is 1 for equal means and 0 otherwise.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise DataError("t-test needs at least two values per sample")
    if a.var(ddof=1) == 0 and b.var(ddof=1) == 0:
        p = 1.0 if a.mean() == b.mean() else 0.0
        return p, p < alpha
    t, df = welch_statistic(a, b)
    p = betainc_regularized(df / 2.0, 0.5, df / (df + t * t))
    return p, p < alpha


def run_statistics(values) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single run)."""
    values = np.asarray(values, dtype=np.float64)
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return float(values.mean()), std


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    eer: float
    threshold: float
    det: DetCurve
    n_target: int
    n_imposter: int


def evaluate_scores(scores, is_target) -> EvalReport:
    eer, thr = compute_eer(scores, is_target)
    is_target = np.asarray(is_target, dtype=bool)
    return EvalReport(eer, thr, det_points(scores, is_target),
                      int(is_target.sum()), int((~is_target).sum()))


def train_model(corpus: Corpus, method: str, params: dict, seed: int, threads: int = 1):
    if method == "ubsc":
        return train_ubsc(corpus.train_frames(), int(params["k"]), int(params["V"]), seed)
    if method == "gmm":
        train = [u.frames for u in corpus.split("train")]
        if not train:
            raise DataError("corpus has no training utterances")
        return train_gmm(train, int(params["M"]), int(params["iters"]), seed, threads,
                         float(params.get("floor_factor", 1e-4)))
    raise ConfigError(f"unknown method {method!r}")


def encode(X, model, threads: int = 1):
    if hasattr(model, "centers"):
        return supervector(X, model, threads)
    return gmm_supervector(X, model)


def evaluate_once(corpus: Corpus, method: str, params: dict, seed: int,
                  scorings=("cosine",), threads: int = 1) -> dict[str, float]:
    """Train on the corpus' train split, score all test trials; EER per scoring method."""
    model = train_model(corpus, method, params, seed, threads)
    trials = generate_trials(corpus.test_map())
    utts = corpus.by_id()
    vectors = {u: encode(utts[u].frames, model, threads) for u in trials.utterance_ids}
    return {s: compute_eer(score_trials(trials, vectors, s), trials.target)[0] for s in scorings}


@dataclass(frozen=True)
class GridRow:
    params: dict
    eers: tuple
    mean: float
    std: float


def _expand_grid(param_grid) -> list[dict]:
    if isinstance(param_grid, dict):
        keys = list(param_grid)
        return [dict(zip(keys, combo)) for combo in itertools.product(*param_grid.values())]
    return [dict(p) for p in param_grid]


def grid_search(corpus: Corpus, method: str, param_grid, runs: int = 10, seeds=None,
                scoring: str = "cosine", threads: int = 1) -> list[GridRow]:
    """Mean and standard deviation of the EER over ``runs`` seeds for every grid cell."""
    cells = _expand_grid(param_grid)
    if not cells:
        raise ConfigError("empty parameter grid")
    seeds = list(range(runs)) if seeds is None else list(seeds)
    if len(seeds) < 1:
        raise ConfigError("need at least one run")
    rows = []
    for params in cells:
        eers = []
        for seed in seeds:
            try:
                eers.append(evaluate_once(corpus, method, params, seed, (scoring,), threads)[scoring])
            except UbscError as exc:
                raise type(exc)(f"grid cell {params} seed {seed}: {exc}") from exc
        rows.append(GridRow(params, tuple(eers), *run_statistics(eers)))
    return rows


def write_grid(path, rows: list[GridRow]) -> None:
    keys = list(dict.fromkeys(k for r in rows for k in r.params))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys + ["runs", "mean_eer", "std_eer"])
        for r in rows:
            w.writerow([r.params.get(k, "") for k in keys] + [len(r.eers), repr(r.mean), repr(r.std)])


@dataclass(frozen=True)
class MethodSpec:
    """One system in a comparison: model family, its hyperparameters, scoring."""

    name: str
    method: str
    params: dict
    scoring: str = "cosine"


@dataclass(frozen=True)
class SubsetRow:
    speakers: int
    system: str
    eers: tuple
    mean: float
    std: float


def subset_study(corpus: Corpus, speaker_counts, systems: list[MethodSpec], runs: int = 10,
                 seeds=None, threads: int = 1) -> list[SubsetRow]:
    """Re-run every system on random speaker subsets of each size.

    Systems sharing a model family and hyperparameters share the trained
    model within a run, so scoring methods are compared on identical vectors.
    """
    available = corpus.speakers()
    seeds = list(range(runs)) if seeds is None else list(seeds)
    for count in speaker_counts:
        if count > len(available):
            raise DataError(f"speaker count {count} exceeds the {len(available)} available")
        if count < 2:
            raise NoImposters("no imposters: need at least two speakers")
    results = {(c, s.name): [] for c in speaker_counts for s in systems}
    for count in speaker_counts:
        for seed in seeds:
            rng = np.random.default_rng(seed)
            chosen = sorted(rng.choice(len(available), size=count, replace=False).tolist())
            sub = corpus.restrict(available[i] for i in chosen)
            groups: dict[tuple, list[MethodSpec]] = {}
            for s in systems:
                groups.setdefault((s.method, tuple(sorted(s.params.items()))), []).append(s)
            for (method, params), members in groups.items():
                eers = evaluate_once(sub, method, dict(params), seed,
                                     tuple(dict.fromkeys(m.scoring for m in members)), threads)
                for m in members:
                    results[(count, m.name)].append(eers[m.scoring])
    return [SubsetRow(c, s.name, tuple(results[(c, s.name)]), *run_statistics(results[(c, s.name)]))
            for c in speaker_counts for s in systems]


def write_subset(path, rows: list[SubsetRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["speakers", "system", "runs", "mean_eer", "std_eer"])
        for r in rows:
            w.writerow([r.speakers, r.system, len(r.eers), repr(r.mean), repr(r.std)])

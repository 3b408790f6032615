"""Acceptance criteria C1-C10.

Each test records ``(passed, detail)`` in ``conftest.ACCEPTANCE_RESULTS`` before
asserting, so the session ends with one PASS/FAIL line per criterion even when
an assertion fails part-way.
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_RESULTS
from oracles import brute_eer, naive_supervector
from t_reference import T_CASES
from ubsc.cli import main
from ubsc.core import encode_frame, supervector, train_ubsc
from ubsc.corpus import save_corpus
from ubsc.evaluation import compute_eer, evaluate_once, generate_trials, score_trials, t_test, train_model
from ubsc.gmm import em_fit, init_gmm, train_gmm
from ubsc.scoring import l2_normalize
from ubsc.synth import SynthSpec, synth_corpus

# the end-to-end corpus: 30 speakers, 8 train + 2 test utterances of 300 frames
E2E_SPEC = SynthSpec(speakers=30, utts=10, frames=300, dim=20, between=0.15, within=1.0,
                     channel=0.1, seed=0, train_utts=8)
SEEDS = range(10)


def record(key, ok, detail):
    ACCEPTANCE_RESULTS[key] = (bool(ok), detail)
    print(f"{key}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def e2e_corpus():
    return synth_corpus(E2E_SPEC)


def test_c1_trial_counts():
    start = time.perf_counter()
    got = []
    for S, t in ((438, 2), (192, 2), (630, 2)):
        trials = generate_trials({f"s{s}": [f"s{s}_{u}" for u in range(t)] for s in range(S)})
        got.append((trials.n_target, trials.n_imposter))
    elapsed = time.perf_counter() - start
    want = [(876, 765_624), (384, 146_688), (1_260, 1_585_080)]
    record("C1", got == want and elapsed < 1.0, f"counts {got}, {elapsed:.3f}s (limit 1s)")


def test_c2_oracle_equivalence():
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    mismatches = broken = 0
    for _ in range(500):
        k, V, N, d = int(rng.integers(1, 33)), int(rng.integers(1, 6)), int(rng.integers(1, 201)), 20
        pool = rng.normal(size=(int(rng.integers(k, k + 100)), d))
        model = train_ubsc(pool, k, V, seed=int(rng.integers(2**32)))
        X = rng.normal(size=(N, d))
        z = supervector(X, model).to_dense()
        if z.tobytes() != naive_supervector(X, model.centers).tobytes():
            mismatches += 1
        blocks = z.reshape(V, k)
        code = np.concatenate([encode_frame(X[0], model.centers[v]) for v in range(V)])
        one_hot = np.count_nonzero(code) == V and set(code[code != 0].tolist()) == {1.0}
        if not (one_hot and np.all(np.abs(blocks.sum(axis=1) - 1) <= 1e-9)
                and abs(z.sum() - V) <= 1e-6 and np.all(z >= 0)):
            broken += 1
    elapsed = time.perf_counter() - start
    record("C2", mismatches == 0 and broken == 0 and elapsed < 30,
           f"{mismatches}/500 oracle mismatches, {broken} invariant failures, {elapsed:.1f}s (limit 30s)")


def test_c3_invariants_at_scale():
    rng = np.random.default_rng(3)
    k, V = 2 ** 14, 30
    model = train_ubsc(rng.normal(size=(20_000, 20)), k, V, seed=3)
    X = rng.normal(size=(200, 20))
    start = time.perf_counter()
    runs = {t: supervector(X, model, threads=t) for t in (1, 4, 8)}
    elapsed = time.perf_counter() - start
    z = runs[1].to_dense()
    block_err = float(np.abs(z.reshape(V, k).sum(axis=1) - 1).max())
    total_err = abs(float(z.sum()) - V)
    same = all(runs[t].values.tobytes() == runs[1].values.tobytes()
               and runs[t].indices.tobytes() == runs[1].indices.tobytes() for t in (4, 8))
    record("C3", block_err <= 1e-9 and total_err <= 1e-6 and same and elapsed < 60,
           f"max block error {block_err:.1e}, total error {total_err:.1e}, "
           f"threads 1/4/8 identical={same}, {elapsed:.1f}s (limit 60s)")


def test_c4_gmm_correctness():
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    X = rng.normal(loc=1.5, scale=[0.5, 1.0, 2.0, 3.0], size=(2000, 4))
    one = em_fit(init_gmm(np.split(X, 20), 1, seed=0), X, 1)
    closed = max(np.abs(one.means[0] - X.mean(axis=0)).max(),
                 np.abs(one.variances[0] - X.var(axis=0)).max())

    decreases = 0
    for i in range(10):
        r = np.random.default_rng(40 + i)
        Y = np.concatenate([r.normal(loc=r.normal(scale=3, size=3), scale=r.uniform(0.5, 2, 3),
                                     size=(300, 3)) for _ in range(3)])
        history = []
        em_fit(init_gmm(np.split(Y, 30), 4, seed=i), Y, 30, history=history)
        decreases += sum(b < a - 1e-8 * abs(a) for a, b in zip(history, history[1:]))

    recovered = 0
    for seed in range(10):
        r = np.random.default_rng(400 + seed)
        Z = np.concatenate([r.normal(-10, 1, (500, 1)), r.normal(10, 1, (500, 1))])
        gmm = train_gmm([Z[j:j + 50] for j in range(0, 1000, 50)], 2, 20, seed=seed)
        lo, hi = np.sort(gmm.means[:, 0])
        recovered += abs(lo + 10) <= 0.2 and abs(hi - 10) <= 0.2
    elapsed = time.perf_counter() - start
    record("C4", closed <= 1e-10 and decreases == 0 and recovered == 10 and elapsed < 60,
           f"M=1 error {closed:.1e}, {decreases} log-likelihood decreases, "
           f"{recovered}/10 cluster recoveries, {elapsed:.1f}s (limit 60s)")


def test_c5_eer_oracle():
    rng = np.random.default_rng(5)
    start = time.perf_counter()
    worst = 0.0
    invariant_ok = True
    for i in range(100):
        target = rng.random(1000) < rng.uniform(0.05, 0.5)
        target[:2] = [True, False]
        scores = rng.normal(size=1000) + rng.uniform(0, 3) * target
        if i % 2:
            scores = np.round(scores, 1)
        eer = compute_eer(scores, target)[0]
        worst = max(worst, abs(eer - brute_eer(scores, target)))
        for g in (np.exp, lambda s: 5 * s - 2, np.arctan):
            invariant_ok &= abs(compute_eer(g(scores), target)[0] - eer) <= 1e-12
    perfect = compute_eer(np.r_[rng.uniform(0, 1, 50), rng.uniform(2, 3, 50)],
                          np.r_[np.zeros(50, bool), np.ones(50, bool)])[0]
    elapsed = time.perf_counter() - start
    record("C5", worst <= 1e-12 and perfect == 0.0 and invariant_ok and elapsed < 10,
           f"max |EER - oracle| {worst:.1e}, perfect separation EER {perfect}, "
           f"monotone invariance={invariant_ok}, {elapsed:.2f}s (limit 10s)")


def test_c6_t_test_oracle():
    start = time.perf_counter()
    worst, disagree = 0.0, 0
    for a, b, p_ref in T_CASES:
        p, reject = t_test(a, b, alpha=0.05)
        worst = max(worst, abs(p - p_ref))
        disagree += reject != (p_ref < 0.05)
    elapsed = time.perf_counter() - start
    record("C6", worst <= 1e-9 and disagree == 0 and elapsed < 1,
           f"max |p - reference| {worst:.1e} over {len(T_CASES)} cases, "
           f"{disagree} decision disagreements, {elapsed:.3f}s (limit 1s)")


def test_c7_end_to_end(e2e_corpus):
    start = time.perf_counter()
    ubsc = [evaluate_once(e2e_corpus, "ubsc", {"k": 256, "V": 10}, s)["cosine"] for s in SEEDS]
    gmm = [evaluate_once(e2e_corpus, "gmm", {"M": 64, "iters": 10}, s)["cosine"] for s in SEEDS]
    elapsed = time.perf_counter() - start
    ok = all(e <= 0.20 and e < 0.45 for e in ubsc + gmm) and elapsed < 180
    record("C7", ok, f"UBSC EER {100 * min(ubsc):.2f}-{100 * max(ubsc):.2f}%, "
                     f"GMM EER {100 * min(gmm):.2f}-{100 * max(gmm):.2f}% over 10 seeds, "
                     f"{elapsed:.1f}s (limit 180s)")


def test_c8_more_codebooks_help(e2e_corpus):
    start = time.perf_counter()
    v30 = np.mean([evaluate_once(e2e_corpus, "ubsc", {"k": 256, "V": 30}, s)["cosine"] for s in SEEDS])
    v1 = np.mean([evaluate_once(e2e_corpus, "ubsc", {"k": 256, "V": 1}, s)["cosine"] for s in SEEDS])
    elapsed = time.perf_counter() - start
    record("C8", v30 <= v1 and elapsed < 600,
           f"mean EER V=30 {100 * v30:.2f}% vs V=1 {100 * v1:.2f}%, {elapsed:.1f}s (limit 600s)")


def test_c9_scoring_consistency(e2e_corpus):
    model = train_model(e2e_corpus, "ubsc", {"k": 256, "V": 10}, seed=0)
    trials = generate_trials(e2e_corpus.test_map())
    utts = e2e_corpus.by_id()
    raw = {u: supervector(utts[u].frames, model) for u in trials.utterance_ids}
    unit = {u: l2_normalize(z) for u, z in raw.items()}
    cos_n, ip_n = score_trials(trials, unit, "cosine"), score_trials(trials, unit, "inner_product")
    gap = float(np.abs(cos_n - ip_n).max())
    eer_cos_n, eer_ip_n = compute_eer(cos_n, trials.target)[0], compute_eer(ip_n, trials.target)[0]
    eer_cos = compute_eer(score_trials(trials, raw, "cosine"), trials.target)[0]
    eer_ip = compute_eer(score_trials(trials, raw, "inner_product"), trials.target)[0]
    record("C9", gap <= 1e-12 and eer_cos_n == eer_ip_n and np.isfinite(eer_cos) and np.isfinite(eer_ip),
           f"normalized: max score gap {gap:.1e}, EER {100 * eer_cos_n:.4f}% both; "
           f"unnormalized: cosine {100 * eer_cos:.2f}%, inner {100 * eer_ip:.2f}%")


def test_c10_cli_determinism(e2e_corpus, tmp_path):
    save_corpus(e2e_corpus, tmp_path / "features")
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"features = {tmp_path / 'features'}\nmethod = ubsc\nk = 256\nV = 10\n"
                   "scoring = cosine,inner\n")
    codes = [main(["run", "--config", str(cfg), "--seed-list", "0,1,2", "--threads", str(t),
                   "--out", str(tmp_path / out)]) for t, out in ((1, "a"), (4, "b"))]
    a, b = tmp_path / "a", tmp_path / "b"
    files = sorted(p.relative_to(a).as_posix() for p in a.rglob("*") if p.is_file())
    differ = [f for f in files if (a / f).read_bytes() != (b / f).read_bytes()]
    missing = sorted(set(p.relative_to(b).as_posix() for p in b.rglob("*") if p.is_file()) ^ set(files))
    scored = [f for f in files if f.startswith("scores/")]
    ok = codes == [0, 0] and not differ and not missing and len(scored) == 6 \
        and {"report.csv", "summary.txt", "manifest.txt"} <= set(files)
    record("C10", ok, f"{len(files)} files compared ({len(scored)} score files), "
                      f"{len(differ)} differ, exit codes {codes}")

"""Command-line entry point (``ubsc <command> ...``).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import train_ubsc
from .corpus import FEATURE_SUFFIX, LABELS_FILE, Corpus, Utterance, load_corpus, read_labels, save_corpus
from .errors import ConfigError, DataError, UbscError
from .evaluation import (
    MethodSpec,
    encode,
    evaluate_scores,
    generate_trials,
    grid_search,
    read_scores,
    read_trials,
    run_statistics,
    score_trials,
    subset_study,
    t_test,
    write_det,
    write_grid,
    write_scores,
    write_subset,
    write_trials,
)
from .features import MfccConfig, extract_utterance, read_features, read_wav, write_features
from .gmm import train_gmm
from .pipeline import (
    SCORING_ALIASES,
    extract_corpus,
    int_list,
    load_config,
    parse_config_text,
    prepare_corpus,
    read_model,
    run_pipeline,
    write_model,
)
from .supervector import read_supervector, write_supervector
from .synth import SynthSpec, synth_corpus

log = logging.getLogger("ubsc")


def _mfcc_config(args) -> MfccConfig:
    values = {}
    if args.config:
        values = parse_config_text(Path(args.config).read_text())
    if args.no_lifter:
        values["lifter"] = "false"
    return MfccConfig.from_mapping(values)


def cmd_extract(args):
    config = _mfcc_config(args)
    src, out = Path(args.input), Path(args.out)
    if src.is_dir():
        corpus = extract_corpus(src, out, config)
        log.info("extracted %d utterances into %s", len(corpus), out)
    else:
        out.mkdir(parents=True, exist_ok=True)
        frames = extract_utterance(read_wav(src), config)
        write_features(out / f"{src.stem}{FEATURE_SUFFIX}", frames)
        log.info("extracted %d frames from %s", frames.shape[0], src)


def cmd_synth(args):
    spec = SynthSpec(speakers=args.speakers, utts=args.utts, frames=args.frames, dim=args.dim,
                     between=args.between, within=args.within, channel=args.channel,
                     seed=args.seed, train_utts=args.train_utts, components=args.components)
    save_corpus(synth_corpus(spec), args.out)


def _corpus(args) -> Corpus:
    return prepare_corpus(load_corpus(args.features), args.train_utts, args.test_utts,
                          args.resplit, args.group)


def cmd_train_ubsc(args):
    corpus = _corpus(args)
    model = train_ubsc(corpus.train_frames(), args.k, args.V, args.seed)
    write_model(args.out, model)


def cmd_train_gmm(args):
    corpus = _corpus(args)
    train = [u.frames for u in corpus.split("train")]
    if not train:
        raise DataError("corpus has no training utterances")
    model = train_gmm(train, args.M, args.iters, args.seed, args.threads, args.floor_factor)
    write_model(args.out, model)


def cmd_encode(args):
    model = read_model(args.model)
    src, out = Path(args.features), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if (src / LABELS_FILE).exists():
        ids = [u for u, _, split, _ in read_labels(src / LABELS_FILE)
               if args.split == "all" or split == args.split]
    else:
        ids = sorted(p.name[:-len(FEATURE_SUFFIX)] for p in src.glob(f"*{FEATURE_SUFFIX}"))
    if not ids:
        raise DataError(f"{src}: nothing to encode")
    for utt in ids:
        frames = read_features(src / f"{utt}{FEATURE_SUFFIX}")
        write_supervector(out / f"{utt}.ubsv", encode(frames, model, args.threads))


def cmd_trials(args):
    src = Path(args.labels)
    labels = read_labels(src / LABELS_FILE if src.is_dir() else src)
    placeholder = np.zeros((1, 1))
    corpus = prepare_corpus(Corpus(Utterance(u, s, placeholder, split, g) for u, s, split, g in labels),
                            args.train_utts, args.test_utts, args.resplit, args.group)
    write_trials(args.out, generate_trials(corpus.test_map()))


def _load_vectors(directory: Path, ids):
    out = {}
    for utt in ids:
        path = directory / f"{utt}.ubsv"
        if not path.exists():
            raise DataError(f"missing supervector {path}")
        out[utt] = read_supervector(path)
    return out


def cmd_score(args):
    trials = read_trials(args.trials)
    enroll_ids = {trials.utterance_ids[i] for i in np.unique(trials.enroll)}
    test_ids = {trials.utterance_ids[i] for i in np.unique(trials.test)}
    enroll_dir, test_dir = Path(args.enroll), Path(args.test)
    method = SCORING_ALIASES[args.method]
    if enroll_dir.resolve() == test_dir.resolve():
        scores = score_trials(trials, _load_vectors(enroll_dir, sorted(enroll_ids | test_ids)), method)
    else:
        scores = score_trials(trials, _load_vectors(enroll_dir, sorted(enroll_ids)), method,
                              test_vectors=_load_vectors(test_dir, sorted(test_ids)))
    write_scores(args.out, trials, scores)


def cmd_eval(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def evaluate(paths, tag):
        eers = []
        for i, path in enumerate(paths):
            report = evaluate_scores(*read_scores(path))
            write_det(out / f"det_{tag}{i}.csv", report.det)
            eers.append(report.eer)
            rows.append(f"{tag},{path},{report.eer!r},{report.threshold!r},"
                        f"{report.n_target},{report.n_imposter}")
        return eers

    rows = ["set,file,eer,threshold,n_target,n_imposter"]
    eers_a = evaluate(args.scores, "a")
    summary = ["set a: EER %.4f%% (std %.4f) over %d runs"
               % (100 * run_statistics(eers_a)[0], 100 * run_statistics(eers_a)[1], len(eers_a))]
    if args.against:
        eers_b = evaluate(args.against, "b")
        mean_b, std_b = run_statistics(eers_b)
        summary.append("set b: EER %.4f%% (std %.4f) over %d runs" % (100 * mean_b, 100 * std_b, len(eers_b)))
        p, reject = t_test(eers_a, eers_b, args.alpha)
        summary.append(f"welch t-test: p = {p:.6g}, {'reject' if reject else 'keep'} null at alpha={args.alpha}")
    (out / "report.csv").write_text("\n".join(rows) + "\n")
    (out / "summary.txt").write_text("\n".join(summary) + "\n")
    print("\n".join(summary))


def _seeds(args):
    return list(int_list(args.seed_list)) if args.seed_list else list(range(args.runs))


def cmd_grid(args):
    corpus = _corpus(args)
    if args.method == "ubsc":
        grid = {"k": list(int_list(args.k)), "V": list(int_list(args.V))}
    else:
        grid = {"M": list(int_list(args.M)), "iters": list(int_list(args.iters))}
    rows = grid_search(corpus, args.method, grid, seeds=_seeds(args),
                       scoring=SCORING_ALIASES[args.scoring], threads=args.threads)
    write_grid(args.out, rows)


def cmd_subset(args):
    corpus = _corpus(args)
    systems = []
    for name in args.systems.split(","):
        method, _, scoring = name.partition("-")
        if method not in ("ubsc", "gmm") or scoring not in SCORING_ALIASES:
            raise ConfigError(f"system must look like ubsc-cosine or gmm-inner, got {name!r}")
        params = {"k": args.k, "V": args.V} if method == "ubsc" else {"M": args.M, "iters": args.iters}
        systems.append(MethodSpec(name, method, params, SCORING_ALIASES[scoring]))
    rows = subset_study(corpus, list(int_list(args.counts)), systems, seeds=_seeds(args),
                        threads=args.threads)
    write_subset(args.out, rows)


def cmd_run(args):
    overrides = list(args.set or [])
    if args.seed_list:
        overrides.append(f"seeds={args.seed_list}")
    if args.out:
        overrides.append(f"out={args.out}")
    if args.threads:
        overrides.append(f"threads={args.threads}")
    result = run_pipeline(load_config(args.config, overrides))
    for name, rep in result.reports.items():
        print(f"{name}: mean EER {100 * rep.mean:.2f}% (std {100 * rep.std:.2f})")


def _corpus_args(p):
    p.add_argument("--features", required=True, help="feature corpus directory")
    p.add_argument("--train-utts", type=int, default=8)
    p.add_argument("--test-utts", type=int, default=2)
    p.add_argument("--resplit", action="store_true", help="ignore split column, split by order")
    p.add_argument("--group", default="", help="restrict to one labels.csv group")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ubsc", description="Speaker verification with universal background sparse coding.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="WAV -> MFCC feature files")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-lifter", action="store_true")
    p.add_argument("--config")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("synth", help="write a synthetic feature corpus")
    p.add_argument("--speakers", type=int, default=30)
    p.add_argument("--utts", type=int, default=10)
    p.add_argument("--frames", type=int, default=300)
    p.add_argument("--dim", type=int, default=20)
    p.add_argument("--between", type=float, default=0.15)
    p.add_argument("--within", type=float, default=1.0)
    p.add_argument("--channel", type=float, default=0.1)
    p.add_argument("--components", type=int, default=1)
    p.add_argument("--train-utts", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-ubsc", help="train the sparse-coding background model")
    _corpus_args(p)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--V", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_ubsc)

    p = sub.add_parser("train-gmm", help="train the GMM background model")
    _corpus_args(p)
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--iters", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--floor-factor", type=float, default=1e-4)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_gmm)

    p = sub.add_parser("encode", help="feature files -> supervector files")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("all", "train", "test"), default="all")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("trials", help="write the trial list for the test split")
    p.add_argument("--labels", required=True, help="labels.csv or a corpus directory")
    p.add_argument("--train-utts", type=int, default=8)
    p.add_argument("--test-utts", type=int, default=2)
    p.add_argument("--resplit", action="store_true")
    p.add_argument("--group", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trials)

    p = sub.add_parser("score", help="score a trial list")
    p.add_argument("--method", choices=("cosine", "inner"), default="cosine")
    p.add_argument("--enroll", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="EER, DET and significance from score files")
    p.add_argument("--scores", nargs="+", required=True)
    p.add_argument("--against", nargs="+", help="second set of score files for a t-test")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    for name, func, help_text in (("grid", cmd_grid, "hyperparameter grid"),
                                  ("subset", cmd_subset, "speaker-count study")):
        p = sub.add_parser(name, help=help_text)
        _corpus_args(p)
        p.add_argument("--runs", type=int, default=10)
        p.add_argument("--seed-list", help="explicit comma-separated seeds (overrides --runs)")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out", required=True)
        if name == "grid":
            p.add_argument("--method", choices=("ubsc", "gmm"), default="ubsc")
            p.add_argument("--scoring", choices=("cosine", "inner"), default="cosine")
            p.add_argument("--k", default="256")
            p.add_argument("--V", default="1,3,10,30")
            p.add_argument("--M", default="64")
            p.add_argument("--iters", default="10")
        else:
            p.add_argument("--counts", required=True)
            p.add_argument("--systems", default="ubsc-cosine,ubsc-inner,gmm-cosine")
            p.add_argument("--k", type=int, default=256)
            p.add_argument("--V", type=int, default=30)
            p.add_argument("--M", type=int, default=64)
            p.add_argument("--iters", type=int, default=10)
        p.set_defaults(func=func)

    p = sub.add_parser("run", help="full pipeline from a key=value config")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed-list")
    p.add_argument("--threads", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except UbscError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""End-to-end runs: extract -> split -> train -> encode -> trials -> score -> eval.

Configuration is a plain ``key = value`` file. Every output directory gets a
``manifest.txt`` recording the canonical config, its hash, the seed list and a
digest of every file written, which is enough to replay and verify a run.
"""

from __future__ import annotations

import hashlib
from contextlib import contextmanager
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .core import KIND_GMM, KIND_UBSC, model_kind, read_ubsc_model, write_ubsc_model
from .corpus import LABELS_FILE, Corpus, Utterance, load_corpus, read_labels, save_corpus
from .errors import ConfigError, DataError, UbscError
from .evaluation import (
    EvalReport,
    evaluate_scores,
    generate_trials,
    run_statistics,
    encode,
    score_trials,
    t_test,
    train_model,
    write_det,
    write_scores,
    write_trials,
)
from .features import MfccConfig, extract_utterance, read_wav
from .gmm import read_gmm_model, write_gmm_model
from .supervector import read_supervector, write_supervector

SCORING_ALIASES = {"cosine": "cosine", "inner": "inner_product", "inner_product": "inner_product"}
# keys that change where or how fast a run happens but never what it computes
_UNHASHED = ("out", "threads")


def read_model(path):
    """Load a UBSC or GMM model, dispatching on the kind byte."""
    kind = model_kind(Path(path).read_bytes(), path)
    if kind == KIND_UBSC:
        return read_ubsc_model(path)
    if kind == KIND_GMM:
        return read_gmm_model(path)
    raise DataError(f"{path}: unknown model kind {kind}")


def write_model(path, model) -> None:
    if hasattr(model, "centers"):
        write_ubsc_model(path, model)
    else:
        write_gmm_model(path, model)


def model_suffix(method: str) -> str:
    return ".ubsm" if method == "ubsc" else ".gmm"


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

def int_list(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    try:
        return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)
    except ValueError:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from None


def _scorings(text) -> tuple[str, ...]:
    items = text if isinstance(text, (list, tuple)) else str(text).replace(" ", "").split(",")
    out = []
    for item in items:
        if item not in SCORING_ALIASES:
            raise ConfigError(f"unknown scoring method {item!r}")
        out.append(SCORING_ALIASES[item])
    return tuple(dict.fromkeys(out))


@dataclass(frozen=True)
class RunConfig:
    features: str = ""
    wav: str = ""
    out: str = "run"
    method: str = "ubsc"
    k: int = 256
    V: int = 30
    M: int = 64
    iters: int = 10
    floor_factor: float = 1e-4
    seeds: tuple = (0,)
    scoring: tuple = ("cosine",)
    train_utts: int = 8
    test_utts: int = 2
    resplit: bool = False
    group: str = ""
    threads: int = 1
    mfcc: MfccConfig = field(default_factory=MfccConfig)

    def validate(self) -> "RunConfig":
        if bool(self.features) == bool(self.wav):
            raise ConfigError("set exactly one of 'features' or 'wav'")
        if self.method not in ("ubsc", "gmm"):
            raise ConfigError(f"method must be ubsc or gmm, got {self.method!r}")
        for name in ("k", "V", "M", "iters", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        if len(set(self.seeds)) != len(self.seeds) or min(self.seeds) < 0:
            raise ConfigError("seeds must be distinct non-negative integers")
        if not self.scoring:
            raise ConfigError("no scoring method given")
        if self.train_utts < 1 or self.test_utts < 1:
            raise ConfigError("train_utts and test_utts must be >= 1")
        if not self.floor_factor > 0:
            raise ConfigError("floor_factor must be positive")
        return self

    def model_params(self) -> dict:
        if self.method == "ubsc":
            return {"k": self.k, "V": self.V}
        return {"M": self.M, "iters": self.iters, "floor_factor": self.floor_factor}

    def canonical(self, include_unhashed: bool = False) -> str:
        items = {}
        for f in fields(self):
            if f.name == "mfcc":
                continue
            if f.name in _UNHASHED and not include_unhashed:
                continue
            value = getattr(self, f.name)
            items[f.name] = ",".join(map(str, value)) if isinstance(value, tuple) else str(value)
        for key, value in self.mfcc.as_dict().items():
            items[key] = str(value)
        return "".join(f"{k} = {items[k]}\n" for k in sorted(items))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


_RUN_KEYS = {f.name: f for f in fields(RunConfig) if f.name != "mfcc"}
_MFCC_KEYS = {f.name for f in fields(MfccConfig)}


def _convert(key, raw):
    default = RunConfig.__dataclass_fields__[key].default
    if key == "seeds":
        return int_list(raw)
    if key == "scoring":
        return _scorings(raw)
    if not isinstance(raw, str):
        return raw
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config_text(text: str) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def build_config(values: dict, base: RunConfig | None = None) -> RunConfig:
    """Apply string ``values`` on top of ``base``; unknown keys are rejected."""
    base = base or RunConfig()
    run_kw, mfcc_kw = {}, {}
    for key, raw in values.items():
        if key in _RUN_KEYS:
            run_kw[key] = _convert(key, raw)
        elif key in _MFCC_KEYS:
            mfcc_kw[key] = raw
        else:
            raise ConfigError(f"unknown config key {key!r}")
    mfcc = base.mfcc
    if mfcc_kw:
        mfcc = MfccConfig.from_mapping({**mfcc.as_dict(), **mfcc_kw})
    return replace(base, mfcc=mfcc, **run_kw)


def load_config(path=None, overrides=()) -> RunConfig:
    values = {}
    if path is not None:
        try:
            values.update(parse_config_text(Path(path).read_text()))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    return build_config(values)


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------

@contextmanager
def stage(name: str):
    try:
        yield
    except UbscError as exc:
        raise type(exc)(f"[{name}] {exc}") from exc


def _wav_entries(wav_dir: Path) -> list[tuple[str, str, Path, str, str]]:
    """(utt_id, speaker, path, split, group) for a WAV corpus directory.

    Either a ``labels.csv`` next to ``<utt_id>.wav`` files, or one
    sub-directory per speaker.
    """
    if (wav_dir / LABELS_FILE).exists():
        return [(u, s, wav_dir / f"{u}.wav", split, g)
                for u, s, split, g in read_labels(wav_dir / LABELS_FILE)]
    entries = []
    for spk_dir in sorted(p for p in wav_dir.iterdir() if p.is_dir()):
        for wav in sorted(spk_dir.glob("*.wav")):
            entries.append((f"{spk_dir.name}_{wav.stem}", spk_dir.name, wav, "", ""))
    if not entries:
        raise DataError(f"{wav_dir}: no WAV files found")
    return entries


def extract_corpus(wav_dir, out_dir, config: MfccConfig = MfccConfig()) -> Corpus:
    """Extract features for a WAV corpus and save it as a feature corpus."""
    utts = []
    for utt_id, speaker, path, split, group in _wav_entries(Path(wav_dir)):
        try:
            signal = read_wav(path)
            frames = extract_utterance(signal, config)
        except UbscError as exc:
            raise type(exc)(f"{path}: {exc}") from exc
        utts.append(Utterance(utt_id, speaker, frames.astype(np.float32), split, group))
    corpus = Corpus(utts)
    save_corpus(corpus, out_dir)
    return corpus


def prepare_corpus(corpus: Corpus, train_utts: int = 8, test_utts: int = 2,
                   resplit: bool = False, group: str = "") -> Corpus:
    if group:
        corpus = corpus.filter_group(group)
    if resplit or not any(u.split for u in corpus):
        corpus = corpus.with_split(train_utts, test_utts)
    return corpus


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass(frozen=True)
class ExperimentReport:
    """Per-seed evaluations of one system plus their mean and standard deviation."""

    scoring: str
    seeds: tuple
    runs: tuple  # EvalReport per seed
    mean: float
    std: float

    @property
    def eers(self) -> tuple:
        return tuple(r.eer for r in self.runs)


@dataclass(frozen=True)
class PipelineResult:
    config_hash: str
    reports: dict  # scoring -> ExperimentReport
    comparison: tuple | None = None  # (p_value, reject) between two scorings


def run_pipeline(config: RunConfig) -> PipelineResult:
    config = config.validate()
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    with stage("extract"):
        if config.wav:
            corpus = extract_corpus(config.wav, out / "features", config.mfcc)
            written.append(out / "features" / LABELS_FILE)
        else:
            corpus = load_corpus(config.features)
    with stage("split"):
        corpus = prepare_corpus(corpus, config.train_utts, config.test_utts,
                                config.resplit, config.group)
    with stage("trials"):
        trials = generate_trials(corpus.test_map())
        write_trials(out / "trials.csv", trials)
        written.append(out / "trials.csv")
    utts = corpus.by_id()

    per_scoring: dict[str, list[EvalReport]] = {s: [] for s in config.scoring}
    for seed in config.seeds:
        model_path = out / "models" / f"seed{seed}{model_suffix(config.method)}"
        with stage("train"):
            model = train_model(corpus, config.method, config.model_params(), seed, config.threads)
            model_path.parent.mkdir(parents=True, exist_ok=True)
            write_model(model_path, model)
            written.append(model_path)
        sv_dir = out / "supervectors" / f"seed{seed}"
        sv_dir.mkdir(parents=True, exist_ok=True)
        with stage("encode"):
            for utt_id in trials.utterance_ids:
                path = sv_dir / f"{utt_id}.ubsv"
                write_supervector(path, encode(utts[utt_id].frames, model, config.threads))
                written.append(path)
        with stage("score"):
            # score what is on disk so `run` and the `score` command agree
            vectors = {u: read_supervector(sv_dir / f"{u}.ubsv") for u in trials.utterance_ids}
            seed_scores = {}
            for scoring in config.scoring:
                seed_scores[scoring] = score_trials(trials, vectors, scoring)
                path = out / "scores" / f"{scoring}_seed{seed}.csv"
                path.parent.mkdir(parents=True, exist_ok=True)
                write_scores(path, trials, seed_scores[scoring])
                written.append(path)
        with stage("eval"):
            for scoring, scores in seed_scores.items():
                report = evaluate_scores(scores, trials.target)
                det_path = out / "det" / f"{scoring}_seed{seed}.csv"
                det_path.parent.mkdir(parents=True, exist_ok=True)
                write_det(det_path, report.det)
                written.append(det_path)
                per_scoring[scoring].append(report)

    reports = {s: ExperimentReport(s, config.seeds, tuple(r), *run_statistics([x.eer for x in r]))
               for s, r in per_scoring.items()}
    comparison = None
    if len(reports) == 2 and len(config.seeds) >= 2:
        a, b = reports.values()
        comparison = t_test(a.eers, b.eers)

    _write_report(out / "report.csv", reports)
    written.append(out / "report.csv")
    _write_summary(out / "summary.txt", config, reports, comparison, trials)
    written.append(out / "summary.txt")
    _write_manifest(out / "manifest.txt", config, written, out)
    return PipelineResult(config.digest(), reports, comparison)


def _write_report(path: Path, reports: dict) -> None:
    lines = ["scoring,seed,eer,threshold,n_target,n_imposter"]
    for s, rep in reports.items():
        for seed, r in zip(rep.seeds, rep.runs):
            lines.append(f"{s},{seed},{r.eer!r},{r.threshold!r},{r.n_target},{r.n_imposter}")
    path.write_text("\n".join(lines) + "\n")


def _write_summary(path: Path, config: RunConfig, reports: dict, comparison, trials) -> None:
    params = ", ".join(f"{k}={v}" for k, v in config.model_params().items())
    lines = [
        f"config hash: {config.digest()}",
        f"seeds: {','.join(map(str, config.seeds))}",
        f"method: {config.method} ({params})",
        f"trials: {trials.n_target} target, {trials.n_imposter} imposter",
    ]
    for s, rep in reports.items():
        lines.append(f"{s}: EER {100 * rep.mean:.2f}% (std {100 * rep.std:.2f}) over {len(rep.runs)} runs")
    if comparison is not None:
        p, reject = comparison
        names = " vs ".join(reports)
        lines.append(f"welch t-test {names}: p = {p:.4f} ({'significant' if reject else 'not significant'} at 0.05)")
    path.write_text("\n".join(lines) + "\n")


def _write_manifest(path: Path, config: RunConfig, written, root: Path) -> None:
    lines = [f"config_hash = {config.digest()}",
             f"seeds = {','.join(map(str, config.seeds))}", "", "[config]",
             config.canonical().rstrip("\n"), "", "[files]"]
    for p in dict.fromkeys(written):
        lines.append(f"{_sha(p)}  {p.relative_to(root).as_posix()}")
    path.write_text("\n".join(lines) + "\n")

"""Labelled collections of utterance feature matrices.

On disk a corpus is a directory of ``<utterance_id>.ubsf`` feature files plus a
``labels.csv`` with columns ``utterance_id,speaker_id,split`` and an optional
``group`` column (e.g. gender) used to filter per-group experiments.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError
from .features import read_features, write_features

LABELS_FILE = "labels.csv"
FEATURE_SUFFIX = ".ubsf"
SPLITS = ("train", "test", "")


@dataclass(frozen=True)
class Utterance:
    utt_id: str
    speaker: str
    frames: np.ndarray
    split: str = ""
    group: str = ""


class Corpus:
    def __init__(self, utterances):
        self.utterances = list(utterances)
        seen = set()
        for u in self.utterances:
            if u.utt_id in seen:
                raise DataError(f"duplicate utterance id {u.utt_id!r}")
            if u.split not in SPLITS:
                raise DataError(f"utterance {u.utt_id!r}: unknown split {u.split!r}")
            seen.add(u.utt_id)
        dims = {u.frames.shape[1] for u in self.utterances}
        if len(dims) > 1:
            raise DataError(f"inconsistent feature dimensions in corpus: {sorted(dims)}")

    def __len__(self):
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    @property
    def dim(self) -> int:
        return self.utterances[0].frames.shape[1]

    def speakers(self) -> list[str]:
        """Speaker ids in order of first appearance."""
        return list(dict.fromkeys(u.speaker for u in self.utterances))

    def by_id(self) -> dict[str, Utterance]:
        return {u.utt_id: u for u in self.utterances}

    def split(self, name: str) -> list[Utterance]:
        return [u for u in self.utterances if u.split == name]

    def train_frames(self) -> np.ndarray:
        train = self.split("train")
        if not train:
            raise DataError("corpus has no training utterances")
        return np.concatenate([u.frames for u in train])

    def test_map(self) -> dict[str, list[str]]:
        """Speaker -> test utterance ids, both in corpus order."""
        out: dict[str, list[str]] = {}
        for u in self.split("test"):
            out.setdefault(u.speaker, []).append(u.utt_id)
        return out

    def restrict(self, speakers) -> "Corpus":
        keep = set(speakers)
        return Corpus(u for u in self.utterances if u.speaker in keep)

    def filter_group(self, group: str) -> "Corpus":
        sub = Corpus(u for u in self.utterances if u.group == group)
        if not sub.utterances:
            raise DataError(f"no utterances in group {group!r}")
        return sub

    def with_split(self, train_utts: int = 8, test_utts: int = 2) -> "Corpus":
        """Assign splits by order within each speaker: the first ``train_utts``
        train, the next ``test_utts`` test, anything after is unused."""
        counts: dict[str, int] = {}
        out = []
        for u in self.utterances:
            i = counts.get(u.speaker, 0)
            counts[u.speaker] = i + 1
            split = "train" if i < train_utts else "test" if i < train_utts + test_utts else ""
            out.append(replace(u, split=split))
        return Corpus(out)


def write_labels(path, rows) -> None:
    rows = list(rows)
    with_group = any(r[3] for r in rows if len(r) > 3)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["utterance_id", "speaker_id", "split"] + (["group"] if with_group else []))
        for r in rows:
            w.writerow(list(r[:3]) + ([r[3] if len(r) > 3 else ""] if with_group else []))


def read_labels(path) -> list[tuple[str, str, str, str]]:
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise DataError(f"missing labels file {path}") from None
    with fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"utterance_id", "speaker_id"} <= set(reader.fieldnames):
            raise DataError(f"{path}: labels need utterance_id and speaker_id columns")
        return [(r["utterance_id"], r["speaker_id"], (r.get("split") or "").strip(),
                 (r.get("group") or "").strip()) for r in reader]


def save_corpus(corpus: Corpus, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for u in corpus:
        write_features(directory / f"{u.utt_id}{FEATURE_SUFFIX}", u.frames)
    write_labels(directory / LABELS_FILE,
                 [(u.utt_id, u.speaker, u.split, u.group) for u in corpus])


def load_corpus(directory) -> Corpus:
    directory = Path(directory)
    utts = []
    for utt_id, speaker, split, group in read_labels(directory / LABELS_FILE):
        path = directory / f"{utt_id}{FEATURE_SUFFIX}"
        if not path.exists():
            raise DataError(f"missing feature file {path}")
        utts.append(Utterance(utt_id, speaker, read_features(path), split, group))
    if not utts:
        raise DataError(f"{directory}: empty corpus")
    return Corpus(utts)

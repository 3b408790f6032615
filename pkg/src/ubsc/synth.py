"""Synthetic speaker corpora with controllable separability.

Each speaker has a mean drawn from an isotropic Gaussian, each utterance adds
a channel offset, and frames scatter around that. With ``components > 1`` a
speaker's frames come from a small mixture instead, which breaks the
single-Gaussian assumption on purpose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Utterance
from .errors import ConfigError


@dataclass(frozen=True)
class SynthSpec:
    speakers: int = 30
    utts: int = 10
    frames: int = 300
    dim: int = 20
    between: float = 1.0
    within: float = 1.0
    channel: float = 0.1
    seed: int = 0
    train_utts: int = 8
    components: int = 1
    # spread of per-speaker mixture components around the speaker mean
    component_spread: float = 0.5

    def __post_init__(self):
        for name in ("speakers", "utts", "frames", "dim", "components"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("between", "within", "channel", "component_spread"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if not 0 <= self.train_utts <= self.utts:
            raise ConfigError("train_utts must lie in [0, utts]")


def synth_corpus(spec: SynthSpec) -> Corpus:
    rng = np.random.default_rng(spec.seed)
    width = len(str(spec.speakers - 1))
    uwidth = len(str(spec.utts - 1))
    out = []
    for s in range(spec.speakers):
        mean = rng.normal(0.0, spec.between, size=spec.dim)
        if spec.components > 1:
            sub = mean + rng.normal(0.0, spec.component_spread, size=(spec.components, spec.dim))
        speaker = f"spk{s:0{width}d}"
        for u in range(spec.utts):
            center = mean + rng.normal(0.0, spec.channel, size=spec.dim)
            noise = rng.normal(0.0, spec.within, size=(spec.frames, spec.dim))
            if spec.components > 1:
                which = rng.integers(spec.components, size=spec.frames)
                frames = sub[which] - mean + center + noise
            else:
                frames = center + noise
            split = "train" if u < spec.train_utts else "test"
            out.append(Utterance(f"{speaker}_u{u:0{uwidth}d}", speaker, frames, split))
    return Corpus(out)

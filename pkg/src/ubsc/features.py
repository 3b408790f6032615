"""MFCC frontend and feature-file I/O.

The pipeline is deliberately plain: Hamming-windowed 25 ms frames every 10 ms,
no pre-emphasis, no VAD, 19 cepstra (c0 dropped) plus the log energy of the
windowed frame, then a Hamming-shaped lifter over the cepstra.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy.fft import dct

from .errors import (
    BadMagic,
    ConfigError,
    DataError,
    DimensionMismatch,
    EmptyUtterance,
    TruncatedFile,
    UtteranceTooShort,
    VersionMismatch,
)

FEATURE_MAGIC = b"UBSF"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class MfccConfig:
    sample_rate: int = 16000
    frame_ms: float = 25.0
    shift_ms: float = 10.0
    n_fft: int = 512
    n_filters: int = 26
    n_ceps: int = 19
    fmin: float = 0.0
    fmax: float | None = None
    lifter: bool = True
    energy_floor: float = 1e-10
    # log energy of the windowed frame (True) or of the raw frame (False)
    energy_after_window: bool = True

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if not self.frame_ms >= self.shift_ms > 0:
            raise ConfigError("need frame_ms >= shift_ms > 0")
        if self.frame_length > self.n_fft:
            raise ConfigError(
                f"frame of {self.frame_length} samples does not fit n_fft={self.n_fft}")
        if not 1 <= self.n_ceps < self.n_filters:
            raise ConfigError("need 1 <= n_ceps < n_filters")
        if self.energy_floor <= 0:
            raise ConfigError("energy_floor must be positive")
        if not 0 <= self.fmin < self.upper_frequency <= self.sample_rate / 2:
            raise ConfigError("need 0 <= fmin < fmax <= sample_rate / 2")

    @property
    def frame_length(self) -> int:
        return int(round(self.frame_ms * self.sample_rate / 1000.0))

    @property
    def frame_shift(self) -> int:
        return int(round(self.shift_ms * self.sample_rate / 1000.0))

    @property
    def upper_frequency(self) -> float:
        return self.sample_rate / 2.0 if self.fmax is None else float(self.fmax)

    @property
    def dim(self) -> int:
        return self.n_ceps + 1

    @classmethod
    def from_mapping(cls, values: dict) -> "MfccConfig":
        """Build from string values (config files, ``--set`` overrides)."""
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown MFCC option {key!r}")
            kwargs[key] = _coerce(key, raw, cls.__dataclass_fields__[key].default)
        return cls(**kwargs)

    def as_dict(self) -> dict:
        return asdict(self)


def _coerce(key, raw, default):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if default is None:
            return None if text.lower() in ("", "none") else float(text)
        return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


@dataclass(frozen=True)
class AudioSignal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise DataError("sample_rate must be positive")
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))


def frame_signal(signal: AudioSignal, frame_ms: float = 25.0, shift_ms: float = 10.0) -> np.ndarray:
    """Cut a signal into overlapping frames, shape ``(N, frame_len)``.

    Frame ``j`` covers samples ``j * shift + [0, frame_len)``; the tail that
    does not fill a whole frame is dropped.
    """
    if not frame_ms >= shift_ms > 0:
        raise ConfigError("need frame_ms >= shift_ms > 0")
    frame_len = int(round(frame_ms * signal.sample_rate / 1000.0))
    shift = int(round(shift_ms * signal.sample_rate / 1000.0))
    x = signal.samples
    if x.ndim != 1:
        raise DataError("expected a mono signal")
    if x.size < frame_len:
        raise UtteranceTooShort(
            f"utterance too short: {x.size} samples, one frame needs {frame_len}")
    windows = np.lib.stride_tricks.sliding_window_view(x, frame_len)[::shift]
    return np.ascontiguousarray(windows)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(config: MfccConfig) -> tuple[np.ndarray, np.ndarray]:
    """Triangular filters on the rfft bins; returns ``(weights, centers_hz)``.

    ``weights`` has shape ``(n_filters, n_fft // 2 + 1)``.
    """
    edges = _mel_to_hz(np.linspace(_hz_to_mel(config.fmin), _hz_to_mel(config.upper_frequency),
                                   config.n_filters + 2))
    bins = np.fft.rfftfreq(config.n_fft, d=1.0 / config.sample_rate)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins[None, :] - lo) / (mid - lo)
    falling = (hi - bins[None, :]) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    return weights, edges[1:-1]


def lifter_weights(n_ceps: int) -> np.ndarray:
    """Hamming-shaped raised-cosine lifter for c_1..c_n (endpoints of a
    length ``n + 2`` Hamming window dropped so no coefficient is zeroed)."""
    return np.hamming(n_ceps + 2)[1:-1]


def _analyze(frames: np.ndarray, config: MfccConfig, lifter: bool):
    window = np.hamming(config.frame_length)
    windowed = frames * window
    spectrum = np.fft.rfft(windowed, n=config.n_fft, axis=-1)
    power = spectrum.real ** 2 + spectrum.imag ** 2
    fbank, _ = mel_filterbank(config)
    mel_energy = power @ fbank.T
    log_mel = np.log(np.maximum(mel_energy, config.energy_floor))
    ceps = dct(log_mel, type=2, norm="ortho", axis=-1)[:, 1:config.n_ceps + 1]
    if lifter:
        ceps = ceps * lifter_weights(config.n_ceps)
    src = windowed if config.energy_after_window else frames
    energy = np.log(np.maximum(np.sum(src * src, axis=-1), config.energy_floor))
    return mel_energy, np.column_stack([ceps, energy])


def _check_frames(frames: np.ndarray, sample_rate: int, config: MfccConfig):
    if sample_rate != config.sample_rate:
        raise ConfigError(f"sample rate {sample_rate} != configured {config.sample_rate}")
    if frames.shape[-1] != config.frame_length:
        raise DimensionMismatch(
            f"frame has {frames.shape[-1]} samples, config expects {config.frame_length}")


def mel_energies(frame, sample_rate: int, config: MfccConfig = MfccConfig()) -> np.ndarray:
    """Mel filterbank energies of one frame (before log and DCT)."""
    frame = np.asarray(frame, dtype=np.float64)
    _check_frames(frame, sample_rate, config)
    return _analyze(frame[None, :], config, config.lifter)[0][0]


def mfcc_frame(frame, sample_rate: int, config: MfccConfig = MfccConfig()) -> np.ndarray:
    """19 cepstra followed by the log energy for a single frame."""
    frame = np.asarray(frame, dtype=np.float64)
    _check_frames(frame, sample_rate, config)
    return _analyze(frame[None, :], config, config.lifter)[1][0]


def extract_utterance(signal: AudioSignal, config: MfccConfig = MfccConfig()) -> np.ndarray:
    """All frames of an utterance as an ``(N, n_ceps + 1)`` matrix; nothing is dropped."""
    frames = frame_signal(signal, config.frame_ms, config.shift_ms)
    _check_frames(frames, signal.sample_rate, config)
    return _analyze(frames, config, config.lifter)[1]


def read_wav(path) -> AudioSignal:
    try:
        with wave.open(str(path), "rb") as w:
            if w.getcomptype() != "NONE" or w.getsampwidth() != 2:
                raise DataError(f"{path}: only 16-bit PCM WAV is supported")
            if w.getnchannels() != 1:
                raise DataError(f"{path}: only mono WAV is supported")
            raw = w.readframes(w.getnframes())
            rate = w.getframerate()
    except (wave.Error, EOFError) as exc:
        raise DataError(f"{path}: unsupported or corrupt WAV ({exc})") from None
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioSignal(samples, rate)


def write_wav(path, signal: AudioSignal) -> None:
    pcm = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(signal.sample_rate)
        w.writeframes(pcm.tobytes())


def write_features(path, frames) -> None:
    """Write a feature matrix as little-endian float32 ("UBSF" layout)."""
    frames = np.asarray(frames)
    if frames.ndim != 2:
        raise DimensionMismatch("feature matrix must be 2-D")
    if frames.shape[0] == 0:
        raise EmptyUtterance(f"{path}: empty utterance (0 frames)")
    if not np.all(np.isfinite(frames)):
        raise DataError(f"{path}: non-finite feature values")
    header = _FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, *frames.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(frames, dtype="<f4").tobytes())


def read_features(path, dim: int | None = None) -> np.ndarray:
    """Read a "UBSF" file into an ``(N, d)`` float32 array."""
    data = Path(path).read_bytes()
    if len(data) < _FEATURE_HEADER.size:
        raise TruncatedFile(f"{path}: truncated feature header")
    magic, version, n, d = _FEATURE_HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise VersionMismatch(f"{path}: unsupported feature version {version}")
    if dim is not None and d != dim:
        raise DimensionMismatch(f"{path}: dimension {d}, expected {dim}")
    if n == 0:
        raise EmptyUtterance(f"{path}: empty utterance (0 frames)")
    expected = _FEATURE_HEADER.size + 4 * n * d
    if len(data) < expected:
        raise TruncatedFile(f"{path}: truncated feature data")
    if len(data) > expected:
        raise DataError(f"{path}: trailing bytes after feature data")
    return np.frombuffer(data, dtype="<f4", offset=_FEATURE_HEADER.size).reshape(n, d).copy()

"""Audio I/O, STFT magnitudes and log-mel conditioning features."""

from __future__ import annotations

import logging
import math
import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

log = logging.getLogger(__name__)

SAMPLE_RATE = 24000
MAG_EPS = 1e-14
MEL_LOG_FLOOR = 1e-10
STATS_MAGIC = b"PWGSTAT1"


class WavFormatError(ValueError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("AudioClip holds mono audio (1-D samples)")
        if self.sample_rate_hz != SAMPLE_RATE:
            raise ValueError(f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate_hz}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def seconds(self) -> float:
        return len(self.samples) / self.sample_rate_hz


def read_wav(path) -> AudioClip:
    """Read a PCM16 mono 24 kHz WAV; samples map to ``s / 32768``."""
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate = w.getnchannels(), w.getsampwidth(), w.getframerate()
            frames = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise WavFormatError(f"{path}: not a PCM WAV file ({exc})") from exc
    except EOFError as exc:
        raise WavFormatError(f"{path}: truncated WAV file") from exc
    if width != 2:
        raise WavFormatError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    if channels != 1:
        raise WavFormatError(f"{path}: expected 1 channel, got {channels} channels")
    if rate != SAMPLE_RATE:
        raise WavFormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate} Hz")
    pcm = np.frombuffer(frames, dtype="<i2")
    return AudioClip(pcm.astype(np.float64) / 32768.0)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    """Clamp to [-1, 1], scale by 32768 and round half away from zero."""
    s = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0) * 32768.0
    q = np.sign(s) * np.floor(np.abs(s) + 0.5)
    return np.clip(q, -32768, 32767).astype("<i2")


def write_wav(path, clip: AudioClip | np.ndarray) -> None:
    samples = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(to_pcm16(samples).tobytes())


# ------------------------------------------------------------------- STFT

@dataclass(frozen=True)
class StftConfig:
    fft_size: int
    win_size: int
    hop: int

    def __post_init__(self):
        if self.fft_size < 2 or self.fft_size & (self.fft_size - 1):
            raise ValueError(f"fft_size must be a power of two, got {self.fft_size}")
        if not 0 < self.win_size <= self.fft_size:
            raise ValueError("need 0 < win_size <= fft_size")
        if not 0 < self.hop <= self.win_size:
            raise ValueError("need 0 < hop <= win_size")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def n_frames(self, length: int) -> int:
        return 1 + (length - self.win_size) // self.hop

    def __str__(self) -> str:
        return f"{self.fft_size}:{self.win_size}:{self.hop}"

    @classmethod
    def parse(cls, text: str) -> "StftConfig":
        fft_size, win, hop = (int(v) for v in text.split(":"))
        return cls(fft_size, win, hop)


@lru_cache(maxsize=16)
def hann_window(size: int) -> np.ndarray:
    """Symmetric Hann window ``0.5 * (1 - cos(2 pi n / (W - 1)))``."""
    if size == 1:
        return np.ones(1)
    n = np.arange(size)
    w = 0.5 * (1.0 - np.cos(2.0 * np.pi * n / (size - 1)))
    w.flags.writeable = False
    return w


def _signal(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, AudioClip):
        return Tensor(x.samples)
    return Tensor(np.asarray(x, dtype=np.float64))


def frame_signal(x, cfg: StftConfig) -> Tensor:
    """Hann-windowed frames ``[..., F, fft_size]`` starting at ``f * hop`` (no centring)."""
    return T.frame(_signal(x), cfg.win_size, cfg.hop, hann_window(cfg.win_size), cfg.fft_size)


def stft_magnitude(x, cfg: StftConfig) -> Tensor:
    """``sqrt(re^2 + im^2 + 1e-14)`` per frame and bin, shape ``[..., F, fft/2 + 1]``."""
    re, im = T.rdft(frame_signal(x, cfg))
    return T.sqrt(T.add_scalar(T.square(re) + T.square(im), MAG_EPS))


# -------------------------------------------------------------------- mel

@dataclass(frozen=True)
class MelConfig:
    n_mels: int = 80
    f_min: float = 70.0
    f_max: float = 8000.0
    win_size: int = 1200
    hop: int = 300
    fft_size: int = 2048
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if not 0 <= self.f_min < self.f_max <= self.sample_rate / 2:
            raise ValueError("need 0 <= f_min < f_max <= sample_rate / 2")
        if (self.win_size - self.hop) % 2:
            raise ValueError("win_size - hop must be even so frames centre on hop segments")

    @property
    def stft(self) -> StftConfig:
        return StftConfig(self.fft_size, self.win_size, self.hop)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_centers(mc: MelConfig) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(mc.f_min), hz_to_mel(mc.f_max), mc.n_mels + 2))
    return edges[1:-1]


@lru_cache(maxsize=8)
def mel_filterbank(mc: MelConfig) -> np.ndarray:
    """Triangular filters ``[n_mels, fft/2 + 1]`` evenly spaced on the mel scale."""
    edges = mel_to_hz(np.linspace(hz_to_mel(mc.f_min), hz_to_mel(mc.f_max), mc.n_mels + 2))
    freqs = np.arange(mc.fft_size // 2 + 1) * mc.sample_rate / mc.fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.max(axis=1) <= 0)
    if empty.size:
        raise ValueError(f"mel bands {empty.tolist()} contain no FFT bin; raise fft_size")
    fb.flags.writeable = False
    return fb


@dataclass
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("mean and std must be 1-D arrays of equal length")
        if np.any(self.std <= 0):
            raise ValueError("feature stats have a non-positive std")

    def normalize(self, feats: np.ndarray) -> np.ndarray:
        return (feats - self.mean[:, None]) / self.std[:, None]

    def to_bytes(self) -> bytes:
        return STATS_MAGIC + np.concatenate([self.mean, self.std]).astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "FeatureStats":
        if raw[:8] != STATS_MAGIC:
            raise ValueError("not a feature-stats file (bad magic)")
        body = np.frombuffer(raw[8:], dtype="<f8")
        if body.size == 0 or body.size % 2:
            raise ValueError("corrupt feature-stats payload")
        half = body.size // 2
        return cls(body[:half].copy(), body[half:].copy())

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "FeatureStats":
        return cls.from_bytes(Path(path).read_bytes())


def mel_spectrogram(x, mc: MelConfig = MelConfig(), stats: FeatureStats | None = None) -> np.ndarray:
    """Log-mel features ``[n_mels, len // hop]``.

    The signal is zero-padded by ``(win - hop) / 2`` on each side so that frame
    ``f`` is centred on samples ``[f * hop, (f + 1) * hop)``, which keeps
    ``T == F * hop`` for the generator.
    """
    samples = x.samples if isinstance(x, AudioClip) else np.asarray(x, dtype=np.float64)
    if len(samples) < mc.hop:
        raise ValueError(f"clip of {len(samples)} samples is shorter than one hop")
    side = (mc.win_size - mc.hop) // 2
    padded = np.pad(samples, (side, side))
    n_frames = len(samples) // mc.hop
    with T.no_grad():
        mag = stft_magnitude(padded, mc.stft).data[:n_frames]
    feats = np.log(mag @ mel_filterbank(mc).T + MEL_LOG_FLOOR).T
    if stats is not None:
        feats = stats.normalize(feats)
    return np.ascontiguousarray(feats)


def compute_stats(corpus: Sequence, mc: MelConfig = MelConfig()) -> FeatureStats:
    """Population mean / std per band over all frames of all clips.

    Sums use ``math.fsum`` so the result does not depend on clip order or
    duplication.
    """
    if len(corpus) == 0:
        raise ValueError("cannot compute feature stats over an empty corpus")
    feats = [c if isinstance(c, np.ndarray) and c.ndim == 2 else mel_spectrogram(c, mc)
             for c in corpus]
    allf = np.concatenate(feats, axis=1)
    n = allf.shape[1]
    mean = np.array([math.fsum(row) / n for row in allf.tolist()])
    centred = allf - mean[:, None]
    var = np.array([math.fsum(row) / n for row in (centred * centred).tolist()])
    std = np.sqrt(var)
    flat = np.flatnonzero(std < 1e-8)
    if flat.size:
        log.warning("zero-variance mel bands %s; std floored at 1e-8", flat.tolist())
        std = np.maximum(std, 1e-8)
    return FeatureStats(mean, std)


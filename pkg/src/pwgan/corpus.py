"""Synthetic desk-scale corpus and prepared-dataset directories."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import SAMPLE_RATE, AudioClip, FeatureStats, MelConfig, compute_stats, mel_spectrogram, read_wav, write_wav

MANIFEST = "manifest.txt"
STATS_FILE = "stats.bin"


@dataclass
class Utterance:
    name: str
    audio: np.ndarray   # [T], T == frames * hop
    mel: np.ndarray     # [n_mels, frames], normalised

    @property
    def n_frames(self) -> int:
        return self.mel.shape[1]


def synth_clip(rng: np.random.Generator, hop: int = 300) -> np.ndarray:
    """1-4 decaying sinusoids (80-7000 Hz) plus faint white noise, 1-3 s long."""
    n = int(rng.integers(SAMPLE_RATE // hop, 3 * SAMPLE_RATE // hop + 1)) * hop
    t = np.arange(n) / SAMPLE_RATE
    x = np.zeros(n)
    for _ in range(int(rng.integers(1, 5))):
        freq = rng.uniform(80.0, 7000.0)
        amp = rng.uniform(0.2, 1.0)
        decay = rng.uniform(0.3, 3.0)
        onset = rng.uniform(0.0, 0.3 * t[-1])
        env = np.where(t >= onset, np.exp(-decay * (t - onset)), 0.0)
        x += amp * env * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    x *= 0.6 / max(np.max(np.abs(x)), 1e-9)
    x += 0.003 * rng.standard_normal(n)
    return np.clip(x, -1.0, 1.0)


def generate_corpus(out_dir, minutes: float, seed: int = 0) -> list[Path]:
    """Write ``clip_XXXX.wav`` files until ``minutes`` of audio exist."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    target = int(minutes * 60 * SAMPLE_RATE)
    total, paths = 0, []
    while total < target:
        x = synth_clip(rng)
        path = out / f"clip_{len(paths):04d}.wav"
        write_wav(path, AudioClip(x))
        paths.append(path)
        total += len(x)
    return paths


def prepare(in_dir, out_dir, mc: MelConfig = MelConfig()) -> tuple[FeatureStats, list[Utterance]]:
    """Extract features for every WAV in ``in_dir``; persist stats, features and manifest."""
    wavs = sorted(Path(in_dir).glob("*.wav"))
    if not wavs:
        raise FileNotFoundError(f"no .wav files in {in_dir}")
    clips = [read_wav(p) for p in wavs]
    raw = [mel_spectrogram(c, mc) for c in clips]
    stats = compute_stats(raw, mc)
    out = Path(out_dir)
    (out / "feats").mkdir(parents=True, exist_ok=True)
    stats.save(out / STATS_FILE)
    lines, utts = [], []
    for path, clip, feats in zip(wavs, clips, raw):
        norm = stats.normalize(feats)
        np.save(out / "feats" / f"{path.stem}.npy", norm)
        n_frames = norm.shape[1]
        lines.append(f"name={path.stem} wav={path.resolve()} n_samples={len(clip)} n_frames={n_frames}\n")
        utts.append(Utterance(path.stem, clip.samples[: n_frames * mc.hop], norm))
    (out / MANIFEST).write_text("".join(lines))
    return stats, utts


def read_manifest(data_dir) -> list[dict[str, str]]:
    path = Path(data_dir) / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"no {MANIFEST} in {data_dir}; run `pwgan prepare` first")
    return [dict(kv.split("=", 1) for kv in line.split()) for line in path.read_text().splitlines() if line.strip()]


def load_prepared(data_dir, hop: int = 300) -> tuple[FeatureStats, list[Utterance]]:
    data_dir = Path(data_dir)
    stats = FeatureStats.load(data_dir / STATS_FILE)
    utts = []
    for entry in read_manifest(data_dir):
        mel = np.load(data_dir / "feats" / f"{entry['name']}.npy")
        audio = read_wav(entry["wav"]).samples[: mel.shape[1] * hop]
        utts.append(Utterance(entry["name"], audio, mel))
    return stats, utts


def utterances_from_clips(clips, mc: MelConfig, stats: FeatureStats, names=None) -> list[Utterance]:
    utts = []
    for i, clip in enumerate(clips):
        samples = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)
        mel = mel_spectrogram(samples, mc, stats)
        name = names[i] if names else f"clip_{i:04d}"
        utts.append(Utterance(name, samples[: mel.shape[1] * mc.hop], mel))
    return utts

"""Parallel synthesis, real-time-factor benchmark and held-out evaluation."""

from __future__ import annotations

import json
import math
import os
import statistics
import time
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .corpus import Utterance
from .dsp import SAMPLE_RATE, AudioClip
from .losses import multi_res_stft_terms
from .models import Generator, param_count


def synthesize(generator: Generator, mel: np.ndarray, seed: int = 0) -> AudioClip:
    """One forward pass over the whole clip; noise drawn from ``seed``."""
    mel = np.asarray(mel, dtype=np.float64)
    if mel.ndim != 2 or mel.shape[1] < 1:
        raise ValueError(f"mel must be [bands, frames] with frames >= 1, got {mel.shape}")
    z = np.random.default_rng(seed).standard_normal((1, mel.shape[1] * generator.cfg.hop))
    return AudioClip(np.clip(generate(generator, z, mel), -1.0, 1.0))


def generate(generator: Generator, z: np.ndarray, mel: np.ndarray) -> np.ndarray:
    with T.no_grad():
        return generator(z, mel).data.reshape(-1)


def context_frames(generator: Generator) -> int:
    """Mel frames of context each side that fully cover the receptive field."""
    cfg = generator.cfg
    reach = cfg.receptive_half_width
    rate = 1
    for r in cfg.upsample_scales:
        rate *= r
        reach += r * cfg.hop // rate  # time half-width of this stage's kernel, in output samples
    return math.ceil(reach / cfg.hop) + 1


def synthesize_chunked(generator: Generator, z: np.ndarray, mel: np.ndarray,
                       chunk_frames: int, overlap_frames: int | None = None) -> np.ndarray:
    """Generate ``chunk_frames`` at a time with ``overlap_frames`` of context per side.

    With enough overlap each kept sample sees exactly the inputs it sees in a
    whole-clip pass, so the output matches that pass.
    """
    hop = generator.cfg.hop
    overlap = context_frames(generator) if overlap_frames is None else overlap_frames
    n_frames = mel.shape[1]
    z = np.asarray(z).reshape(1, -1)
    out = np.empty(n_frames * hop)
    for start in range(0, n_frames, chunk_frames):
        stop = min(start + chunk_frames, n_frames)
        lo, hi = max(0, start - overlap), min(n_frames, stop + overlap)
        y = generate(generator, z[:, lo * hop:hi * hop], mel[:, lo:hi])
        out[start * hop:stop * hop] = y[(start - lo) * hop:(stop - lo) * hop]
    return out


# ------------------------------------------------------------------ benchmark

@dataclass
class BenchReport:
    audio_seconds_generated: float
    wall_seconds: float
    rtf: float
    param_count_generator: int
    param_count_with_upsampler: int
    threads_used: int
    linearity_ratio: float
    trials: int
    forward_passes_per_clip: int = 1

    def to_text(self) -> str:
        return "".join(f"{k}={v!r}\n" for k, v in asdict(self).items())

    def to_record(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _threads() -> int:
    try:
        from threadpoolctl import threadpool_info
        counts = [i.get("num_threads", 1) for i in threadpool_info()]
        return max(counts) if counts else 1
    except ImportError:  # pragma: no cover
        return int(os.environ.get("PWG_THREADS", "1"))


def _time_forward(generator: Generator, mel: np.ndarray, z: np.ndarray, trials: int) -> float:
    times = []
    for _ in range(trials):
        t0 = time.perf_counter()
        generate(generator, z, mel)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def benchmark(generator: Generator, seconds: float = 1.0, trials: int = 3, seed: int = 0) -> BenchReport:
    """Median wall time of whole-clip synthesis after one warm-up pass.

    The linearity probe divides the median time for ``2 * seconds`` of audio by
    the time for ``seconds``.
    """
    if seconds < 1:
        raise ValueError("benchmark needs at least one second of audio")
    cfg = generator.cfg
    rng = np.random.default_rng(seed)
    frames = math.ceil(seconds * SAMPLE_RATE / cfg.hop)
    mel = rng.standard_normal((cfg.aux_channels, 2 * frames))
    z = rng.standard_normal((1, 2 * frames * cfg.hop))
    short_mel, short_z = mel[:, :frames], z[:, :frames * cfg.hop]

    generate(generator, short_z, short_mel)  # warm-up
    wall = _time_forward(generator, short_mel, short_z, trials)
    wall_2x = _time_forward(generator, mel, z, trials)
    audio = frames * cfg.hop / SAMPLE_RATE
    return BenchReport(
        audio_seconds_generated=audio,
        wall_seconds=wall,
        rtf=audio / wall,
        param_count_generator=generator.param_count(include_upsampler=False),
        param_count_with_upsampler=param_count(generator),
        threads_used=_threads(),
        linearity_ratio=wall_2x / wall,
        trials=trials,
    )


# ------------------------------------------------------------------ evaluation

def evaluate(generator: Generator, corpus: Sequence[Utterance], cfg: TrainConfig,
             seed: int = 1234) -> tuple[list[dict], dict]:
    """Per-clip and aggregate multi-resolution STFT loss of analysis-synthesis."""
    if not corpus:
        raise ValueError("evaluation corpus is empty")
    rows = []
    with T.no_grad():
        for i, u in enumerate(corpus):
            rng = np.random.default_rng([seed, i])
            z = rng.standard_normal((1, len(u.audio)))
            y = T.reshape(generator(z, u.mel), (len(u.audio),))
            terms = multi_res_stft_terms(u.audio, y, cfg.multi_res)
            row = {"clip": u.name, "l_aux": float(np.mean([sc.item() + mag.item() for sc, mag in terms]))}
            for k, (sc, mag) in enumerate(terms):
                row[f"sc_{k}"] = sc.item()
                row[f"mag_{k}"] = mag.item()
            rows.append(row)
    agg = {"clip": "ALL", "n_clips": len(rows)}
    for key in rows[0]:
        if key != "clip":
            agg[key] = float(np.mean([r[key] for r in rows]))
    agg["l_aux_std"] = float(np.std([r["l_aux"] for r in rows]))
    return rows, agg

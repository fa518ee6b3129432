"""Two-phase adversarial training with RAdam, checkpoints and metric logs."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import checkpoint
from . import tensor as T
from .config import OptimizerConfig, TrainConfig, config_from_dict
from .corpus import Utterance
from .dsp import FeatureStats
from .losses import (adv_loss_generator, loss_discriminator, loss_generator_total,
                     mean_of_terms, multi_res_stft_terms)
from .models import Discriminator, Generator, Module

log = logging.getLogger(__name__)


class NumericError(FloatingPointError):
    """A loss or gradient went non-finite."""


# ------------------------------------------------------------------ RAdam

def radam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
               t: int, lr: float, oc: OptimizerConfig):
    """One rectified-Adam update; returns ``(param, m, v)`` as new arrays.

    While the variance estimate is unreliable (rho_t <= 4) the step is plain
    bias-corrected momentum.
    """
    if t < 1:
        raise ValueError("RAdam step counter starts at 1")
    b1, b2 = oc.beta1, oc.beta2
    m = b1 * m + (1.0 - b1) * grad
    v = b2 * v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1 ** t)
    rho_inf = 2.0 / (1.0 - b2) - 1.0
    b2t = b2 ** t
    rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t)
    if rho_t > 4.0:
        rect = math.sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf
                         / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
        denom = np.sqrt(v / (1.0 - b2t)) + oc.eps
        param = param - lr * rect * m_hat / denom
    else:
        param = param - lr * m_hat
    return param, m, v


class RAdam:
    def __init__(self, named_params: Sequence[tuple[str, T.Tensor]], oc: OptimizerConfig):
        self.params = dict(named_params)
        self.oc = oc
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, lr: float) -> None:
        grads = {}
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name}")
            grads[name] = g
        self.t += 1
        for name, p in self.params.items():
            p.data, self.m[name], self.v[name] = radam_step(
                p.data, grads[name], self.m[name], self.v[name], self.t, lr, self.oc)


# ------------------------------------------------------------------ batches

@dataclass
class Batch:
    z: np.ndarray        # [B, 1, T]
    mel: np.ndarray      # [B, n_mels, T / hop]
    x: np.ndarray        # [B, T]
    clips: np.ndarray
    offsets: np.ndarray  # sample offsets, multiples of hop


def make_batch(corpus: Sequence[Utterance], cfg: TrainConfig, rng: np.random.Generator) -> Batch:
    """Uniform clip, hop-aligned offset, fresh N(0, 1) noise for every item."""
    need = cfg.clip_samples + cfg.multi_res.max_window
    eligible = [i for i, u in enumerate(corpus) if len(u.audio) >= need]
    if not eligible:
        raise ValueError(f"no corpus clip has the {need} samples a training segment needs")
    frames = cfg.frames_per_clip
    clips = np.empty(cfg.batch_size, dtype=np.int64)
    offsets = np.empty(cfg.batch_size, dtype=np.int64)
    mel = np.empty((cfg.batch_size, corpus[0].mel.shape[0], frames))
    x = np.empty((cfg.batch_size, cfg.clip_samples))
    for b in range(cfg.batch_size):
        clips[b] = eligible[int(rng.integers(len(eligible)))]
        u = corpus[clips[b]]
        start = int(rng.integers(0, u.n_frames - frames + 1))
        offsets[b] = start * cfg.hop
        mel[b] = u.mel[:, start:start + frames]
        x[b] = u.audio[offsets[b]:offsets[b] + cfg.clip_samples]
    z = rng.standard_normal((cfg.batch_size, 1, cfg.clip_samples))
    return Batch(z, mel, x, clips, offsets)


# ------------------------------------------------------------------ state

@dataclass
class TrainState:
    cfg: TrainConfig
    generator: Generator
    discriminator: Discriminator
    opt_g: RAdam
    opt_d: RAdam
    rng: np.random.Generator
    stats: FeatureStats | None = None
    step: int = 0

    @classmethod
    def create(cls, cfg: TrainConfig, stats: FeatureStats | None = None) -> "TrainState":
        g = Generator(cfg.generator, seed=cfg.seed)
        d = Discriminator(cfg.discriminator, seed=cfg.seed + 1)
        return cls(cfg, g, d, RAdam(g.named_parameters(), cfg.opt_g),
                   RAdam(d.named_parameters(), cfg.opt_d),
                   np.random.default_rng(cfg.seed), stats)

    def lr(self, step: int | None = None) -> tuple[float, float]:
        step = self.step if step is None else step
        factor = 2.0 ** -(step // self.cfg.decay_half_every)
        return self.cfg.lr_g * factor, self.cfg.lr_d * factor

    def frozen(self, step: int | None = None) -> bool:
        return (self.step if step is None else step) < self.cfg.d_frozen_steps

    # ------------------------------------------------------- persistence
    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, model, opt in (("gen", self.generator, self.opt_g), ("disc", self.discriminator, self.opt_d)):
            for name, p in model.named_parameters():
                out[f"{prefix}/{name}"] = p.data
                out[f"{prefix}.m/{name}"] = opt.m[name]
                out[f"{prefix}.v/{name}"] = opt.v[name]
        if self.stats is not None:
            out["stats/mean"] = self.stats.mean
            out["stats/std"] = self.stats.std
        return out

    def save(self, path) -> None:
        lr_g, lr_d = self.lr()
        meta = {
            "step": self.step,
            "opt_g_t": self.opt_g.t,
            "opt_d_t": self.opt_d.t,
            "lr_g": lr_g,
            "lr_d": lr_d,
            "rng": self.rng.bit_generator.state,
            "config": self.cfg.to_dict(),
        }
        checkpoint.save(path, self.tensors(), meta)

    @classmethod
    def load(cls, path) -> "TrainState":
        tensors, meta = checkpoint.load(path)
        cfg = config_from_dict(meta["config"])
        stats = None
        if "stats/mean" in tensors:
            stats = FeatureStats(tensors["stats/mean"], tensors["stats/std"])
        state = cls.create(cfg, stats)
        for prefix, model, opt in (("gen", state.generator, state.opt_g),
                                   ("disc", state.discriminator, state.opt_d)):
            names = [n for n, _ in model.named_parameters()]
            try:
                model.load_state_dict({n: tensors[f"{prefix}/{n}"] for n in names})
                opt.m = {n: tensors[f"{prefix}.m/{n}"] for n in names}
                opt.v = {n: tensors[f"{prefix}.v/{n}"] for n in names}
            except KeyError as exc:
                raise checkpoint.CheckpointError(f"{path}: checkpoint/config mismatch ({exc})") from exc
        state.opt_g.t = meta["opt_g_t"]
        state.opt_d.t = meta["opt_d_t"]
        state.step = meta["step"]
        state.rng.bit_generator.state = meta["rng"]
        return state


def load_generator(path) -> tuple[Generator, TrainConfig, FeatureStats | None]:
    """Generator weights, config and stats from a training checkpoint."""
    tensors, meta = checkpoint.load(path)
    if "config" not in meta:
        raise checkpoint.CheckpointError(f"{path}: no config echo in checkpoint")
    cfg = config_from_dict(meta["config"])
    g = Generator(cfg.generator, seed=cfg.seed)
    try:
        g.load_state_dict({n: tensors[f"gen/{n}"] for n, _ in g.named_parameters()})
    except KeyError as exc:
        raise checkpoint.CheckpointError(f"{path}: checkpoint/config mismatch ({exc})") from exc
    stats = FeatureStats(tensors["stats/mean"], tensors["stats/std"]) if "stats/mean" in tensors else None
    return g, cfg, stats


# ------------------------------------------------------------------ step

def _check_finite(metrics: dict) -> None:
    bad = [k for k, v in metrics.items() if isinstance(v, float) and not math.isfinite(v)]
    if bad:
        raise NumericError(f"non-finite loss terms {bad} at step {metrics.get('step')}")


def _set_frozen(model: Module, frozen: bool) -> None:
    model.requires_grad_(not frozen)


def train_step(state: TrainState, batch: Batch) -> dict:
    """One generator update, preceded by a discriminator update once unfrozen."""
    cfg = state.cfg
    step = state.step
    lr_g, lr_d = state.lr()
    frozen = state.frozen()
    bsz, t = batch.x.shape
    g, d = state.generator, state.discriminator

    fake = T.reshape(g(batch.z, batch.mel), (bsz, t))
    terms = multi_res_stft_terms(batch.x, fake, cfg.multi_res)
    l_aux = mean_of_terms(terms)
    real_in = T.Tensor(batch.x[:, None, :])
    fake_in = T.Tensor(fake.data[:, None, :])

    if frozen:
        with T.no_grad():
            l_d = loss_discriminator(d(real_in), d(fake_in))
            l_adv = adv_loss_generator(d(fake_in))
        lam = 0.0
        loss_g = l_aux
    else:
        l_d = loss_discriminator(d(real_in), d(fake_in))
        d.zero_grad()
        l_d.backward()
        state.opt_d.step(lr_d)
        _set_frozen(d, True)
        try:
            l_adv = adv_loss_generator(d(T.reshape(fake, (bsz, 1, t))))
        finally:
            _set_frozen(d, False)
        lam = cfg.lambda_adv
        loss_g = loss_generator_total(l_aux, l_adv, cfg.weights)

    metrics = {
        "step": step, "phase": "frozen" if frozen else "joint",
        "lr_g": lr_g, "lr_d": lr_d, "lambda_adv": lam,
        "l_g": loss_g.item(), "l_aux": l_aux.item(), "l_adv": l_adv.item(), "l_d": l_d.item(),
    }
    for i, (sc, mag) in enumerate(terms):
        metrics[f"sc_{i}"] = sc.item()
        metrics[f"mag_{i}"] = mag.item()
    _check_finite(metrics)

    g.zero_grad()
    loss_g.backward()
    state.opt_g.step(lr_g)
    state.step += 1
    return metrics


# ------------------------------------------------------------------ metrics

def format_record(record: dict) -> str:
    """``key=value`` pairs separated by spaces; floats use ``repr`` so they round-trip."""
    return " ".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in record.items())


def parse_record(line: str) -> dict:
    out = {}
    for pair in line.split():
        key, value = pair.split("=", 1)
        try:
            out[key] = int(value)
        except ValueError:
            try:
                out[key] = float(value)
            except ValueError:
                out[key] = value
    return out


def read_metrics(path) -> list[dict]:
    return [parse_record(line) for line in Path(path).read_text().splitlines() if line.strip()]


# ------------------------------------------------------------------ validation

def validation_loss(generator: Generator, corpus: Sequence[Utterance], cfg: TrainConfig,
                    seed: int = 1234) -> list[float]:
    """Multi-resolution STFT loss of whole-clip analysis-synthesis, one value per clip."""
    from .synthbench import evaluate

    rows, _ = evaluate(generator, corpus, cfg, seed)
    return [r["l_aux"] for r in rows]


# ------------------------------------------------------------------ loop

def checkpoint_path(directory, step: int) -> Path:
    return Path(directory) / f"ckpt_{step:08d}.pwg"


def latest_checkpoint(directory) -> Path | None:
    found = sorted(Path(directory).glob("ckpt_*.pwg"))
    return found[-1] if found else None


def _truncate_records(path: Path, keep_below: int) -> None:
    if not path.exists():
        return
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    kept = [ln for ln in lines if parse_record(ln)["step"] < keep_below]
    path.write_text("".join(ln + "\n" for ln in kept))


class ResumeMismatchError(checkpoint.CheckpointError):
    """Resuming with a config that would change the training trajectory."""


RUN_LENGTH_KEYS = frozenset({"total_steps", "checkpoint_interval", "eval_interval"})


def _resume_config(saved: TrainConfig, requested: TrainConfig) -> TrainConfig:
    """Saved config with the requested run length; anything else must match."""
    a, b = saved.to_dict(), requested.to_dict()
    clash = sorted(k for k in a if k not in RUN_LENGTH_KEYS and a[k] != b[k])
    if clash:
        raise ResumeMismatchError(
            "checkpoint/config mismatch on resume: " + ", ".join(f"{k}={a[k]!r} vs {b[k]!r}" for k in clash))
    return saved.replace(**{k: b[k] for k in RUN_LENGTH_KEYS})


def run_training(corpus: Sequence[Utterance], cfg: TrainConfig, checkpoint_dir,
                 stats: FeatureStats | None = None, valid: Sequence[Utterance] = (),
                 resume=None, stop_at: int | None = None,
                 on_step: Callable[[dict], None] | None = None) -> TrainState:
    """Train until ``cfg.total_steps`` (or ``stop_at``), logging every step.

    ``metrics.txt`` gets one record per step; ``validation.txt`` one record per
    evaluation (including step 0 when ``eval_interval`` is set). Checkpoints are
    written every ``checkpoint_interval`` steps and at the end. A resumed run
    keeps the checkpoint's config; only the run-length keys may differ in ``cfg``.
    """
    ckdir = Path(checkpoint_dir)
    ckdir.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        state = TrainState.load(resume)
        state.cfg = _resume_config(state.cfg, cfg)
    else:
        state = TrainState.create(cfg, stats)
    cfg = state.cfg
    metrics_path = ckdir / "metrics.txt"
    valid_path = ckdir / "validation.txt"
    _truncate_records(metrics_path, state.step)
    _truncate_records(valid_path, state.step + (1 if resume is not None else 0))
    cfg.save(ckdir / "config.txt")
    end = cfg.total_steps if stop_at is None else min(stop_at, cfg.total_steps)

    def validate():
        losses = validation_loss(state.generator, valid, cfg)
        rec = {"step": state.step, "val_aux": float(np.mean(losses)), "val_std": float(np.std(losses))}
        with open(valid_path, "a") as fh:
            fh.write(format_record(rec) + "\n")
        log.info("validation %s", format_record(rec))

    if valid and cfg.eval_interval and state.step == 0:
        validate()
    with open(metrics_path, "a") as mfh:
        while state.step < end:
            batch = make_batch(corpus, cfg, state.rng)
            try:
                rec = train_step(state, batch)
            except NumericError as exc:
                (ckdir / "diagnostic.txt").write_text(f"step={state.step} error={exc}\n")
                raise
            mfh.write(format_record(rec) + "\n")
            mfh.flush()
            if on_step is not None:
                on_step(rec)
            if valid and cfg.eval_interval and state.step % cfg.eval_interval == 0:
                validate()
            if state.step % cfg.checkpoint_interval == 0 or state.step == end:
                state.save(checkpoint_path(ckdir, state.step))
    return state

"""STFT reconstruction losses and least-squares adversarial objectives.

Signals are ``[T]`` or ``[B, T]``; expectations over the minibatch are plain
means over the leading axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .dsp import MAG_EPS, StftConfig, stft_magnitude
from .tensor import Tensor

TABLE1_RESOLUTIONS = (
    StftConfig(1024, 600, 120),
    StftConfig(2048, 1200, 240),
    StftConfig(512, 240, 50),
)


class DegenerateReferenceError(ValueError):
    """Reference signal has (numerically) no spectral energy."""


@dataclass(frozen=True)
class MultiResConfig:
    resolutions: tuple[StftConfig, ...] = TABLE1_RESOLUTIONS

    def __post_init__(self):
        if len(self.resolutions) < 1:
            raise ValueError("need at least one STFT resolution")

    @property
    def max_window(self) -> int:
        return max(c.win_size for c in self.resolutions)

    def __str__(self) -> str:
        return ",".join(str(c) for c in self.resolutions)

    @classmethod
    def parse(cls, text: str) -> "MultiResConfig":
        return cls(tuple(StftConfig.parse(p) for p in text.split(",") if p.strip()))


@dataclass(frozen=True)
class LossWeights:
    lambda_adv: float = 4.0

    def __post_init__(self):
        if self.lambda_adv < 0:
            raise ValueError("lambda_adv must be >= 0")


def _as_signal(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(getattr(x, "samples", x), dtype=np.float64))


def _reference_magnitude(x, cfg: StftConfig) -> np.ndarray:
    with T.no_grad():
        mag = stft_magnitude(_as_signal(x), cfg).data
    return mag


def _check_reference(mag: np.ndarray) -> None:
    # energy above the magnitude floor, per clip
    energy = (mag * mag - MAG_EPS).reshape(mag.shape[:-2] + (-1,)).sum(axis=-1)
    if np.any(energy < 1e-20):
        raise DegenerateReferenceError("reference STFT has ~zero energy (silent target)")


def _per_clip_mean(v: Tensor) -> Tensor:
    return T.mean(v) if v.ndim > 0 else v


def spectral_convergence(x, x_hat, cfg: StftConfig, *, _mags=None) -> Tensor:
    """``|| |X| - |X_hat| ||_F / || |X| ||_F`` averaged over clips."""
    mag_x, mag_hat = _mags if _mags is not None else (_reference_magnitude(x, cfg),
                                                      stft_magnitude(_as_signal(x_hat), cfg))
    _check_reference(mag_x)
    ref = Tensor(mag_x)
    num = T.frobenius_norm(mag_hat - ref, axis=(-2, -1))
    den = np.sqrt((mag_x * mag_x).sum(axis=(-2, -1)))
    return _per_clip_mean(num / Tensor(den))


def log_stft_magnitude(x, x_hat, cfg: StftConfig, *, _mags=None) -> Tensor:
    """``(1/N) || log|X| - log|X_hat| ||_1`` with N the number of magnitude cells."""
    mag_x, mag_hat = _mags if _mags is not None else (_reference_magnitude(x, cfg),
                                                      stft_magnitude(_as_signal(x_hat), cfg))
    diff = T.log(mag_hat) - Tensor(np.log(mag_x))
    return T.mean(T.abs(diff))


def stft_loss_terms(x, x_hat, cfg: StftConfig) -> tuple[Tensor, Tensor]:
    """(spectral convergence, log magnitude) sharing one STFT of each signal."""
    mags = (_reference_magnitude(x, cfg), stft_magnitude(_as_signal(x_hat), cfg))
    return spectral_convergence(x, x_hat, cfg, _mags=mags), log_stft_magnitude(x, x_hat, cfg, _mags=mags)


def stft_loss(x, x_hat, cfg: StftConfig) -> Tensor:
    sc, mag = stft_loss_terms(x, x_hat, cfg)
    return sc + mag


def multi_res_stft_terms(x, x_hat, mrc: MultiResConfig = MultiResConfig()) -> list[tuple[Tensor, Tensor]]:
    length = _as_signal(x_hat).shape[-1]
    if length < mrc.max_window:
        raise ValueError(f"clip of {length} samples is shorter than the largest window {mrc.max_window}")
    return [stft_loss_terms(x, x_hat, cfg) for cfg in mrc.resolutions]


def mean_of_terms(terms: list[tuple[Tensor, Tensor]]) -> Tensor:
    total = None
    for sc, mag in terms:
        total = sc + mag if total is None else total + sc + mag
    return T.scale(total, 1.0 / len(terms))


def multi_res_stft_loss(x, x_hat, mrc: MultiResConfig = MultiResConfig()) -> Tensor:
    """Mean of the single-resolution STFT losses over ``mrc.resolutions``."""
    return mean_of_terms(multi_res_stft_terms(x, x_hat, mrc))


def adv_loss_generator(d_fake: Tensor) -> Tensor:
    """Least-squares generator loss: mean over steps (and clips) of ``(1 - D(G(z)))^2``."""
    return T.mean(T.square(T.add_scalar(T.neg(d_fake), 1.0)))


def loss_discriminator(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """``mean (1 - D(x))^2 + mean D(G(z))^2``."""
    real = T.mean(T.square(T.add_scalar(T.neg(d_real), 1.0)))
    fake = T.mean(T.square(d_fake))
    return real + fake


def loss_generator_total(l_aux: Tensor, l_adv: Tensor, w: LossWeights = LossWeights()) -> Tensor:
    return l_aux + T.scale(l_adv, w.lambda_adv)


__all__ = [
    "TABLE1_RESOLUTIONS", "MultiResConfig", "LossWeights", "DegenerateReferenceError",
    "spectral_convergence", "log_stft_magnitude", "stft_loss", "stft_loss_terms",
    "multi_res_stft_loss", "multi_res_stft_terms", "mean_of_terms",
    "adv_loss_generator", "loss_discriminator", "loss_generator_total",
]

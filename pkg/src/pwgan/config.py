"""Flat run configuration with plain-text ``key=value`` persistence.

One key per line, ``#`` starts a comment. Every key is also a CLI flag
(``--total-steps=10`` sets ``total_steps``).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .dsp import MelConfig
from .losses import LossWeights, MultiResConfig
from .models import DiscriminatorConfig, GeneratorConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-6

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    # generator
    gen_layers: int = 30
    gen_cycles: int = 3
    gen_channels: int = 64
    gen_skip_channels: int = 64
    gen_kernel: int = 3
    upsample_scales: str = "5,5,4,3"
    # discriminator; channels / kernel follow the generator unless set
    disc_layers: int = 10
    disc_channels: int = 0
    disc_kernel: int = 0
    leaky_alpha: float = 0.2
    # features
    n_mels: int = 80
    f_min: float = 70.0
    f_max: float = 8000.0
    mel_win: int = 1200
    hop: int = 300
    mel_fft: int = 2048
    # losses
    stft_resolutions: str = "1024:600:120,2048:1200:240,512:240:50"
    lambda_adv: float = 4.0
    # optimiser and schedule
    lr_g: float = 1e-4
    lr_d: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-6
    decay_half_every: int = 200_000
    total_steps: int = 400_000
    d_frozen_steps: int = 100_000
    batch_size: int = 8
    clip_samples: int = 24000
    seed: int = 0
    # bookkeeping
    checkpoint_interval: int = 10_000
    eval_interval: int = 0

    def __post_init__(self):
        if self.d_frozen_steps > self.total_steps:
            raise ConfigError("d_frozen_steps must not exceed total_steps")
        if self.clip_samples % self.hop:
            raise ConfigError("clip_samples must be a multiple of hop")
        if self.decay_half_every < 1 or self.batch_size < 1 or self.total_steps < 0:
            raise ConfigError("decay_half_every and batch_size must be >= 1")
        if self.clip_samples < self.multi_res.max_window:
            raise ConfigError("clip_samples shorter than the largest STFT window")
        self.generator  # noqa: B018  validate eagerly
        self.discriminator  # noqa: B018

    # ----------------------------------------------------------- sub-configs
    @property
    def generator(self) -> GeneratorConfig:
        return GeneratorConfig(
            layers=self.gen_layers, cycles=self.gen_cycles,
            residual_channels=self.gen_channels, skip_channels=self.gen_skip_channels,
            kernel=self.gen_kernel, aux_channels=self.n_mels, hop=self.hop,
            upsample_scales=tuple(int(v) for v in self.upsample_scales.split(",")),
        )

    @property
    def discriminator(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(
            layers=self.disc_layers,
            channels=self.disc_channels or self.gen_channels,
            kernel=self.disc_kernel or self.gen_kernel,
            leaky_alpha=self.leaky_alpha,
        )

    @property
    def mel(self) -> MelConfig:
        return MelConfig(self.n_mels, self.f_min, self.f_max, self.mel_win, self.hop, self.mel_fft)

    @property
    def multi_res(self) -> MultiResConfig:
        return MultiResConfig.parse(self.stft_resolutions)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_adv)

    @property
    def opt_g(self) -> OptimizerConfig:
        return OptimizerConfig(self.lr_g, self.beta1, self.beta2, self.eps)

    @property
    def opt_d(self) -> OptimizerConfig:
        return OptimizerConfig(self.lr_d, self.beta1, self.beta2, self.eps)

    @property
    def frames_per_clip(self) -> int:
        return self.clip_samples // self.hop

    # ------------------------------------------------------------ text I/O
    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)!r}\n".replace("'", "") for f in fields(self))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


PRESETS: dict[str, TrainConfig] = {
    "full": TrainConfig(),
    "desk": TrainConfig(
        gen_layers=10, gen_cycles=1, gen_channels=16, gen_skip_channels=16,
        total_steps=5000, d_frozen_steps=1250, decay_half_every=2500,
        batch_size=4, clip_samples=4800, checkpoint_interval=1250,
        eval_interval=250,
    ),
}

_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind in (int, "int"):
            return int(raw.replace("_", ""))
        if kind in (float, "float"):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def parse_overrides(pairs: dict[str, str]) -> dict:
    out = {}
    for key, raw in pairs.items():
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key: {key}")
        out[key] = _coerce(key, raw)
    return out


def parse_text(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def load_config(path=None, overrides: dict[str, str] | None = None,
                base: TrainConfig | str = "full") -> TrainConfig:
    """Preset, then file values, then overrides (highest precedence)."""
    cfg = PRESETS[base] if isinstance(base, str) else base
    merged: dict[str, str] = {}
    if path is not None:
        merged.update(parse_text(Path(path).read_text()))
    merged.update(overrides or {})
    try:
        return cfg.replace(**parse_overrides(merged))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def config_from_dict(d: dict) -> TrainConfig:
    return TrainConfig(**{k: d[k] for k in _FIELD_TYPES if k in d})

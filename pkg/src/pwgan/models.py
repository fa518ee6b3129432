"""Non-autoregressive WaveNet generator, per-sample discriminator and the mel upsampler."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class GeneratorConfig:
    layers: int = 30
    cycles: int = 3
    residual_channels: int = 64
    skip_channels: int = 64
    kernel: int = 3
    aux_channels: int = 80
    hop: int = 300
    upsample_scales: tuple[int, ...] = (5, 5, 4, 3)

    def __post_init__(self):
        if self.layers % self.cycles:
            raise ValueError("layers must be divisible by cycles")
        if self.kernel % 2 == 0:
            raise ValueError("kernel must be odd")
        if math.prod(self.upsample_scales) != self.hop:
            raise ValueError(f"upsample scales {self.upsample_scales} do not multiply to hop={self.hop}")

    @property
    def layers_per_cycle(self) -> int:
        return self.layers // self.cycles

    def dilation(self, i: int) -> int:
        return 2 ** (i % self.layers_per_cycle)

    @property
    def receptive_half_width(self) -> int:
        """Samples of noise on each side that can reach one output sample."""
        return sum(self.dilation(i) for i in range(self.layers)) * (self.kernel - 1) // 2


@dataclass(frozen=True)
class DiscriminatorConfig:
    layers: int = 10
    channels: int = 64
    kernel: int = 3
    leaky_alpha: float = 0.2
    dilations: tuple[int, ...] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.dilations is None:
            # boundary layers undilated, middle layers 1, 2, ..., layers - 2
            object.__setattr__(self, "dilations", (1,) + tuple(range(1, self.layers - 1)) + (1,))
        if len(self.dilations) != self.layers:
            raise ValueError("need one dilation per layer")
        if self.layers < 2:
            raise ValueError("discriminator needs at least two layers")
        if self.kernel % 2 == 0:
            raise ValueError("kernel must be odd")

    @property
    def receptive_half_width(self) -> int:
        return sum(self.dilations) * (self.kernel - 1) // 2


class Module:
    """Parameter container: attributes that are Tensors, Modules or lists of Modules."""

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield from _all_tensors(self)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def requires_grad_(self, flag: bool) -> None:
        for _, p in _all_tensors(self):
            p.requires_grad = flag


def _all_tensors(m: Module, prefix: str = ""):
    for name, value in vars(m).items():
        if isinstance(value, Tensor):
            yield prefix + name, value
        elif isinstance(value, Module):
            yield from _all_tensors(value, f"{prefix}{name}.")
        elif isinstance(value, list):
            for i, item in enumerate(value):
                if isinstance(item, Module):
                    yield from _all_tensors(item, f"{prefix}{name}.{i}.")


def param_count(model: Module) -> int:
    return sum(p.size for p in model.parameters())


class Conv1d(Module):
    """1-D conv with optional weight normalisation (direction ``v``, magnitude ``g``)."""

    def __init__(self, c_in: int, c_out: int, kernel: int = 1, dilation: int = 1,
                 bias: bool = True, weight_norm: bool = True, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        v = rng.normal(0.0, 1.0 / math.sqrt(c_in * kernel), size=(c_out, c_in, kernel))
        self.dilation = dilation
        self.weight_norm = weight_norm
        if weight_norm:
            self.v = Tensor(v, requires_grad=True)
            # g = ||v|| so the initial effective weight equals v
            self.g = Tensor(np.sqrt((v * v).sum(axis=(1, 2))), requires_grad=True)
        else:
            self.weight = Tensor(v, requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True) if bias else None

    def effective_weight(self) -> Tensor:
        return T.weight_norm(self.v, self.g) if self.weight_norm else self.weight

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.effective_weight(), self.bias, dilation=self.dilation)


class Conv2d(Module):
    """Single-channel weight-normalised 2-D conv, initialised to a box average."""

    def __init__(self, kernel: tuple[int, int]):
        kh, kw = kernel
        v = np.full((1, 1, kh, kw), 1.0 / (kh * kw))
        self.v = Tensor(v, requires_grad=True)
        self.g = Tensor(np.sqrt((v * v).sum(axis=(1, 2, 3))), requires_grad=True)
        self.bias = Tensor(np.zeros(1), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, T.weight_norm(self.v, self.g), self.bias)

    def upsample(self, x: Tensor, r: int) -> Tensor:
        """Same as ``self(repeat(x, r))``, evaluated in polyphase form."""
        return T.upsample_conv2d(x, T.weight_norm(self.v, self.g), self.bias, r)


class Upsampler(Module):
    """Nearest-neighbour repeat followed by a (band, time) 2-D conv, once per scale."""

    def __init__(self, scales: tuple[int, ...]):
        self.scales = tuple(scales)
        self.convs = [Conv2d((3, 2 * r + 1)) for r in self.scales]

    def __call__(self, mel: Tensor) -> Tensor:
        batched = mel.ndim == 3
        c = T.reshape(mel, (mel.shape[0] if batched else 1, 1) + mel.shape[-2:])
        for r, conv in zip(self.scales, self.convs):
            c = conv.upsample(c, r)
        return T.reshape(c, mel.shape[:-1] + (c.shape[-1],))


class ResidualBlock(Module):
    def __init__(self, channels: int, skip_channels: int, aux_channels: int, kernel: int,
                 dilation: int, rng: np.random.Generator):
        self.channels = channels
        self.conv = Conv1d(channels, 2 * channels, kernel, dilation, rng=rng)
        self.aux = Conv1d(aux_channels, 2 * channels, 1, rng=rng)
        self.res = Conv1d(channels, channels, 1, rng=rng)
        self.skip = Conv1d(channels, skip_channels, 1, rng=rng)

    def __call__(self, x: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        h = self.conv(x) + self.aux(c)
        a, b = T.split(h, 2, axis=-2)
        z = T.tanh(a) * T.sigmoid(b)
        out = T.scale(self.res(z) + x, math.sqrt(0.5))
        return out, self.skip(z)


class Generator(Module):
    """Noise + mel -> waveform in one parallel pass."""

    def __init__(self, cfg: GeneratorConfig = GeneratorConfig(), seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.upsampler = Upsampler(cfg.upsample_scales)
        self.first = Conv1d(1, cfg.residual_channels, 1, rng=rng)
        self.blocks = [
            ResidualBlock(cfg.residual_channels, cfg.skip_channels, cfg.aux_channels,
                          cfg.kernel, cfg.dilation(i), rng)
            for i in range(cfg.layers)
        ]
        self.head1 = Conv1d(cfg.skip_channels, cfg.skip_channels, 1, rng=rng)
        self.head2 = Conv1d(cfg.skip_channels, 1, 1, rng=rng)

    def __call__(self, z, mel) -> Tensor:
        """``z``: ``[1, T]`` or ``[B, 1, T]``; ``mel``: ``[80, F]`` or ``[B, 80, F]``; T == F * hop."""
        z = z if isinstance(z, Tensor) else Tensor(z)
        mel = mel if isinstance(mel, Tensor) else Tensor(mel)
        if mel.shape[-2] != self.cfg.aux_channels:
            raise ValueError(f"mel has {mel.shape[-2]} bands, generator expects {self.cfg.aux_channels}")
        if z.shape[-1] != mel.shape[-1] * self.cfg.hop:
            raise ValueError(f"noise length {z.shape[-1]} != frames {mel.shape[-1]} x hop {self.cfg.hop}")
        c = self.upsampler(mel)
        x = self.first(z)
        skips = None
        for block in self.blocks:
            x, s = block(x, c)
            skips = s if skips is None else skips + s
        skips = T.scale(skips, math.sqrt(1.0 / len(self.blocks)))
        h = self.head1(T.relu(skips))
        return T.tanh(self.head2(T.relu(h)))

    def param_count(self, include_upsampler: bool = True) -> int:
        total = param_count(self)
        return total if include_upsampler else total - param_count(self.upsampler)


class Discriminator(Module):
    """Stack of dilated non-causal convs giving one score per time step (no conditioning)."""

    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig(), seed: int = 1):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        chans = [1] + [cfg.channels] * (cfg.layers - 1) + [1]
        self.convs = [
            Conv1d(chans[i], chans[i + 1], cfg.kernel, cfg.dilations[i], rng=rng)
            for i in range(cfg.layers)
        ]

    def __call__(self, x) -> Tensor:
        """``x``: ``[1, T]`` or ``[B, 1, T]`` -> scores ``[T]`` or ``[B, T]``."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.shape[-1] < 1:
            raise ValueError("discriminator input is empty")
        h = x
        for i, conv in enumerate(self.convs):
            h = conv(h)
            if i < len(self.convs) - 1:
                h = T.leaky_relu(h, self.cfg.leaky_alpha)
        return T.reshape(h, h.shape[:-2] + h.shape[-1:])

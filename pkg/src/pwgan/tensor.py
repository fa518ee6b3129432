"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op records a node holding references to its parents and a closure that
maps the output gradient to parent gradients. ``backward`` walks the recorded
graph once in reverse topological order.

Only scalar broadcasting is supported: binary ops need identical shapes unless
one side is a Python number or a zero-dimensional tensor.
"""

from __future__ import annotations

import builtins
import contextlib
import math
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "GraphError", "no_grad", "is_grad_enabled", "tensor",
    "add", "sub", "mul", "div", "scale", "add_scalar", "neg",
    "tanh", "sigmoid", "relu", "leaky_relu", "log", "sqrt", "square", "abs",
    "sum", "mean", "frobenius_norm", "l1_norm",
    "reshape", "split", "repeat", "concat",
    "conv1d", "conv2d", "upsample_conv2d", "fft", "real_fft", "rdft", "frame", "weight_norm",
]


class GraphError(RuntimeError):
    """Misuse of the differentiation graph (non-scalar loss, reused graph, ...)."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = ""
        self._consumed = False

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        op = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{op})"

    def __len__(self) -> int:
        return len(self.data)

    # --------------------------------------------------------------- operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    # ---------------------------------------------------------------- backward
    def backward(self) -> None:
        """Populate ``grad`` on every leaf that requires it.

        Leaf gradients are summed into existing buffers; call ``zero_grad``
        between steps.
        """
        if self.data.size != 1 or self.data.ndim > 1:
            raise GraphError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise GraphError("loss is detached from any tensor that requires grad")
        if self._consumed:
            raise GraphError("backward() already ran on this graph")

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if node._backward is None:
                if g is not None:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if node._consumed:
                raise GraphError("backward() already ran through this graph")
            node._consumed = True
            if g is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            # drop closures so intermediates can be freed
            node._backward = _spent
            node._parents = ()


def _spent(_g):
    raise GraphError("backward() already ran through this graph")


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        out._op = op
    return out


# ---------------------------------------------------------------- pointwise

def _check_binary(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape} (only scalar broadcasting)")


def _unbroadcast(g: np.ndarray, t: Tensor) -> np.ndarray:
    if t.data.ndim == 0 and g.ndim != 0:
        return np.asarray(g.sum())
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b)

    def bw(g):
        return _unbroadcast(g, a), _unbroadcast(g, b)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b)

    def bw(g):
        return _unbroadcast(g, a), _unbroadcast(-g, b)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a), _unbroadcast(g * a.data, b)

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b)
    out = a.data / b.data

    def bw(g):
        return _unbroadcast(g / b.data, a), _unbroadcast(-g * out / b.data, b)

    return _make(out, (a, b), bw, "div")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(x.data * c, (x,), lambda g: (g * c,), "scale")


def add_scalar(x: Tensor, c: float) -> Tensor:
    return _make(x.data + float(c), (x,), lambda g: (g,), "add_scalar")


def neg(x: Tensor) -> Tensor:
    return _make(-x.data, (x,), lambda g: (-g,), "neg")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    out = np.tanh(0.5 * v)
    out += 1.0
    out *= 0.5
    return out


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    # maximum (unlike where) lets a NaN through so non-finite values stay visible
    return _make(np.maximum(x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    mask = x.data >= 0
    slope = np.where(mask, 1.0, alpha)
    return _make(x.data * slope, (x,), lambda g: (g * slope,), "leaky_relu")


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise ValueError("log of non-positive input; apply a floor first")
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x: Tensor) -> Tensor:
    if np.any(x.data < 0):
        raise ValueError("sqrt of negative input")
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g / (2.0 * out),), "sqrt")


def square(x: Tensor) -> Tensor:
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def abs(x: Tensor) -> Tensor:  # noqa: A001
    sign = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * sign,), "abs")


# --------------------------------------------------------------- reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001
    if x.size == 0:
        raise ValueError("reduction over an empty tensor")
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes)
    kept = tuple(1 if i in axes else n for i, n in enumerate(x.shape))

    def bw(g):
        return (np.broadcast_to(np.reshape(g, kept), x.shape).copy(),)

    return _make(np.asarray(out), (x,), bw, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    count = math.prod(x.shape[a] for a in axes)
    return scale(sum(x, axis), 1.0 / count)


def frobenius_norm(x: Tensor, axis=None) -> Tensor:
    """sqrt of the sum of squares, over ``axis`` (all axes by default)."""
    return sqrt(sum(square(x), axis))


def l1_norm(x: Tensor, axis=None) -> Tensor:
    return sum(abs(x), axis)


# ---------------------------------------------------------------- structure

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def split(x: Tensor, sections: int, axis: int = 0) -> list[Tensor]:
    """Split into ``sections`` equal parts along ``axis``."""
    axis = axis % x.ndim
    n = x.shape[axis]
    if n % sections:
        raise ValueError(f"axis of length {n} does not split into {sections} parts")
    step = n // sections
    outs = []
    for i in range(sections):
        idx = [slice(None)] * x.ndim
        idx[axis] = slice(i * step, (i + 1) * step)
        idx = tuple(idx)

        def bw(g, idx=idx):
            full = np.zeros_like(x.data)
            full[idx] = g
            return (full,)

        outs.append(_make(x.data[idx], (x,), bw, "split"))
    return outs


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [_as_tensor(t) for t in xs]
    axis = axis % xs[0].ndim
    bounds = np.cumsum([0] + [t.shape[axis] for t in xs])

    def bw(g):
        out = []
        for i in range(len(xs)):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(bounds[i], bounds[i + 1])
            out.append(g[tuple(idx)])
        return out

    return _make(np.concatenate([t.data for t in xs], axis=axis), tuple(xs), bw, "concat")


def repeat(x: Tensor, r: int, axis: int = -1) -> Tensor:
    """Nearest-neighbour upsampling: every element along ``axis`` repeated ``r`` times."""
    axis = axis % x.ndim
    n = x.shape[axis]

    def bw(g):
        shape = x.shape[:axis] + (n, r) + x.shape[axis + 1:]
        return (g.reshape(shape).sum(axis=axis + 1),)

    return _make(np.repeat(x.data, r, axis=axis), (x,), bw, "repeat")


# ------------------------------------------------------------- convolution

def _batched(x: Tensor, core_ndim: int) -> tuple[np.ndarray, bool]:
    if x.ndim == core_ndim:
        return x.data[None], True
    if x.ndim == core_ndim + 1:
        return x.data, False
    raise ValueError(f"expected {core_ndim}-D or batched {core_ndim + 1}-D input, got {x.shape}")


_GEMM_COLS = 16


def _gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` with b's column count zero-padded to a multiple of 16.

    OpenBLAS routes leftover columns through edge kernels whose summation order
    differs from the main tiles, so the same column can come out one ulp apart
    depending on where it sits. Padding keeps every column on the main path,
    which makes outputs independent of how the time axis was sliced.
    """
    n = b.shape[-1]
    extra = -n % _GEMM_COLS
    if not extra:
        return np.matmul(a, b)
    widths = [(0, 0)] * (b.ndim - 1) + [(0, extra)]
    return np.matmul(a, np.pad(b, widths))[..., :n]


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           dilation: int = 1, padding: str = "same") -> Tensor:
    """Dilated 1-D convolution (cross-correlation) over ``[C_in, T]`` or ``[B, C_in, T]``.

    ``padding="same"`` pads ``dilation * (K - 1) / 2`` zeros on both sides, so
    the kernel is centred (non-causal) and T is preserved.
    """
    xb, squeeze = _batched(x, 2)
    if weight.ndim != 3:
        raise ValueError(f"weight must be [C_out, C_in, K], got {weight.shape}")
    c_out, c_in, k = weight.shape
    if xb.shape[1] != c_in:
        raise ValueError(f"input has {xb.shape[1]} channels, weight expects {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ValueError(f"bias must have shape ({c_out},), got {bias.shape}")
    if dilation < 1:
        raise ValueError("dilation must be >= 1")
    t_in = xb.shape[2]
    if padding == "same":
        if k % 2 == 0:
            raise ValueError("same padding needs an odd kernel size")
        pad = dilation * (k - 1) // 2
        xp = np.pad(xb, ((0, 0), (0, 0), (pad, pad))) if pad else xb
        t_out = t_in
    elif padding == "none":
        pad = 0
        xp = xb
        t_out = t_in - dilation * (k - 1)
        if t_out < 1:
            raise ValueError("input shorter than the dilated kernel")
    else:
        raise ValueError(f"unknown padding {padding!r}")

    # im2col: rows ordered (tap, channel) so one GEMM per batch item does the work
    w2 = weight.data.transpose(0, 2, 1).reshape(c_out, k * c_in)
    if k == 1:
        cols = np.ascontiguousarray(xp[:, :, :t_out])
    else:
        cols = np.concatenate([xp[:, :, j * dilation:j * dilation + t_out] for j in range(k)], axis=1)
    out = _gemm(w2, cols)
    if bias is not None:
        out += bias.data[None, :, None]

    def bw(g):
        if squeeze:
            g = g[None]
        gx = gw = gb = None
        if x.requires_grad:
            gcols = np.matmul(w2.T, g)
            if k == 1 and not pad:
                gx = gcols
            else:
                gxp = np.zeros(xp.shape)
                for j in range(k):
                    s = j * dilation
                    gxp[:, :, s:s + t_out] += gcols[:, j * c_in:(j + 1) * c_in]
                gx = gxp[:, :, pad:pad + t_in] if pad else gxp
            gx = gx[0] if squeeze else gx
        if weight.requires_grad:
            gw2 = g[0] @ cols[0].T
            for b in range(1, g.shape[0]):
                gw2 += g[b] @ cols[b].T
            gw = gw2.reshape(c_out, k, c_in).transpose(0, 2, 1)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out[0] if squeeze else out, parents, bw, "conv1d")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded 2-D convolution over ``[C_in, H, W]`` or ``[B, C_in, H, W]``."""
    xb, squeeze = _batched(x, 3)
    if weight.ndim != 4:
        raise ValueError(f"weight must be [C_out, C_in, Kh, Kw], got {weight.shape}")
    c_out, c_in, kh, kw = weight.shape
    if xb.shape[1] != c_in:
        raise ValueError(f"input has {xb.shape[1]} channels, weight expects {c_in}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("same padding needs odd kernel sizes")
    if bias is not None and bias.shape != (c_out,):
        raise ValueError(f"bias must have shape ({c_out},), got {bias.shape}")
    _, _, h, wd = xb.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(xb, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    w = weight.data

    bsz = xb.shape[0]
    scalar = c_in == 1 and c_out == 1

    def tap(arr, a, b):
        return arr[:, :, a:a + h, b:b + wd]

    out = np.zeros((bsz, c_out, h, wd))
    for a in range(kh):
        for b in range(kw):
            if scalar:
                out += w[0, 0, a, b] * tap(xp, a, b)
            else:
                cols = np.ascontiguousarray(tap(xp, a, b)).reshape(bsz, c_in, h * wd)
                out += _gemm(w[:, :, a, b], cols).reshape(bsz, c_out, h, wd)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def bw(g):
        if squeeze:
            g = g[None]
        gx = gw = gb = None
        g_flat = g.reshape(bsz, c_out, h * wd)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for a in range(kh):
                for b in range(kw):
                    if scalar:
                        tap(gxp, a, b)[...] += w[0, 0, a, b] * g
                    else:
                        tap(gxp, a, b)[...] += np.matmul(w[:, :, a, b].T, g_flat).reshape(bsz, c_in, h, wd)
            gx = gxp[:, :, ph:ph + h, pw:pw + wd]
            gx = gx[0] if squeeze else gx
        if weight.requires_grad:
            gw = np.empty_like(w)
            for a in range(kh):
                for b in range(kw):
                    cols = np.ascontiguousarray(tap(xp, a, b)).reshape(bsz, c_in, h * wd)
                    gw[:, :, a, b] = builtins.sum(g_flat[i] @ cols[i].T for i in range(bsz))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out[0] if squeeze else out, parents, bw, "conv2d")


def upsample_conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, r: int) -> Tensor:
    """``conv2d(repeat(x, r, axis=-1), weight, bias)`` for single-channel ``[B, 1, H, N]``.

    Computed in polyphase form: output phase ``p`` of frame ``n`` only sees
    input frames ``n - 1 .. n + 1``, so each phase is a ``Kh x 3`` kernel applied
    at the input rate and the whole stage is one GEMM.
    """
    xb, squeeze = _batched(x, 3)
    if xb.shape[1] != 1 or weight.shape[:2] != (1, 1):
        raise ValueError("upsample_conv2d handles single-channel input and weight")
    kh, kw = weight.shape[2:]
    if kw != 2 * r + 1 or kh % 2 == 0:
        raise ValueError(f"kernel must be (odd, {2 * r + 1}) for r={r}, got {(kh, kw)}")
    bsz, _, h, n = xb.shape
    ph = kh // 2
    # tap b of phase p lands on input frame n + (p + b - r) // r
    which = (np.arange(r)[:, None] + np.arange(kw)[None, :] - r) // r + 1  # [r, kw] in {0, 1, 2}
    select = np.stack([(which == j) for j in range(3)], axis=-1).astype(np.float64)  # [r, kw, 3]
    w = weight.data[0, 0]
    phase_kernel = np.einsum("pbj,ab->paj", select, w).reshape(r, kh * 3)

    xp = np.pad(xb[:, 0], ((0, 0), (ph, ph), (1, 1)))
    cols = np.stack([xp[:, a:a + h, j:j + n] for a in range(kh) for j in range(3)])
    cols = cols.reshape(kh * 3, -1)
    out = _gemm(phase_kernel, cols).reshape(r, bsz, h, n).transpose(1, 2, 3, 0).reshape(bsz, 1, h, n * r)
    if bias is not None:
        out += bias.data[0]

    def bw(g):
        if squeeze:
            g = g[None]
        g_ph = np.ascontiguousarray(g.reshape(bsz, h, n, r).transpose(3, 0, 1, 2)).reshape(r, -1)
        gx = gw = gb = None
        if x.requires_grad:
            gcols = (phase_kernel.T @ g_ph).reshape(kh, 3, bsz, h, n)
            gxp = np.zeros_like(xp)
            for a in range(kh):
                for j in range(3):
                    gxp[:, a:a + h, j:j + n] += gcols[a, j]
            gx = gxp[:, None, ph:ph + h, 1:1 + n]
            gx = gx[0] if squeeze else gx
        if weight.requires_grad:
            g_kernel = (g_ph @ cols.T).reshape(r, kh, 3)
            gw = np.einsum("pbj,paj->ab", select, g_kernel)[None, None]
        if bias is not None and bias.requires_grad:
            gb = np.array([g.sum()])
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out[0] if squeeze else out, parents, bw, "upsample_conv2d")


# --------------------------------------------------------------------- FFT

@lru_cache(maxsize=32)
def _fft_tables(n: int) -> tuple[np.ndarray, np.ndarray]:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    k = np.arange(n // 2)
    # twiddles from direct cos/sin evaluation, no recurrences
    tw = np.cos(2 * np.pi * k / n) - 1j * np.sin(2 * np.pi * k / n)
    return rev, tw


def fft(a: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT along the last axis.

    Forward convention ``X[k] = sum_n a[n] exp(-2 pi i k n / N)``.
    """
    n = a.shape[-1]
    if n < 1 or n & (n - 1):
        raise ValueError(f"FFT size must be a power of two, got {n}")
    rev, tw = _fft_tables(n)
    lead = a.shape[:-1]
    x = np.asarray(a, dtype=np.complex128)[..., rev]
    m = 1
    while m < n:
        # x viewed as blocks of 2m: first half even-indexed sub-FFT, second half odd
        x = x.reshape(lead + (n // (2 * m), 2, m))
        even = x[..., 0, :]
        odd = x[..., 1, :] * tw[:: n // (2 * m)][:m]
        x = np.concatenate([even + odd, even - odd], axis=-1)
        m *= 2
    return x.reshape(lead + (n,))


@lru_cache(maxsize=32)
def _real_twiddles(n: int) -> np.ndarray:
    k = np.arange(n // 2 + 1)
    return np.cos(2 * np.pi * k / n) - 1j * np.sin(2 * np.pi * k / n)


def real_fft(a: np.ndarray) -> np.ndarray:
    """Half spectrum ``X[0 .. N/2]`` of real rows via one complex FFT of size N/2."""
    n = a.shape[-1]
    if n < 2 or n & (n - 1):
        raise ValueError(f"FFT size must be a power of two, got {n}")
    half = n // 2
    y = fft(a[..., 0::2] + 1j * a[..., 1::2])
    idx = np.arange(half + 1) % half
    yk = y[..., idx]
    yc = np.conj(y[..., (-np.arange(half + 1)) % half])
    even = 0.5 * (yk + yc)
    odd = -0.5j * (yk - yc)
    return even + _real_twiddles(n) * odd


def _mirror(half_spec: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    # real and imaginary parts of the full spectrum of a real signal
    inner = half_spec[..., n // 2 - 1:0:-1]
    re = np.concatenate([half_spec.real, inner.real], axis=-1)
    im = np.concatenate([half_spec.imag, -inner.imag], axis=-1)
    return re, im


def rdft(frames: Tensor) -> tuple[Tensor, Tensor]:
    """Real DFT of each row: returns (re, im), each ``[..., N/2 + 1]``."""
    n = frames.shape[-1]
    if n < 2 or n & (n - 1):
        raise ValueError(f"rdft size must be a power of two, got {n}")
    nb = n // 2 + 1
    spec = real_fft(frames.data)
    pad = [(0, 0)] * (frames.ndim - 1) + [(0, n - nb)]

    # adjoint of bin k -> sample m is cos(2 pi k m / N) for re and -sin(...) for im,
    # i.e. the real / imaginary part of a forward DFT of the zero-padded gradient
    def bw_re(g):
        return (_mirror(real_fft(np.pad(g, pad)), n)[0],)

    def bw_im(g):
        return (_mirror(real_fft(np.pad(g, pad)), n)[1],)

    re = _make(np.ascontiguousarray(spec.real), (frames,), bw_re, "rdft_re")
    im = _make(np.ascontiguousarray(spec.imag), (frames,), bw_im, "rdft_im")
    return re, im


def frame(x: Tensor, win_size: int, hop: int, window: np.ndarray | None = None,
          fft_size: int | None = None) -> Tensor:
    """Slice ``[..., T]`` into hopped frames ``[..., F, fft_size]``.

    Frame ``f`` starts at ``f * hop``; each frame is multiplied by ``window``
    and zero-padded on the right to ``fft_size``.
    """
    t = x.shape[-1]
    if t < win_size:
        raise ValueError(f"signal of {t} samples is shorter than one window ({win_size})")
    fft_size = win_size if fft_size is None else fft_size
    if fft_size < win_size:
        raise ValueError("fft_size must be >= win_size")
    n_frames = 1 + (t - win_size) // hop
    view = np.lib.stride_tricks.sliding_window_view(x.data, win_size, axis=-1)[..., ::hop, :]
    view = view[..., :n_frames, :]
    out = np.zeros(x.shape[:-1] + (n_frames, fft_size))
    if window is None:
        out[..., :win_size] = view
    else:
        out[..., :win_size] = view * window

    def bw(g):
        gw = g[..., :win_size]
        if window is not None:
            gw = gw * window
        gx = np.zeros_like(x.data)
        for f in range(n_frames):
            s = f * hop
            gx[..., s:s + win_size] += gw[..., f, :]
        return (gx,)

    return _make(out, (x,), bw, "frame")


def weight_norm(v: Tensor, g: Tensor) -> Tensor:
    """Effective weight ``g[c] * v[c] / ||v[c]||`` (norm over all non-output axes)."""
    if g.shape != (v.shape[0],):
        raise ValueError(f"magnitude must have shape ({v.shape[0]},), got {g.shape}")
    axes = tuple(range(1, v.ndim))
    bshape = (-1,) + (1,) * (v.ndim - 1)
    norm = np.sqrt((v.data * v.data).sum(axis=axes))
    if np.any(norm <= 1e-12):
        raise ValueError("weight-norm direction with zero norm")
    nb = norm.reshape(bshape)
    gb = g.data.reshape(bshape)
    w = gb * v.data / nb

    def bw(gw):
        proj = (gw * v.data).sum(axis=axes)
        g_grad = proj / norm
        v_grad = gb / nb * gw - (gb * proj.reshape(bshape) / nb ** 3) * v.data
        return v_grad, g_grad

    return _make(w, (v, g), bw, "weight_norm")


def parameters_finite(ts: Iterable[Tensor]) -> bool:
    return all(np.isfinite(t.data).all() for t in ts)

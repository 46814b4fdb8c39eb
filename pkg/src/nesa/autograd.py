"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array (float32 for model math; tests use
float64 shadows for finite-difference checks).  Operations performed
while a :class:`Tape` is active record backward closures; ``backward``
replays them in reverse to accumulate gradients.  Without an active
tape, tensors are plain immutable values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "ShapeMismatch", "NonFiniteInput", "DegenerateBatch",
    "NoTape", "tensor", "add", "sub", "mul", "neg", "scale", "matmul",
    "sigmoid", "tanh", "relu", "concat", "slice_axis", "reshape", "transpose",
    "embedding_lookup", "softmax", "conv2d_same", "max_over_time",
    "BatchNormState", "batchnorm2d", "dropout", "cross_entropy", "sum_all",
    "backward", "zero_grads", "clip_grad_norm", "AdamState", "adam_step",
    "save_tensors", "load_tensors",
]


class ShapeMismatch(ValueError):
    """Operand shapes do not conform."""


class NonFiniteInput(ValueError):
    """An operation received NaN or infinity where it cannot."""


class DegenerateBatch(ValueError):
    """Batch statistics requested over fewer than two values."""


class NoTape(RuntimeError):
    """backward() called with no active tape."""


class Tensor:
    """Dense array plus optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data: np.ndarray, requires_grad: bool = False):
        self.data = data
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=requires_grad)


# --------------------------------------------------------------------------
# tape

_ACTIVE_TAPES: list["Tape"] = []


class Tape:
    """Append-only record of one forward pass, replayed for gradients."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPES.remove(self)

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeMismatch(f"loss must be scalar, got shape {loss.shape}")
        loss.accumulate_grad(np.ones_like(loss.data))
        for out, fn in reversed(self.nodes):
            if out.grad is not None:
                fn(out.grad)


def _tape() -> Tape | None:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def _make(out_data: np.ndarray, inputs: Sequence[Tensor],
          back: Callable[[np.ndarray], None]) -> Tensor:
    tape = _tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        tape.nodes.append((out, back))
    return out


def backward(loss: Tensor) -> None:
    """Accumulate gradients of ``loss`` onto every tensor that fed it."""
    tape = _tape()
    if tape is None:
        raise NoTape("backward() requires an active Tape")
    tape.backward(loss)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# --------------------------------------------------------------------------
# elementwise and linear algebra

def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out = a.data + b.data

    def back(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return _make(out, (a, b), back)


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out = a.data - b.data

    def back(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.data.shape))

    return _make(out, (a, b), back)


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out = a.data * b.data

    def back(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), back)


def neg(a: Tensor) -> Tensor:
    def back(g):
        if a.requires_grad:
            a.accumulate_grad(-g)

    return _make(-a.data, (a,), back)


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)

    def back(g):
        if a.requires_grad:
            a.accumulate_grad(g * c)

    return _make(a.data * c, (a,), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ShapeMismatch("matmul supports 1-D and 2-D operands")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul: {a.data.shape} @ {b.data.shape}")
    a2 = a.data if a.data.ndim == 2 else a.data[None, :]
    b2 = b.data if b.data.ndim == 2 else b.data[:, None]
    out = a2 @ b2
    if a.data.ndim == 1:
        out = out[0]
    if b.data.ndim == 1:
        out = out[..., 0]

    def back(g):
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        if a.requires_grad:
            ga = g2 @ b2.T
            a.accumulate_grad(ga[0] if a.data.ndim == 1 else ga)
        if b.requires_grad:
            gb = a2.T @ g2
            b.accumulate_grad(gb[:, 0] if b.data.ndim == 1 else gb)

    return _make(out, (a, b), back)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x)))).astype(x.dtype)

    def back(g):
        if a.requires_grad:
            a.accumulate_grad(g * out * (1.0 - out))

    return _make(out, (a,), back)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def back(g):
        if a.requires_grad:
            a.accumulate_grad(g * (1.0 - out * out))

    return _make(out, (a,), back)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)

    def back(g):
        if a.requires_grad:
            a.accumulate_grad(g * (a.data > 0))

    return _make(out, (a,), back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeMismatch("concat of zero tensors")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(idx)])

    return _make(out, tuple(tensors), back)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous sub-range along one axis."""
    if not 0 <= start <= stop <= a.data.shape[axis]:
        raise ShapeMismatch(f"slice [{start}:{stop}] out of range on axis {axis} "
                            f"of {a.data.shape}")
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def back(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] = g
            a.accumulate_grad(full)

    return _make(a.data[idx].copy(), (a,), back)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def back(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), back)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = np.argsort(axes)

    def back(g):
        if a.requires_grad:
            a.accumulate_grad(g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), back)


def embedding_lookup(table: Tensor, index) -> Tensor:
    """Row(s) of ``table``; index -1 yields a zero row (no gradient)."""
    if table.data.ndim != 2:
        raise ShapeMismatch("embedding table must be 2-D")
    idx = np.asarray(index)
    scalar = idx.ndim == 0
    idx = np.atleast_1d(idx)
    if idx.min() < -1 or idx.max() >= table.data.shape[0]:
        raise ShapeMismatch(f"embedding index out of range for table {table.data.shape}")
    valid = idx >= 0
    out = np.zeros(idx.shape + (table.data.shape[1],), dtype=table.data.dtype)
    out[valid] = table.data[idx[valid]]
    if scalar:
        out = out[0]

    def back(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            gg = g[None, :] if scalar else g
            np.add.at(table.grad, idx[valid], gg.reshape(idx.shape + (-1,))[valid])

    return _make(out, (table,), back)


def softmax(logits: Tensor, axis: int = -1) -> Tensor:
    x = logits.data
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("softmax over non-finite logits")
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        if logits.requires_grad:
            dot = (g * out).sum(axis=axis, keepdims=True)
            logits.accumulate_grad(out * (g - dot))

    return _make(out, (logits,), back)


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def back(g):
        if a.requires_grad:
            a.accumulate_grad(np.broadcast_to(g, a.data.shape).copy())

    return _make(out, (a,), back)


# --------------------------------------------------------------------------
# convolution and pooling

def _conv_cols(x: np.ndarray, k: int) -> np.ndarray:
    """im2col for same-padded square windows: [B,C,H,W] -> [B, H*W, C*k*k]."""
    b, c, h, w = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b, h * w, c * k * k)


def conv2d_same(inp: Tensor, filters: Tensor, bias: Tensor) -> Tensor:
    """Zero-padded cross-correlation preserving spatial size.

    ``inp`` is [C,H,W] or [B,C,H,W]; ``filters`` is [C_out,C_in,k,k] with
    odd k; ``bias`` is [C_out].
    """
    squeeze = inp.data.ndim == 3
    x = inp.data[None] if squeeze else inp.data
    f = filters.data
    if x.ndim != 4 or f.ndim != 4 or f.shape[2] != f.shape[3]:
        raise ShapeMismatch(f"conv2d_same: input {inp.data.shape}, filters {f.shape}")
    co, ci, k, _ = f.shape
    if k % 2 != 1:
        raise ShapeMismatch(f"kernel size must be odd, got {k}")
    if x.shape[1] != ci or bias.data.shape != (co,):
        raise ShapeMismatch(f"conv2d_same: input {x.shape}, filters {f.shape}, bias {bias.data.shape}")
    b, _, h, w = x.shape
    cols = _conv_cols(x, k)                       # [B, H*W, ci*k*k]
    fmat = f.reshape(co, ci * k * k).T            # [ci*k*k, co]
    out = cols @ fmat + bias.data                 # [B, H*W, co]
    out = out.transpose(0, 2, 1).reshape(b, co, h, w)
    if squeeze:
        out = out[0]

    def back(g):
        g4 = g[None] if squeeze else g
        gcols = g4.reshape(b, co, h * w).transpose(0, 2, 1)   # [B, H*W, co]
        if bias.requires_grad:
            bias.accumulate_grad(gcols.sum(axis=(0, 1)))
        if filters.requires_grad:
            gf = np.tensordot(gcols, cols, axes=([0, 1], [0, 1]))  # [co, ci*k*k]
            filters.accumulate_grad(gf.reshape(co, ci, k, k))
        if inp.requires_grad:
            fswap = f[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)      # [ci, co, k, k]
            gi_cols = _conv_cols(g4, k)                            # [B, H*W, co*k*k]
            gi = gi_cols @ fswap.reshape(ci, co * k * k).T         # [B, H*W, ci]
            gi = gi.transpose(0, 2, 1).reshape(b, ci, h, w)
            inp.accumulate_grad(gi[0] if squeeze else gi)

    return _make(out, (inp, filters, bias), back)


def max_over_time(inp: Tensor) -> Tensor:
    """Global per-channel maximum over all spatial positions.

    Gradient flows to the first argmax position (row-major) per channel.
    """
    squeeze = inp.data.ndim == 3
    x = inp.data[None] if squeeze else inp.data
    if x.ndim != 4:
        raise ShapeMismatch(f"max_over_time expects [C,H,W] or [B,C,H,W], got {inp.data.shape}")
    b, c, h, w = x.shape
    flat = x.reshape(b, c, h * w)
    arg = flat.argmax(axis=2)
    out = np.take_along_axis(flat, arg[:, :, None], axis=2)[:, :, 0]
    if squeeze:
        out = out[0]

    def back(g):
        g2 = g[None] if squeeze else g
        gx = np.zeros_like(flat)
        np.put_along_axis(gx, arg[:, :, None], g2[:, :, None], axis=2)
        gi = gx.reshape(b, c, h, w)
        inp.accumulate_grad(gi[0] if squeeze else gi)

    return _make(out, (inp,), back)


@dataclass
class BatchNormState:
    """Running statistics for one batch-norm layer (eval-time normalizers).

    Normalization uses biased batch variance; the running variance is the
    unbiased estimate, updated with the given momentum.
    """

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, momentum: float = 0.1, dtype=np.float32) -> "BatchNormState":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype),
                   momentum=momentum)


def batchnorm2d(inp: Tensor, gamma: Tensor, beta: Tensor,
                state: BatchNormState, mode: str = "train") -> Tensor:
    x = inp.data
    if x.ndim != 4:
        raise ShapeMismatch(f"batchnorm2d expects [B,C,H,W], got {x.shape}")
    b, c, h, w = x.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeMismatch("gamma/beta must be [C]")
    gam = gamma.data.reshape(1, c, 1, 1)
    bet = beta.data.reshape(1, c, 1, 1)
    n = b * h * w

    if mode == "train":
        if n < 2:
            raise DegenerateBatch(f"batch statistics over {n} value(s)")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        m = state.momentum
        state.running_mean[:] = (1 - m) * state.running_mean + m * mean
        state.running_var[:] = (1 - m) * state.running_var + m * var * n / (n - 1)
    else:
        mean = state.running_mean
        var = state.running_var

    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out = (gam * xhat + bet).astype(x.dtype)

    def back(g):
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if inp.requires_grad:
            gxhat = g * gam
            istd = inv_std.reshape(1, c, 1, 1)
            if mode == "train":
                sum_g = gxhat.sum(axis=(0, 2, 3), keepdims=True)
                sum_gx = (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                gi = istd * (gxhat - sum_g / n - xhat * sum_gx / n)
            else:
                gi = gxhat * istd
            inp.accumulate_grad(gi.astype(x.dtype))

    return _make(out, (inp, gamma, beta), back)


def dropout(inp: Tensor, p: float, rng: np.random.Generator,
            mode: str = "train") -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-p); identity in eval."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability out of range: {p}")
    if mode != "train" or p == 0.0:
        return inp
    keep = (rng.random(inp.data.shape) >= p).astype(inp.data.dtype)
    factor = inp.data.dtype.type(1.0 / (1.0 - p))
    out = inp.data * keep * factor

    def back(g):
        if inp.requires_grad:
            inp.accumulate_grad(g * keep * factor)

    return _make(out, (inp,), back)


_LOG_FLOOR = 1e-12


def cross_entropy(probabilities: Tensor, answers: Sequence[int]) -> Tensor:
    """Mean negative log probability of the answer class per row.

    Probabilities below 1e-12 are floored before the log."""
    p = probabilities.data
    if p.ndim == 1:
        p = p[None, :]
    rows = np.arange(p.shape[0])
    ans = np.asarray(list(answers), dtype=np.int64)
    if ans.shape[0] != p.shape[0]:
        raise ShapeMismatch(f"{p.shape[0]} rows vs {ans.shape[0]} answers")
    picked = np.maximum(p[rows, ans], _LOG_FLOOR)
    out = np.asarray(-np.log(picked).mean(), dtype=p.dtype)

    def back(g):
        if probabilities.requires_grad:
            gp = np.zeros_like(p)
            live = p[rows, ans] >= _LOG_FLOOR
            gp[rows[live], ans[live]] = -g / (p.shape[0] * picked[live])
            probabilities.accumulate_grad(
                gp[0] if probabilities.data.ndim == 1 else gp)

    return _make(out, (probabilities,), back)


# --------------------------------------------------------------------------
# optimization

def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``.
    Returns the pre-clip norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= p.grad.dtype.type(factor)
    return norm


@dataclass
class AdamState:
    """Per-parameter first/second moment estimates."""

    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update from the gradients on ``params``."""
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    if len(state.first_moment) != len(params):
        raise ShapeMismatch("optimizer state does not match parameter list")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for p, m, v in zip(params, state.first_moment, state.second_moment):
        if m.shape != p.data.shape:
            raise ShapeMismatch(f"moment shape {m.shape} vs parameter {p.data.shape}")
        g = p.grad
        if g is None:
            continue
        m[:] = b1 * m + (1 - b1) * g
        v[:] = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(p.data.dtype)


# --------------------------------------------------------------------------
# checkpoint container

_MAGIC = b"NESA1"
_VERSION = 1


def save_tensors(path, named: dict[str, "Tensor | np.ndarray"]) -> None:
    """Write named tensors: magic "NESA1", u32 version, u64 count, then per
    tensor u32 name length, UTF-8 name, u32 rank, u64 little-endian dims,
    float32 little-endian data.  Round-trips bit-exactly."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        f.write(struct.pack("<Q", len(named)))
        for name, value in named.items():
            arr = value.data if isinstance(value, Tensor) else value
            arr = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes())


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        if f.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"not a tensor container: {path}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != _VERSION:
            raise ValueError(f"unsupported container version {version}")
        (count,) = struct.unpack("<Q", f.read(8))
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", f.read(4))
            name = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            dims = struct.unpack(f"<{rank}Q", f.read(8 * rank)) if rank else ()
            n = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(dims)
            out[name] = data.astype(np.float32)
        return out

"""Small reverse-mode autodiff engine over numpy arrays.

Operations run eagerly. When a :class:`Tape` is active, every operation whose
inputs require gradients records a vector-Jacobian product closure; replaying
the tape in reverse produces gradients for the leaves.

Layout conventions: activations are ``[batch, channel, h, w]`` and conv
weights ``[out, in, kh, kw]``, both C-contiguous, so channel pruning is a
prefix slice on the two leading weight axes.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor", "Tape", "TapeConsumedError", "backward",
    "conv2d", "linear", "relu", "avg_pool2d", "max_pool2d", "reshape",
    "narrow", "add", "scale", "cross_entropy", "mse_stage_loss",
    "OptimState", "sgd_momentum_step", "grad_check",
]

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


class TapeConsumedError(RuntimeError):
    pass


class Tensor:
    """A numpy array plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f"{self.name!r}, " if self.name else ""
        return f"Tensor({label}shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


class Tape:
    """Records operations for one backward pass.

    Usage::

        with Tape() as tape:
            loss = cross_entropy(linear(x, w, b), y)
        gw, gb = tape.gradient(loss, [w, b])

    A tape can be replayed once; a second replay raises
    :class:`TapeConsumedError`.
    """

    def __init__(self) -> None:
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._produced: set[int] = set()
        self._consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().remove(self)

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def consumed(self) -> bool:
        return self._consumed

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> None:
        if self._consumed:
            raise TapeConsumedError("cannot record onto a consumed tape")
        self._nodes.append((out, inputs, vjp))
        self._produced.add(id(out))

    def _replay(self, target: Tensor, seed) -> dict[int, np.ndarray]:
        if self._consumed:
            raise TapeConsumedError("tape already consumed")
        if seed is None:
            if target.data.size != 1:
                raise ValueError("seed gradient required for non-scalar target")
            seed = np.ones_like(target.data)
        else:
            seed = np.asarray(seed, dtype=target.dtype)
            if seed.shape != target.shape:
                raise ValueError(f"seed shape {seed.shape} does not match output shape {target.shape}")
        self._consumed = True
        grads: dict[int, np.ndarray] = {id(target): seed}
        for out, inputs, vjp in reversed(self._nodes):
            g = grads.get(id(out))
            if g is None:
                continue
            for t, gi in zip(inputs, vjp(g)):
                if gi is None or not t.requires_grad:
                    continue
                k = id(t)
                grads[k] = grads[k] + gi if k in grads else gi
        return grads

    def gradient(self, target: Tensor, sources: Sequence[Tensor], seed=None) -> list[np.ndarray]:
        """Return d(target)/d(source) for each source; zeros where unreached."""
        grads = self._replay(target, seed)
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]

    def leaves(self) -> list[Tensor]:
        seen: dict[int, Tensor] = {}
        for _, inputs, _ in self._nodes:
            for t in inputs:
                if t.requires_grad and id(t) not in self._produced:
                    seen.setdefault(id(t), t)
        return list(seen.values())


def backward(tape: Tape, target: Tensor, seed=None) -> None:
    """Accumulate gradients of ``target`` into ``.grad`` of every leaf on ``tape``.

    Leaves are visited in first-use order so accumulation is deterministic.
    """
    leaves = tape.leaves()
    grads = tape._replay(target, seed)
    for leaf in leaves:
        g = grads.get(id(leaf))
        if g is None:
            continue
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def _wrap(out: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    res = Tensor(out, requires_grad=needs)
    stack = _tape_stack()
    if needs and stack:
        stack[-1].record(res, inputs, vjp)
    return res


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------- layers

def _out_extent(size: int, k: int, stride: int, pad: int, what: str) -> int:
    span = size + 2 * pad - k
    if span < 0:
        raise ValueError(f"{what}: kernel {k} larger than padded input {size + 2 * pad}")
    if span % stride:
        raise ValueError(f"{what}: ({size} + 2*{pad} - {k}) not divisible by stride {stride}")
    return span // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x[b,ci,h,w]`` with ``weight[co,ci,kh,kw]``."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError("conv2d expects 4-d input and weight")
    b, ci, h, w = x.shape
    co, wci, kh, kw = weight.shape
    if ci != wci:
        raise ValueError(f"conv2d: input has {ci} channels, weight expects {wci}")
    if bias is not None and bias.shape != (co,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({co},)")
    ho = _out_extent(h, kh, stride, pad, "conv2d")
    wo = _out_extent(w, kw, stride, pad, "conv2d")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def vjp(g):
        gx = gw = gb = None
        if x.requires_grad:
            cols = np.tensordot(g, weight.data, axes=([1], [0]))  # b,ho,wo,ci,kh,kw
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += (
                        cols[:, :, :, :, i, j].transpose(0, 3, 1, 2))
            gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        if weight.requires_grad:
            gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _wrap(out, inputs, vjp)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x[b,in] @ weight[out,in].T + bias``."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear: incompatible shapes {x.shape} and {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def vjp(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _wrap(out, inputs, vjp)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _wrap(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def _pair(k) -> tuple[int, int]:
    return (k, k) if isinstance(k, (int, np.integer)) else (int(k[0]), int(k[1]))


def _pool_windows(x: Tensor, kernel, stride, pad: int, fill: float):
    (kh, kw), (sh, sw) = _pair(kernel), _pair(stride)
    b, c, h, w = x.shape
    ho = _out_extent(h, kh, sh, pad, "pool")
    wo = _out_extent(w, kw, sw, pad, "pool")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=fill) if pad else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    return xp, win, ho, wo


def _scatter_windows(gwin: np.ndarray, xp_shape, stride, ho, wo, pad, h, w):
    sh, sw = _pair(stride)
    kh, kw = gwin.shape[-2:]
    gxp = np.zeros(xp_shape, dtype=gwin.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += gwin[..., i, j]
    return gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp


def avg_pool2d(x: Tensor, kernel, stride=None, pad: int = 0) -> Tensor:
    stride = kernel if stride is None else stride
    xp, win, ho, wo = _pool_windows(x, kernel, stride, pad, 0.0)
    out = win.mean(axis=(4, 5))
    h, w = x.shape[2:]
    kh, kw = win.shape[-2:]

    def vjp(g):
        gwin = np.broadcast_to((g / (kh * kw))[..., None, None], g.shape + (kh, kw))
        return (_scatter_windows(gwin, xp.shape, stride, ho, wo, pad, h, w),)

    return _wrap(out.astype(x.dtype), (x,), vjp)


def max_pool2d(x: Tensor, kernel, stride=None, pad: int = 0) -> Tensor:
    stride = kernel if stride is None else stride
    xp, win, ho, wo = _pool_windows(x, kernel, stride, pad, -np.inf)
    kh, kw = win.shape[-2:]
    flat = win.reshape(win.shape[:4] + (kh * kw,))
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    h, w = x.shape[2:]

    def vjp(g):
        gflat = np.zeros(flat.shape, dtype=g.dtype)
        np.put_along_axis(gflat, arg[..., None], g[..., None], axis=-1)
        return (_scatter_windows(gflat.reshape(win.shape), xp.shape, stride, ho, wo, pad, h, w),)

    return _wrap(out, (x,), vjp)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = x.shape
    return _wrap(x.data.reshape(shape), (x,), lambda g: (g.reshape(orig),))


def narrow(x: Tensor, sizes: Sequence[int]) -> Tensor:
    """Leading-prefix slice ``x[:sizes[0], :sizes[1], ...]`` returned as a view.

    The gradient is scattered back into a zero array of the full shape, so
    updates to the sliced view flow to the shared storage.
    """
    if len(sizes) > x.data.ndim or any(s < 0 or s > n for s, n in zip(sizes, x.shape)):
        raise ValueError(f"cannot narrow shape {x.shape} to {tuple(sizes)}")
    idx = tuple(slice(0, s) for s in sizes)
    if all(s == n for s, n in zip(sizes, x.shape)):
        return x
    view = x.data[idx]

    def vjp(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return _wrap(view, (x,), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _wrap(a.data + b.data, (a, b), lambda g: (g, g))


def scale(a: Tensor, factor: float) -> Tensor:
    return _wrap(a.data * a.dtype.type(factor), (a,), lambda g: (g * g.dtype.type(factor),))


# --------------------------------------------------------------------- losses

def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Batch mean of ``-log softmax(logits)[label]``."""
    z = logits.data
    if z.ndim != 2 or z.shape[1] < 2:
        raise ValueError(f"cross_entropy expects [b, k>=2] logits, got {z.shape}")
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.shape[0] != z.shape[0]:
        raise ValueError("cross_entropy: label count does not match batch")
    if y.size and (y.min() < 0 or y.max() >= z.shape[1]):
        raise ValueError(f"cross_entropy: labels must lie in [0, {z.shape[1]})")
    shift = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shift).sum(axis=1))
    rows = np.arange(z.shape[0])
    nll = lse - shift[rows, y]
    # clamp rounding noise so the loss is never reported below zero
    loss = np.asarray(max(nll.mean(), 0.0), dtype=z.dtype)

    def vjp(g):
        p = np.exp(shift - lse[:, None])
        p[rows, y] -= 1
        return (p * (g / z.shape[0]),)

    return _wrap(loss, (logits,), vjp)


def mse_stage_loss(y: Tensor, target: Tensor, reduction: str = "mean") -> Tensor:
    """Squared feature-map distance normalised by the channel count ``F``.

    ``reduction="sum"`` returns ``sum((y - target)**2) / F``;
    ``"batchmean"`` additionally divides by the batch size, which keeps the
    loss scale independent of how many examples are evaluated; ``"mean"``
    divides by every element count (``b * F * h * w``) so stages with
    large maps do not dominate. Inputs may be ``[b, F, h, w]`` maps or
    ``[b, F]`` vectors.
    """
    if y.shape != target.shape:
        raise ValueError(f"mse_stage_loss: shape mismatch {y.shape} vs {target.shape}")
    if y.data.ndim not in (2, 4):
        raise ValueError("mse_stage_loss expects [b,F] or [b,F,h,w] inputs")
    if reduction == "sum":
        denom = y.shape[1]
    elif reduction == "batchmean":
        denom = y.shape[1] * y.shape[0]
    elif reduction == "mean":
        denom = y.data.size
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    diff = y.data - target.data
    loss = np.asarray(np.sum(diff * diff) / denom, dtype=y.dtype)

    def vjp(g):
        gy = diff * (2 * g / denom)
        return gy, -gy

    return _wrap(loss, (y, target), vjp)


# ------------------------------------------------------------------ optimizer

@dataclass
class OptimState:
    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    velocity: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be non-negative")


def sgd_momentum_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: OptimState) -> OptimState:
    """In-place update ``v = mu*v + g + wd*w; w -= lr*v``.

    Parameters are modified in place so that views held elsewhere (sliced
    subnet weights) observe the update.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.velocity:
        state.velocity = [np.zeros_like(p.data) for p in params]
    if len(state.velocity) != len(params):
        raise ValueError("optimizer state does not match parameter list")
    for p, g, v in zip(params, grads, state.velocity):
        if g.shape != p.shape or v.shape != p.shape:
            raise ValueError(f"shape mismatch for parameter {p.name or ''}: {p.shape}, {g.shape}, {v.shape}")
        dt = p.dtype.type
        d = g + dt(state.weight_decay) * p.data if state.weight_decay else g
        v *= dt(state.momentum)
        v += d
        p.data -= dt(state.lr) * v
    return state


# ------------------------------------------------------------------ checking

def grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``loss_fn`` must rebuild the forward pass from the current parameter
    values each call and return a scalar tensor. Parameters should be float64.
    """
    with Tape() as tape:
        loss = loss_fn()
    analytic = tape.gradient(loss, params)
    worst = 0.0
    for p, a in zip(params, analytic):
        for idx in np.ndindex(*p.shape):
            orig = p.data[idx]
            p.data[idx] = orig + eps
            fp = float(loss_fn().data)
            p.data[idx] = orig - eps
            fm = float(loss_fn().data)
            p.data[idx] = orig
            cd = (fp - fm) / (2 * eps)
            err = abs(a[idx] - cd) / max(abs(a[idx]), abs(cd), 1e-8)
            worst = max(worst, float(err))
    return worst

"""Tape-based reverse-mode autodiff over dense float64 numpy arrays.

Every operation validates shapes eagerly, computes its forward value, and
(when a tape is active) records a backward closure plus a forward-replay
closure.  Gradients are accumulated by walking the tape in reverse execution
order, which makes repeated backward passes bit-identical.

Conventions:
  - tensors are rank 1..4, C-contiguous float64; scalars are shape (1,)
  - image-like data is [C, H, W]; batching is handled by callers mapping
    over samples
  - broadcasting in add/mul is restricted to the patterns the attention
    blocks actually need: equal shapes, scalar (1,), channel gate
    [C,1,1] x [C,H,W], and spatial gate [1,H,W] x [C,H,W]
"""

from __future__ import annotations

import itertools
import zlib
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when an operation receives tensors of incompatible shape."""


class UsageError(RuntimeError):
    """Raised when the tape or gradcheck API is used outside its contract."""


_uid_counter = itertools.count(1)


class Tensor:
    """Immutable-by-convention dense array with a unique id.

    Optimizer steps mutate parameter tensors in place between passes; all
    other code treats tensors as frozen once constructed.
    """

    __slots__ = ("data", "uid", "param")

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not (1 <= arr.ndim <= 4):
            raise ShapeError(f"tensor rank must be 1..4, got {arr.ndim}")
        self.data = np.ascontiguousarray(arr)
        self.uid = next(_uid_counter)
        self.param: "Parameter | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(uid={self.uid}, shape={self.shape})"


class Parameter:
    """Named trainable tensor with a gradient slot."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: Tensor):
        self.name = name
        self.value = value
        self.grad: np.ndarray | None = None
        value.param = self

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class ParamInit:
    """Deterministic parameter factory.

    Each parameter draws from its own RNG stream keyed by (seed, crc32(name)),
    so two models built from the same seed assign identical values to
    identically named parameters regardless of creation order or of extra
    parameters existing in one model but not the other.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFF

    def _rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, zlib.crc32(name.encode("utf-8"))])

    def conv_weight(self, name: str, shape: tuple[int, ...], fan_in: int) -> Parameter:
        bound = 1.0 / np.sqrt(float(fan_in))
        value = self._rng(name).uniform(-bound, bound, size=shape)
        return Parameter(name, Tensor(value))

    def zeros(self, name: str, shape: tuple[int, ...]) -> Parameter:
        return Parameter(name, Tensor(np.zeros(shape)))

    def ones(self, name: str, shape: tuple[int, ...]) -> Parameter:
        return Parameter(name, Tensor(np.ones(shape)))


class TapeRecord:
    __slots__ = ("op", "inputs", "output", "backward_fn", "forward_fn")

    def __init__(self, op, inputs, output, backward_fn, forward_fn):
        self.op: str = op
        self.inputs: tuple[Tensor, ...] = inputs
        self.output: Tensor = output
        self.backward_fn: Callable[[np.ndarray], tuple] = backward_fn
        self.forward_fn: Callable[[], np.ndarray] = forward_fn


_TAPE_STACK: list["Tape"] = []


def _active_tape() -> "Tape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tape:
    """Ordered record of primitive applications with reverse-mode backward."""

    def __init__(self):
        self.records: list[TapeRecord] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        if popped is not self:
            raise UsageError("tape context exited out of order")

    def record(self, op, inputs, output, backward_fn, forward_fn) -> None:
        self.records.append(TapeRecord(op, inputs, output, backward_fn, forward_fn))

    def backward(self, output: Tensor) -> dict[int, np.ndarray]:
        """Accumulate d(output)/d(tensor) for every tensor on the tape.

        Returns a dict keyed by tensor uid; gradients of tensors owned by a
        Parameter are also deposited into that parameter's .grad slot
        (overwriting, not adding, so repeated calls are idempotent).
        """
        if output.shape != (1,):
            raise UsageError(f"backward needs a scalar output, got shape {output.shape}")
        produced = {r.output.uid for r in self.records}
        if output.uid not in produced:
            raise UsageError("output tensor was not produced on this tape")

        grads: dict[int, np.ndarray] = {output.uid: np.ones(1)}
        for rec in reversed(self.records):
            g_out = grads.get(rec.output.uid)
            if g_out is None:
                continue
            g_inputs = rec.backward_fn(g_out)
            for tens, g in zip(rec.inputs, g_inputs):
                if g is None:
                    continue
                slot = grads.get(tens.uid)
                if slot is None:
                    grads[tens.uid] = g.copy()
                else:
                    slot += g
        for rec in self.records:
            for tens in rec.inputs:
                if tens.param is not None and tens.uid in grads:
                    tens.param.grad = grads[tens.uid]
        return grads

    def replay(self) -> list[np.ndarray]:
        """Recompute every record's forward closure, in order.

        Raises UsageError if any recomputed value differs bit-for-bit from
        the recorded output; returns the recomputed arrays otherwise.
        """
        outs = []
        for rec in self.records:
            fresh = rec.forward_fn()
            if not np.array_equal(fresh, rec.output.data):
                raise UsageError(f"replay mismatch in op {rec.op!r}")
            outs.append(fresh)
        return outs


def backward(tape: Tape, output: Tensor) -> dict[int, np.ndarray]:
    return tape.backward(output)


def _emit(op: str, inputs: tuple[Tensor, ...], out_data: np.ndarray,
          backward_fn, forward_fn) -> Tensor:
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None:
        tape.record(op, inputs, out, backward_fn, forward_fn)
    return out


def _require_rank(x: Tensor, rank: int, op: str) -> None:
    if x.data.ndim != rank:
        raise ShapeError(f"{op}: expected rank-{rank} tensor, got shape {x.shape}")


# ---------------------------------------------------------------------------
# structural ops


def reshape(x: Tensor, new_shape: Sequence[int]) -> Tensor:
    new_shape = tuple(int(s) for s in new_shape)
    if int(np.prod(new_shape)) != x.data.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {new_shape}")
    old_shape = x.shape

    def bwd(g):
        return (g.reshape(old_shape),)

    return _emit("reshape", (x,), x.data.reshape(new_shape),
                 bwd, lambda: x.data.reshape(new_shape))


def transpose2d(x: Tensor) -> Tensor:
    _require_rank(x, 2, "transpose2d")

    def bwd(g):
        return (np.ascontiguousarray(g.T),)

    def fwd():
        return np.ascontiguousarray(x.data.T)

    return _emit("transpose2d", (x,), fwd(), bwd, fwd)


def stack0(xs: Sequence[Tensor]) -> Tensor:
    """Stack equal-shape rank-3 tensors into one rank-4 tensor."""
    xs = tuple(xs)
    if not xs:
        raise ShapeError("stack0: needs at least one tensor")
    for x in xs:
        _require_rank(x, 3, "stack0")
        if x.shape != xs[0].shape:
            raise ShapeError(f"stack0: mixed shapes {x.shape} vs {xs[0].shape}")

    def bwd(g):
        return tuple(g[i] for i in range(len(xs)))

    def fwd():
        return np.stack([x.data for x in xs], axis=0)

    return _emit("stack0", xs, fwd(), bwd, fwd)


def select0(x: Tensor, i: int) -> Tensor:
    """Select sample i from a rank-4 tensor as a rank-3 tensor."""
    _require_rank(x, 4, "select0")
    if not (0 <= i < x.shape[0]):
        raise ShapeError(f"select0: index {i} out of range for {x.shape}")

    def bwd(g):
        gx = np.zeros(x.shape)
        gx[i] = g
        return (gx,)

    def fwd():
        return x.data[i].copy()

    return _emit("select0", (x,), fwd(), bwd, fwd)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    _require_rank(a, 3, "concat_channels")
    _require_rank(b, 3, "concat_channels")
    if a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"concat_channels: spatial dims differ {a.shape} vs {b.shape}")
    ca = a.shape[0]

    def bwd(g):
        return (g[:ca], g[ca:])

    def fwd():
        return np.concatenate([a.data, b.data], axis=0)

    return _emit("concat_channels", (a, b), fwd(), bwd, fwd)


# ---------------------------------------------------------------------------
# linear ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require_rank(a, 2, "matmul")
    _require_rank(b, 2, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ {a.shape} @ {b.shape}")

    def bwd(g):
        return (g @ b.data.T, a.data.T @ g)

    def fwd():
        return a.data @ b.data

    return _emit("matmul", (a, b), fwd(), bwd, fwd)


def conv1x1(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Pointwise channel mixing: x [C,H,W], w [C_out,C], bias [C_out]."""
    _require_rank(x, 3, "conv1x1")
    _require_rank(w, 2, "conv1x1")
    c, h, wd = x.shape
    if w.shape[1] != c:
        raise ShapeError(f"conv1x1: weight expects {w.shape[1]} channels, input has {c}")
    if bias is not None and bias.shape != (w.shape[0],):
        raise ShapeError(f"conv1x1: bias shape {bias.shape} != ({w.shape[0]},)")
    c_out = w.shape[0]

    def fwd():
        y = (w.data @ x.data.reshape(c, h * wd)).reshape(c_out, h, wd)
        if bias is not None:
            y = y + bias.data[:, None, None]
        return y

    def bwd(g):
        g2 = g.reshape(c_out, h * wd)
        gx = (w.data.T @ g2).reshape(c, h, wd)
        gw = g2 @ x.data.reshape(c, h * wd).T
        if bias is None:
            return (gx, gw)
        return (gx, gw, g2.sum(axis=1))

    inputs = (x, w) if bias is None else (x, w, bias)
    return _emit("conv1x1", inputs, fwd(), bwd, fwd)


def _conv_raw(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Plain correlation on raw arrays: x [C,H,W], w [C_out,C,k,k]."""
    c_out, c_in, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    col = np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c_in * k * k, ho * wo)
    y = (w.reshape(c_out, c_in * k * k) @ col).reshape(c_out, ho, wo)
    return y


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None,
           stride: int = 1, pad: int | None = None) -> Tensor:
    """Square-kernel correlation: x [C,H,W], w [C_out,C,k,k], stride 1 or 2.

    pad defaults to k//2 (shape-preserving at stride 1).
    """
    _require_rank(x, 3, "conv2d")
    _require_rank(w, 4, "conv2d")
    c, h, wd = x.shape
    c_out, c_in, k, k2 = w.shape
    if k != k2:
        raise ShapeError(f"conv2d: kernel must be square, got {k}x{k2}")
    if c_in != c:
        raise ShapeError(f"conv2d: weight expects {c_in} channels, input has {c}")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: stride must be 1 or 2, got {stride}")
    if pad is None:
        pad = k // 2
    if pad > k - 1:
        raise ShapeError(f"conv2d: pad {pad} exceeds kernel-1 ({k - 1})")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {k} too large for padded input {x.shape}")

    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    col = np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c * k * k, ho * wo)

    def fwd():
        y = (w.data.reshape(c_out, c * k * k) @ col).reshape(c_out, ho, wo)
        if bias is not None:
            y = y + bias.data[:, None, None]
        return y

    def bwd(g):
        g2 = g.reshape(c_out, ho * wo)
        gw = (g2 @ col.T).reshape(w.shape)
        # grad wrt x: correlate the stride-dilated output grad with the
        # spatially flipped kernel, padding so the result is exactly [C,H,W]
        if stride == 1:
            g_dil = g
        else:
            g_dil = np.zeros((c_out, (ho - 1) * stride + 1, (wo - 1) * stride + 1))
            g_dil[:, ::stride, ::stride] = g
        rem_h = h + 2 * pad - k - (g_dil.shape[1] - 1)
        rem_w = wd + 2 * pad - k - (g_dil.shape[2] - 1)
        lead = k - 1 - pad
        g_pad = np.pad(g_dil, ((0, 0), (lead, lead + rem_h), (lead, lead + rem_w)))
        w_flip = np.ascontiguousarray(w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        gx = _conv_raw(g_pad, w_flip, stride=1, pad=0)
        if bias is None:
            return (gx, gw)
        return (gx, gw, g2.sum(axis=1))

    inputs = (x, w) if bias is None else (x, w, bias)
    return _emit("conv2d", inputs, fwd(), bwd, fwd)


# ---------------------------------------------------------------------------
# reductions and pooling


def global_avg_pool(x: Tensor) -> Tensor:
    _require_rank(x, 3, "global_avg_pool")
    c, h, w = x.shape
    n = h * w

    def bwd(g):
        return (np.broadcast_to(g / n, (c, h, w)).copy(),)

    def fwd():
        return x.data.mean(axis=(1, 2), keepdims=True)

    return _emit("global_avg_pool", (x,), fwd(), bwd, fwd)


def global_max_pool(x: Tensor) -> Tensor:
    """Per-channel spatial max; ties route the gradient to the first
    (row-major) maximal element."""
    _require_rank(x, 3, "global_max_pool")
    c, h, w = x.shape
    flat = x.data.reshape(c, h * w)
    idx = np.argmax(flat, axis=1)

    def bwd(g):
        gx = np.zeros((c, h * w))
        gx[np.arange(c), idx] = g.ravel()
        return (gx.reshape(c, h, w),)

    def fwd():
        return x.data.max(axis=(1, 2), keepdims=True)

    return _emit("global_max_pool", (x,), fwd(), bwd, fwd)


def channel_mean(x: Tensor) -> Tensor:
    _require_rank(x, 3, "channel_mean")
    c = x.shape[0]

    def bwd(g):
        return (np.broadcast_to(g / c, x.shape).copy(),)

    def fwd():
        return x.data.mean(axis=0, keepdims=True)

    return _emit("channel_mean", (x,), fwd(), bwd, fwd)


def channel_max(x: Tensor) -> Tensor:
    """Across-channel max map; ties route the gradient to the lowest
    channel index."""
    _require_rank(x, 3, "channel_max")
    idx = np.argmax(x.data, axis=0)

    def bwd(g):
        gx = np.zeros(x.shape)
        h_idx, w_idx = np.indices(idx.shape)
        gx[idx, h_idx, w_idx] = g[0]
        return (gx,)

    def fwd():
        return x.data.max(axis=0, keepdims=True)

    return _emit("channel_max", (x,), fwd(), bwd, fwd)


def reduce_sum(x: Tensor) -> Tensor:
    shape = x.shape

    def bwd(g):
        return (np.full(shape, g[0]),)

    def fwd():
        return np.asarray([x.data.sum()])

    return _emit("reduce_sum", (x,), fwd(), bwd, fwd)


# ---------------------------------------------------------------------------
# nonlinearities


def softmax(x: Tensor, axis: int) -> Tensor:
    if not (-x.data.ndim <= axis < x.data.ndim):
        raise ShapeError(f"softmax: axis {axis} out of range for shape {x.shape}")

    def fwd():
        m = x.data.max(axis=axis, keepdims=True)
        e = np.exp(x.data - m)
        return e / e.sum(axis=axis, keepdims=True)

    y = fwd()

    def bwd(g):
        return ((g - (g * y).sum(axis=axis, keepdims=True)) * y,)

    return _emit("softmax", (x,), y, bwd, fwd)


def sigmoid(x: Tensor) -> Tensor:
    def fwd():
        out = np.empty_like(x.data)
        pos = x.data >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
        ex = np.exp(x.data[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    y = fwd()

    def bwd(g):
        return (g * y * (1.0 - y),)

    return _emit("sigmoid", (x,), y, bwd, fwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bwd(g):
        return (g * mask,)

    def fwd():
        return np.maximum(x.data, 0.0)

    return _emit("relu", (x,), fwd(), bwd, fwd)


# ---------------------------------------------------------------------------
# elementwise arithmetic with restricted broadcasting


def _broadcast_ok(sa: tuple[int, ...], sb: tuple[int, ...]) -> bool:
    if sa == sb:
        return True
    if sa == (1,) or sb == (1,):
        return True
    if len(sa) == 3 and len(sb) == 3:
        big, small = (sa, sb) if np.prod(sa) >= np.prod(sb) else (sb, sa)
        c, h, w = big
        if small == (c, 1, 1) or small == (1, h, w):
            return True
    return False


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == (1,):
        return np.asarray([g.sum()])
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"{op}: unsupported shape pair {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)

    def bwd(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    def fwd():
        return a.data + b.data

    return _emit("add", (a, b), fwd(), bwd, fwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)

    def bwd(g):
        return (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))

    def fwd():
        return a.data * b.data

    return _emit("mul", (a, b), fwd(), bwd, fwd)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def bwd(g):
        return (g * c,)

    def fwd():
        return x.data * c

    return _emit("scale", (x,), fwd(), bwd, fwd)


# ---------------------------------------------------------------------------
# normalization


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize a [C,1,1] tensor over its C entries, then apply a per-channel
    affine transform (gamma, beta are rank-1 [C])."""
    _require_rank(x, 3, "layer_norm")
    c, h, w = x.shape
    if h != 1 or w != 1:
        raise ShapeError(f"layer_norm: expects [C,1,1], got {x.shape}")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm: affine params must be ({c},)")

    def stats():
        v = x.data.reshape(c)
        mu = v.mean()
        var = v.var()
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (v - mu) * inv
        return xhat, inv

    def fwd():
        xhat, _ = stats()
        return (gamma.data * xhat + beta.data).reshape(c, 1, 1)

    xhat, inv = stats()

    def bwd(g):
        gflat = g.reshape(c)
        dxhat = gflat * gamma.data
        dx = inv * (dxhat - dxhat.mean() - xhat * (dxhat * xhat).mean())
        return (dx.reshape(c, 1, 1), gflat * xhat, gflat.copy())

    return _emit("layer_norm", (x, gamma, beta), fwd(), bwd, fwd)


# ---------------------------------------------------------------------------
# losses (compositions and fused primitives)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over all elements, built from primitives."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = add(pred, scale(target, -1.0))
    return scale(reduce_sum(mul(diff, diff)), 1.0 / pred.data.size)


def bce_with_logits(logits: Tensor, targets: Tensor) -> Tensor:
    """Mean binary cross-entropy on raw logits.

    Uses the overflow-free form max(z,0) - z*t + log1p(exp(-|z|)) so the
    output stays finite for any finite logits; the exact gradient is
    (sigmoid(z) - t) / n.
    """
    if logits.shape != targets.shape:
        raise ShapeError(f"bce_with_logits: shape mismatch {logits.shape} vs {targets.shape}")
    n = logits.data.size

    def fwd():
        z, tt = logits.data, targets.data
        per = np.maximum(z, 0.0) - z * tt + np.log1p(np.exp(-np.abs(z)))
        return np.asarray([per.mean()])

    def bwd(g):
        z = logits.data
        sig = np.empty_like(z)
        pos = z >= 0
        sig[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ex = np.exp(z[~pos])
        sig[~pos] = ex / (1.0 + ex)
        return ((sig - targets.data) * (g[0] / n), None)

    return _emit("bce_with_logits", (logits, targets), fwd(), bwd, fwd)


# ---------------------------------------------------------------------------
# finite-difference checking


def finite_diff_gradcheck(f: Callable[[Tensor], Tensor], x: Tensor,
                          h: float | None = None) -> float:
    """Compare tape gradients of scalar f(x) against central differences.

    Returns max_i |analytic_i - numeric_i| / max(1, |analytic_i|, |numeric_i|).
    The step for coordinate i is h if given, else 1e-5 * max(1, |x_i|).
    """
    with Tape() as tape:
        y = f(x)
    if not isinstance(y, Tensor) or y.shape != (1,):
        raise UsageError("gradcheck requires f to return a scalar tensor of shape (1,)")
    grads = tape.backward(y)
    analytic = grads.get(x.uid, np.zeros(x.shape)).ravel()

    base = x.data.ravel().copy()
    numeric = np.zeros_like(base)
    for i in range(base.size):
        step = h if h is not None else 1e-5 * max(1.0, abs(base[i]))
        lo, hi = base.copy(), base.copy()
        lo[i] -= step
        hi[i] += step
        f_hi = float(f(Tensor(hi.reshape(x.shape))).data[0])
        f_lo = float(f(Tensor(lo.reshape(x.shape))).data[0])
        numeric[i] = (f_hi - f_lo) / (2.0 * step)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))

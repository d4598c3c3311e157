"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tape`` records primitive ops in execution order, which is already a
topological order, so the backward pass is a single reverse sweep that
visits each node exactly once. Training code opens one tape per step
(``with Tape(): ...``); ad-hoc use falls back to an ambient default tape
that can be dropped with ``reset_default_tape()``.

Hot kernels (conv1d, layer_norm, softmax, gelu, silu) are routed through
``flowsig.backend``; everything else is plain numpy.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import backend


class ShapeError(ValueError):
    """Operand shapes do not conform for the named op."""


class TapeError(RuntimeError):
    """Illegal tape usage (cross-tape op, backward off tape, ...)."""


# --------------------------------------------------------------------------
# tape machinery
# --------------------------------------------------------------------------

class Node:
    __slots__ = ("op", "parents", "out", "backward_fn")

    def __init__(self, op, parents, out, backward_fn):
        self.op = op
        self.parents = parents
        self.out = out
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of primitive ops for one differentiation pass."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.visit_count = 0

    def __enter__(self):
        _tape_stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack.pop()
        assert popped is self
        return False

    def check_topological(self):
        """True when every node's recorded parents precede it."""
        for i, node in enumerate(self.nodes):
            for p in node.parents:
                if p.tape is self and p.node is not None and p.node >= i:
                    return False
        return True

    def backward(self, loss: "Tensor") -> None:
        if loss.data.size != 1:
            raise TapeError(f"backward requires a scalar loss, got shape {loss.shape}")
        if loss.tape is not self or loss.node is None:
            raise TapeError("loss is not recorded on this tape")
        self.visit_count = 0
        pending: dict[int, tuple[Tensor, np.ndarray]] = {
            id(loss): (loss, np.ones_like(loss.data))
        }

        def feed(t: "Tensor", g: np.ndarray) -> None:
            if t.tape is self and t.node is not None:
                key = id(t)
                if key in pending:
                    pending[key] = (t, pending[key][1] + g)
                else:
                    pending[key] = (t, g)
            elif t.requires_grad:
                t.grad = g.copy() if t.grad is None else t.grad + g

        for node in reversed(self.nodes):
            self.visit_count += 1
            entry = pending.pop(id(node.out), None)
            if entry is None:
                continue
            out_t, g = entry
            out_t.grad = g if out_t.grad is None else out_t.grad + g
            for parent, pgrad in node.backward_fn(g):
                if parent.requires_grad or (parent.tape is self and parent.node is not None):
                    feed(parent, pgrad)
        # anything left unpopped is an input recorded before this tape opened
        for t, g in pending.values():
            if t.requires_grad:
                t.grad = g.copy() if t.grad is None else t.grad + g


_tape_stack: list[Tape] = []
_default_tape: Optional[Tape] = None
_grad_enabled = True


def active_tape(create: bool = False) -> Optional[Tape]:
    global _default_tape
    if _tape_stack:
        return _tape_stack[-1]
    if create and _default_tape is None:
        _default_tape = Tape()
    return _default_tape


def reset_default_tape() -> None:
    global _default_tape
    _default_tape = None


class no_grad:
    """Context manager that disables tape recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, exc_type, exc, tb):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


# --------------------------------------------------------------------------
# tensor
# --------------------------------------------------------------------------

class Tensor:
    """Row-major float64 array plus optional gradient and tape link."""

    __slots__ = ("data", "grad", "requires_grad", "node", "tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node: Optional[int] = None
        self.tape: Optional[Tape] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; scalars become constant tensors
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not a supported primitive")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, out_data: np.ndarray, parents: Sequence[Tensor],
            backward_fn: Callable[[np.ndarray], Iterable[tuple[Tensor, np.ndarray]]]) -> Tensor:
    out = Tensor(out_data)
    if not _grad_enabled:
        return out
    if not any(p.requires_grad or p.node is not None for p in parents):
        return out
    tape = active_tape(create=True)
    for p in parents:
        if p.node is not None and p.tape is not tape:
            raise TapeError(
                f"{op}: operand was recorded on a different tape; detach() it first"
            )
    out.requires_grad = True
    out.tape = tape
    out.node = len(tape.nodes)
    tape.nodes.append(Node(op, tuple(parents), out, backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Reverse sweep from a scalar loss; leaf grads accumulate."""
    if loss.data.size != 1:
        raise TapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss.tape is None:
        raise TapeError("loss is not on any tape (constant or detached)")
    loss.tape.backward(loss)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to the pre-broadcast shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# --------------------------------------------------------------------------
# primitive ops
# --------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def bwd(g):
        return [(a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))]

    return _record("add", a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def bwd(g):
        return [(a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape))]

    return _record("sub", a.data - b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def bwd(g):
        return [(a, _unbroadcast(g * b.data, a.shape)),
                (b, _unbroadcast(g * a.data, b.shape))]

    return _record("mul", a.data * b.data, (a, b), bwd)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} vs {b.shape}")

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return [(a, ga), (b, gb)]

    return _record("matmul", a.data @ b.data, (a, b), bwd)


def conv1d(x, w, bias=None, stride: int = 1, padding=0) -> Tensor:
    """Valid 1-D cross-correlation over the last axis.

    x: [C, L] or [B, C, L]; w: [O, C, K]. Supported configurations are
    stride == K with no padding (patchify) and stride 1 with integer or
    "same" padding (data filters). Output length (L + 2p - K)//stride + 1.
    """
    x, w = as_tensor(x), as_tensor(w)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d: expected x [B,C,L] and w [O,C,K], got {x.shape} and {w.shape}")
    if xd.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: channel mismatch, x {x.shape} vs w {w.shape}")
    K = w.shape[2]
    if padding == "same":
        if stride != 1:
            raise ShapeError("conv1d: same padding requires stride 1")
        pad = ((K - 1) // 2, K - 1 - (K - 1) // 2)
    else:
        pad = (int(padding), int(padding))
    xp = np.pad(xd, ((0, 0), (0, 0), pad)) if pad != (0, 0) else xd
    if xp.shape[2] < K:
        raise ShapeError(f"conv1d: input length {xd.shape[2]} shorter than kernel {K}")
    xp = np.ascontiguousarray(xp)
    wd = np.ascontiguousarray(w.data)
    y = backend.impl.conv1d_forward(xp, wd, stride)

    parents = [x, w]
    b = None
    if bias is not None:
        b = as_tensor(bias)
        if b.shape != (w.shape[0],):
            raise ShapeError(f"conv1d: bias shape {b.shape} does not match out channels {w.shape[0]}")
        y = y + b.data[None, :, None]
        parents.append(b)

    def bwd(g):
        g = np.ascontiguousarray(g[None] if squeeze else g)
        gxp, gw = backend.impl.conv1d_backward(xp, wd, g, stride)
        if pad != (0, 0):
            gxp = gxp[:, :, pad[0] : gxp.shape[2] - pad[1]]
        gx = gxp[0] if squeeze else gxp
        grads = [(x, gx), (w, gw)]
        if b is not None:
            grads.append((b, g.sum(axis=(0, 2))))
        return grads

    return _record("conv1d", y[0] if squeeze else y, parents, bwd)


def layer_norm(x, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean, unit variance (no affine)."""
    x = as_tensor(x)
    if x.ndim < 1 or x.shape[-1] < 1:
        raise ShapeError(f"layer_norm: need a non-empty last axis, got {x.shape}")
    d = x.shape[-1]
    x2 = np.ascontiguousarray(x.data.reshape(-1, d))
    y2, _, rstd = backend.impl.layer_norm_forward(x2, eps)

    def bwd(g):
        g2 = np.ascontiguousarray(g.reshape(-1, d))
        gx = backend.impl.layer_norm_backward(y2, rstd, g2)
        return [(x, gx.reshape(x.shape))]

    return _record("layer_norm", y2.reshape(x.shape), (x,), bwd)


def softmax(x) -> Tensor:
    """Softmax over the last axis."""
    x = as_tensor(x)
    d = x.shape[-1]
    x2 = np.ascontiguousarray(x.data.reshape(-1, d))
    y2 = backend.impl.softmax_forward(x2)

    def bwd(g):
        g2 = np.ascontiguousarray(g.reshape(-1, d))
        gx = backend.impl.softmax_backward(y2, g2)
        return [(x, gx.reshape(x.shape))]

    return _record("softmax", y2.reshape(x.shape), (x,), bwd)


def log_softmax(x) -> Tensor:
    """Log-softmax over the last axis, computed stably."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse

    def bwd(g):
        return [(x, g - np.exp(y) * g.sum(axis=-1, keepdims=True))]

    return _record("log_softmax", y, (x,), bwd)


def gelu(x) -> Tensor:
    x = as_tensor(x)
    flat = np.ascontiguousarray(x.data.reshape(-1))
    y = backend.impl.gelu_forward(flat)

    def bwd(g):
        gx = backend.impl.gelu_backward(flat, np.ascontiguousarray(g.reshape(-1)))
        return [(x, gx.reshape(x.shape))]

    return _record("gelu", y.reshape(x.shape), (x,), bwd)


def silu(x) -> Tensor:
    x = as_tensor(x)
    flat = np.ascontiguousarray(x.data.reshape(-1))
    y = backend.impl.silu_forward(flat)

    def bwd(g):
        gx = backend.impl.silu_backward(flat, np.ascontiguousarray(g.reshape(-1)))
        return [(x, gx.reshape(x.shape))]

    return _record("silu", y.reshape(x.shape), (x,), bwd)


def _reduce(op, x, axis, keepdims, scale):
    x = as_tensor(x)
    y = getattr(x.data, op)(axis=axis, keepdims=keepdims)

    def bwd(g):
        g = np.asarray(g)
        if not keepdims and axis is not None:
            g = np.expand_dims(g, axis)
        out = np.broadcast_to(g, x.shape).astype(np.float64)
        if scale:
            n = x.size if axis is None else np.prod(
                [x.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
            )
            out = out / n
        return [(x, out)]

    return _record(op, np.asarray(y), (x,), bwd)


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    return _reduce("sum", x, axis, keepdims, scale=False)


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    return _reduce("mean", x, axis, keepdims, scale=True)


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))

    def bwd(g):
        return [(x, g.transpose(inv))]

    return _record("transpose", x.data.transpose(axes), (x,), bwd)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)

    def bwd(g):
        return [(x, g.reshape(x.shape))]

    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None
    return _record("reshape", y, (x,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    base = list(ts[0].shape)
    for t in ts[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
            i != axis and o != b for i, (o, b) in enumerate(zip(other, base))
        ):
            raise ShapeError(f"concat: shapes {ts[0].shape} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        out = []
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            out.append((t, g[tuple(idx)]))
        return out

    return _record("concat", np.concatenate([t.data for t in ts], axis=axis), ts, bwd)


def gather(x, indices, axis: int = 0) -> Tensor:
    """Select slices along an axis by integer index; duplicates allowed."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"gather: indices must be 1-D, got shape {idx.shape}")

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (slice(None),) * axis + (idx,), g)
        return [(x, gx)]

    return _record("gather", np.take(x.data, idx, axis=axis), (x,), bwd)


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    if not (0 <= start <= stop <= x.shape[axis]):
        raise ShapeError(f"slice_axis: [{start}:{stop}] out of range for axis {axis} of {x.shape}")
    sel = (slice(None),) * axis + (slice(start, stop),)

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[sel] = g
        return [(x, gx)]

    return _record("slice_axis", x.data[sel].copy(), (x,), bwd)


def mse(pred, target) -> Tensor:
    """Mean squared error over all elements; scalar output."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: shapes {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def bwd(g):
        scaled = (2.0 / n) * float(g) * diff
        return [(pred, scaled), (target, -scaled)]

    return _record("mse", np.asarray(np.mean(diff * diff)), (pred, target), bwd)


# --------------------------------------------------------------------------
# gradient checking
# --------------------------------------------------------------------------

def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-4) -> float:
    """Max elementwise |analytic - central difference| / max(|analytic|, 1e-8).

    f must map x to a scalar Tensor deterministically; any other randomness
    must be frozen by the caller.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x.zero_grad()
    with Tape():
        loss = f(x)
        if loss.node is not None:
            backward(loss)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.zero_grad()

    numeric = np.zeros(x.size)
    with no_grad():
        for i in range(x.size):
            orig = x.data.flat[i]
            x.data.flat[i] = orig + h
            hi = f(x).item()
            x.data.flat[i] = orig - h
            lo = f(x).item()
            x.data.flat[i] = orig
            numeric[i] = (hi - lo) / (2.0 * h)
    diff = np.abs(analytic.reshape(-1) - numeric)
    denom = np.maximum(np.abs(analytic.reshape(-1)), 1e-8)
    return float((diff / denom).max())


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) resampled until all draws lie within 2 std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std

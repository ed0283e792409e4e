"""Minimal dense float32 tensor engine with reverse-mode autodiff.

Supports exactly the operations needed for small 1D CNNs, a gated
recurrent aggregator, and the contrastive / detection losses built on
top: elementwise arithmetic, matmul, conv1d, pooling, normalization,
softmax-family ops, and the stable loss primitives.

The graph is rebuilt on every forward pass (define-by-run). Any op that
produces a non-finite value raises immediately instead of letting NaN
or Inf propagate.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Operand shapes do not conform to an op's rule."""


class NumericError(ArithmeticError):
    """An op produced NaN or Inf."""


class GraphError(RuntimeError):
    """Backward called on an invalid target (non-scalar or detached)."""


ArrayLike = Union["Tensor", np.ndarray, float, int, list]


class Tensor:
    """A float32 ndarray plus the bookkeeping for reverse-mode autodiff.

    ``grad`` is populated by :func:`backward` for every tensor with
    ``requires_grad=True`` reachable from the loss. Data arrays are
    treated as immutable once wrapped; ops always allocate fresh outputs.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_op")

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._vjp: Optional[Callable[[np.ndarray], tuple]] = None
        self._op: str = "leaf"

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
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # Operator sugar; all routed through the module-level ops.
    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, key) -> "Tensor":
        return slice_(self, key)


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(op: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op} produced non-finite values")


def _result(op: str, data: np.ndarray, parents: Sequence[Tensor],
            vjp: Callable[[np.ndarray], tuple]) -> Tensor:
    data = np.asarray(data, dtype=np.float32)
    _check_finite(op, data)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
        out._op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor) -> None:
    """Reverse-mode pass from a scalar loss.

    Populates ``t.grad`` (overwriting any previous value) for every
    tensor with ``requires_grad`` reachable from ``loss``. Each node in
    the recorded graph is visited exactly once; gradients accumulate
    additively across fan-out.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward target must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("backward target is detached from any differentiable input")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g
        if node._vjp is None:
            continue
        parent_grads = node._vjp(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            acc = grads.get(id(p))
            grads[id(p)] = pg if acc is None else acc + pg


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting rules)

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result("mul", a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)))


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    return _result("div", out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    return _result("matmul", a.data @ b.data, (a, b),
                   lambda g: (g @ b.data.T, a.data.T @ g))


# ---------------------------------------------------------------------------
# shape ops

def reshape(x: ArrayLike, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    return _result("reshape", x.data.reshape(shape), (x,),
                   lambda g: (g.reshape(x.shape),))


def transpose(x: ArrayLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result("transpose", x.data.transpose(axes), (x,),
                   lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of empty sequence")
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from None
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result("concat", data, ts, vjp)


def slice_(x: ArrayLike, key) -> Tensor:
    """Basic indexing (ints / slices / tuples thereof) with gradient scatter."""
    x = as_tensor(x)
    data = x.data[key]

    def vjp(g):
        dx = np.zeros_like(x.data)
        dx[key] = g
        return (dx,)

    return _result("slice", data, (x,), vjp)


# ---------------------------------------------------------------------------
# activations / pointwise

def relu(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _result("relu", np.where(mask, x.data, 0.0), (x,),
                   lambda g: (g * mask,))


def tanh(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    return _result("tanh", t, (x,), lambda g: (g * (1.0 - t * t),))


def sigmoid(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    # stable in both tails
    s = np.where(x.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(x.data))),
                 np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))
    s = s.astype(np.float32)
    return _result("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def exp(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        e = np.exp(x.data)
    return _result("exp", e, (x,), lambda g: (g * e,))


def log(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return _result("log", out, (x,), lambda g: (g / x.data,))


def sqrt(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    with np.errstate(invalid="ignore"):
        s = np.sqrt(x.data)
    return _result("sqrt", s, (x,), lambda g: (g * 0.5 / s,))


# ---------------------------------------------------------------------------
# reductions

def _restore_axes(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)), shape).copy()
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape).copy()


def sum_(x: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    return _result("sum", x.data.sum(axis=axis, keepdims=keepdims), (x,),
                   lambda g: (_restore_axes(g, x.shape, axis, keepdims),))


def mean(x: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.size if axis is None else x.size // max(out.size, 1)
    return _result("mean", out, (x,),
                   lambda g: (_restore_axes(g, x.shape, axis, keepdims) / count,))


# ---------------------------------------------------------------------------
# softmax family

def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _result("softmax", s, (x,), vjp)


def log_softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lsm = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def vjp(g):
        return (g - np.exp(lsm) * g.sum(axis=axis, keepdims=True),)

    return _result("log_softmax", lsm, (x,), vjp)


# ---------------------------------------------------------------------------
# normalization

def layer_norm(x: ArrayLike, eps: float = 1e-5) -> Tensor:
    """Normalize each sample (axis 0 is the batch) to zero mean, unit variance.

    Statistics are computed over all non-batch axes per sample; there are
    no running statistics and no affine parameters (compose gain/bias
    outside with mul/add).
    """
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"layer_norm expects batched input, got shape {x.shape}")
    axes = tuple(range(1, x.ndim))
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def vjp(g):
        gm = g.mean(axis=axes, keepdims=True)
        gy = (g * y).mean(axis=axes, keepdims=True)
        return ((g - gm - y * gy) * inv,)

    return _result("layer_norm", y, (x,), vjp)


# ---------------------------------------------------------------------------
# convolution / pooling

def conv1d(x: ArrayLike, w: ArrayLike, b: Optional[ArrayLike] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """1-d cross-correlation.

    x: [N, C, T] (or [C, T], treated as a batch of one and squeezed back),
    w: [F, C, K], b: [F] optional. Output [N, F, T_out] with
    T_out = (T + 2*padding - K) // stride + 1.
    """
    x = as_tensor(x)
    w = as_tensor(w)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d expects x [N,C,T] and w [F,C,K], got {x.shape}, {w.shape}")
    n, c, t = xd.shape
    f, cw, k = w.shape
    if c != cw:
        raise ShapeError(f"conv1d channel mismatch: input has {c}, kernel expects {cw}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv1d invalid stride={stride} padding={padding}")
    t_pad = t + 2 * padding
    if t_pad < k:
        raise ShapeError(f"conv1d length {t} + 2*{padding} shorter than kernel {k}")
    t_out = (t_pad - k) // stride + 1

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]  # [N,C,T_out,K]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(n * t_out, c * k)
    wmat = w.data.reshape(f, c * k)
    out = (cols @ wmat.T).reshape(n, t_out, f).transpose(0, 2, 1)

    parents = [x, w]
    bt = None
    if b is not None:
        bt = as_tensor(b)
        if bt.shape != (f,):
            raise ShapeError(f"conv1d bias shape {bt.shape} != ({f},)")
        out = out + bt.data[None, :, None]
        parents.append(bt)

    def vjp(g):
        if squeeze:
            g = g[None]
        g2 = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(n * t_out, f)
        dw = (g2.T @ cols).reshape(f, c, k)
        dcols = (g2 @ wmat).reshape(n, t_out, c, k).transpose(0, 2, 1, 3)  # [N,C,T_out,K]
        dxp = np.zeros((n, c, t_pad), dtype=np.float32)
        for kk in range(k):
            dxp[:, :, kk:kk + stride * t_out:stride] += dcols[:, :, :, kk]
        dx = dxp[:, :, padding:padding + t] if padding else dxp
        if squeeze:
            dx = dx[0]
        grads = [dx, dw]
        if bt is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    return _result("conv1d", out[0] if squeeze else out, parents, vjp)


def max_pool1d(x: ArrayLike, kernel: int, stride: Optional[int] = None) -> Tensor:
    """Max pooling over the time axis of [N, C, T]; no padding."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"max_pool1d expects [N,C,T], got {x.shape}")
    if stride is None:
        stride = kernel
    n, c, t = x.shape
    if t < kernel:
        raise ShapeError(f"max_pool1d kernel {kernel} exceeds length {t}")
    win = sliding_window_view(x.data, kernel, axis=2)[:, :, ::stride, :]
    t_out = win.shape[2]
    arg = win.argmax(axis=3)                       # [N,C,T_out]
    out = np.take_along_axis(win, arg[..., None], axis=3)[..., 0]

    def vjp(g):
        dx = np.zeros_like(x.data)
        starts = np.arange(t_out) * stride
        pos = starts[None, None, :] + arg           # absolute time index of each max
        ni, ci = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
        np.add.at(dx, (ni[..., None], ci[..., None], pos), g)
        return (dx,)

    return _result("max_pool1d", out, (x,), vjp)


def global_mean_pool(x: ArrayLike) -> Tensor:
    """[N, C, T] -> [N, C], mean over time."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"global_mean_pool expects [N,C,T], got {x.shape}")
    t = x.shape[2]
    return _result("global_mean_pool", x.data.mean(axis=2), (x,),
                   lambda g: (np.repeat(g[:, :, None], t, axis=2) / t,))


# ---------------------------------------------------------------------------
# losses and similarity (composites over the primitives above, except the
# numerically fused binary cross-entropy)

def l2_normalize(x: ArrayLike, axis: int = -1, eps: float = 1e-8) -> Tensor:
    x = as_tensor(x)
    norm = sqrt(sum_(mul(x, x), axis=axis, keepdims=True) + eps * eps)
    return div(x, norm)


def cosine_similarity(a: ArrayLike, b: ArrayLike, axis: int = -1, eps: float = 1e-8) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    dot = sum_(mul(a, b), axis=axis)
    na = sqrt(sum_(mul(a, a), axis=axis) + eps * eps)
    nb = sqrt(sum_(mul(b, b), axis=axis) + eps * eps)
    return div(dot, mul(na, nb))


def cross_entropy_with_logits(logits: ArrayLike, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy; labels are integer class indices [n]."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy_with_logits expects [n, classes], got {logits.shape}")
    n, c = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match logits rows {n}")
    if labels.min() < 0 or labels.max() >= c:
        raise ShapeError(f"label out of range for {c} classes")
    onehot = np.zeros((n, c), dtype=np.float32)
    onehot[np.arange(n), labels] = 1.0
    return div(sum_(mul(log_softmax(logits, axis=1), onehot)), -float(n))


def binary_cross_entropy_with_logits(logits: ArrayLike, targets: ArrayLike) -> Tensor:
    """Elementwise stable BCE; compose with mean() for a scalar."""
    logits = as_tensor(logits)
    tg = as_tensor(targets).data
    if tg.shape != logits.shape:
        raise ShapeError(f"bce shapes differ: logits {logits.shape}, targets {tg.shape}")
    x = logits.data
    out = np.maximum(x, 0.0) - x * tg + np.log1p(np.exp(-np.abs(x)))
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _result("bce_with_logits", out, (logits,), lambda g: (g * (s - tg),))

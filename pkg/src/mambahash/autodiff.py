"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation produces a new :class:`Tensor` that remembers
its parents and a closure mapping the output gradient to per-parent input
gradients.  :func:`backward` walks that tape in reverse topological order.

Image tensors are channels-last ``(N, H, W, C)``; sequences are ``(B, L, D)``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, NumericError, ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A numpy array plus the bookkeeping needed to differentiate through it.

    ``op``, ``_parents`` and ``_backward`` form the tape node; they are only
    populated when at least one input requires gradients.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # -- metadata -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _nonscalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar -------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self) -> None:
        backward(self)


def _nonscalar(t: Tensor):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _wrap(other, like: Tensor) -> Tensor:
    if isinstance(other, Tensor):
        return other
    return Tensor(np.asarray(other, dtype=like.dtype))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _wrap(b, a)
    return _wrap(a, b), b


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
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


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf on the tape."""
    if loss.size != 1:
        raise ContractError(f"backward() requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward() called on a tensor that does not require grad")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def bw(g):
        return unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)

    return _node(out, (a, b), bw, "div")


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.data**exponent

    def bw(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _node(out, (a,), bw, "pow")


def square(a: Tensor) -> Tensor:
    return _node(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` with numpy batching rules; both operands need ``ndim >= 2``."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner axes disagree ({a.shape[-1]} vs {b.shape[-2]})")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _node(a.data @ b.data, (a, b), bw, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis; weight is ``(in, out)``."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input features {x.shape[-1]} != weight rows {weight.shape[0]}")
    lead = x.shape[:-1]
    flat = x.data.reshape(-1, x.shape[-1])
    out = flat @ weight.data
    if bias is not None:
        out = out + bias.data
    out = out.reshape(*lead, weight.shape[1])

    def bw(g):
        g2 = g.reshape(-1, weight.shape[1])
        gx = (g2 @ weight.data.T).reshape(x.shape)
        gw = flat.T @ g2
        gb = g2.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, bw, "linear")


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _node(out, (a,), bw, "mean")


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from exc
    return _node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def flip(a: Tensor, axis: int) -> Tensor:
    """Reverse ``a`` along ``axis`` (sequence reversal)."""
    return _node(np.flip(a.data, axis).copy(), (a,), lambda g: (np.flip(g, axis).copy(),), "flip")


def permute_axis(a: Tensor, perm: np.ndarray, axis: int) -> Tensor:
    """Gather ``a`` along ``axis`` with a permutation of that axis."""
    perm = np.asarray(perm, dtype=np.intp)
    n = a.shape[axis]
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ShapeError(f"permute_axis: index is not a permutation of axis {axis} (size {n})")
    inv = np.argsort(perm)
    out = np.take(a.data, perm, axis=axis)
    return _node(out, (a,), lambda g: (np.take(g, inv, axis=axis),), "permute")


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]

    basic = all(isinstance(i, (slice, int, type(Ellipsis))) for i in (index if isinstance(index, tuple) else (index,)))

    def bw(g):
        ga = np.zeros_like(a.data)
        if basic:
            ga[index] += g
        else:
            np.add.at(ga, index, g)
        return (ga,)

    return _node(np.array(out), (a,), bw, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(t.ndim) if i != ax
        ):
            raise ShapeError(f"concat: shapes {[x.shape for x in tensors]} disagree off axis {ax}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _node(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw, "concat")


def split(a: Tensor, sections: int, axis: int = -1) -> list[Tensor]:
    n = a.shape[axis]
    if n % sections:
        raise ShapeError(f"split: axis of size {n} not divisible into {sections} groups")
    width = n // sections
    ax = axis % a.ndim
    out = []
    for i in range(sections):
        idx = [slice(None)] * a.ndim
        idx[ax] = slice(i * width, (i + 1) * width)
        out.append(getitem(a, tuple(idx)))
    return out


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # two-branch form avoids overflow in exp for large |x|
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def silu(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    out = a.data * s
    return _node(out, (a,), lambda g: (g * (s + out * (1.0 - s)),), "silu")


def softplus_np(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus(a: Tensor) -> Tensor:
    """``log(1 + e^x)`` in the overflow-free form."""
    return _node(softplus_np(a.data), (a,), lambda g: (g * _sigmoid(a.data),), "softplus")


_SERIES_CUTOFF = 1e-3


def expm1_ratio(a: Tensor) -> Tensor:
    """``(e^z - 1) / z`` with the removable singularity at 0 filled by its series."""
    z = a.data
    small = np.abs(z) < _SERIES_CUTOFF
    zs = np.where(small, 1.0, z)
    em1 = np.expm1(zs)
    out = np.where(small, 1.0 + z / 2 + z * z / 6 + z**3 / 24, em1 / zs)

    def bw(g):
        big = (zs * (em1 + 1.0) - em1) / (zs * zs)
        d = np.where(small, 0.5 + z / 3 + z * z / 8 + z**3 / 30, big)
        return (g * d,)

    return _node(out, (a,), bw, "expm1_ratio")


def stop_gradient_sign(a: Tensor) -> Tensor:
    """``sign(a)`` with ``sign(0) = +1``; never carries gradient."""
    return Tensor(np.where(a.data >= 0, 1.0, -1.0).astype(a.dtype))


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last (channel) axis, then scale and shift."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm: affine params {gamma.shape}/{beta.shape} vs channels {x.shape[-1]}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        gxhat = g * gamma.data
        gx = rstd * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _node(out, (x, gamma, beta), bw, "layer_norm")


# ---------------------------------------------------------------------------
# convolutions (channels-last)
# ---------------------------------------------------------------------------


def _conv_out(size: int, k: int, stride: int, pad: int, name: str, axis: str) -> int:
    span = size + 2 * pad - k
    if span < 0:
        raise ShapeError(f"{name}: kernel {k} exceeds padded {axis} extent {size + 2 * pad}")
    return span // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Dense 2-D convolution. ``x`` is (N,H,W,Cin); ``weight`` is (kh,kw,Cin,Cout)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and weight, got {x.shape} and {weight.shape}")
    n, h, w, cin = x.shape
    kh, kw, wcin, cout = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d: input channels (axis 3) {cin} != weight in-channels (axis 2) {wcin}")
    ho = _conv_out(h, kh, stride, padding, "conv2d", "height")
    wo = _conv_out(w, kw, stride, padding, "conv2d", "width")
    p = padding
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0))) if p else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    # win: (N, Ho, Wo, Cin, kh, kw)
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * ho * wo, kh * kw * cin)
    out = cols @ weight.data.reshape(kh * kw * cin, cout)
    if bias is not None:
        out = out + bias.data
    out = out.reshape(n, ho, wo, cout)

    def bw(g):
        g2 = g.reshape(-1, cout)
        gw = (cols.T @ g2).reshape(weight.shape)
        gcols = (g2 @ weight.data.reshape(-1, cout).T).reshape(n, ho, wo, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += gcols[:, :, :, i, j, :]
        gx = gxp[:, p : p + h, p : p + w, :] if p else gxp
        gb = g2.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, bw, "conv2d")


def depthwise_conv2d(
    x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """Per-channel 2-D convolution. ``x`` is (N,H,W,C); ``weight`` is (kh,kw,C)."""
    if x.ndim != 4 or weight.ndim != 3:
        raise ShapeError(f"depthwise_conv2d: expected 4-D input / 3-D weight, got {x.shape} and {weight.shape}")
    n, h, w, c = x.shape
    kh, kw, wc = weight.shape
    if wc != c:
        raise ShapeError(f"depthwise_conv2d: input channels (axis 3) {c} != weight channels (axis 2) {wc}")
    ho = _conv_out(h, kh, stride, padding, "depthwise_conv2d", "height")
    wo = _conv_out(w, kw, stride, padding, "depthwise_conv2d", "width")
    p = padding
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0))) if p else x.data
    taps = [(i, j) for i in range(kh) for j in range(kw)]

    def tap(arr, i, j):
        return arr[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :]

    out = np.zeros((n, ho, wo, c), dtype=np.result_type(x.data, weight.data))
    for i, j in taps:
        out += tap(xp, i, j) * weight.data[i, j]
    if bias is not None:
        out += bias.data

    def bw(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(weight.data)
        for i, j in taps:
            gw[i, j] = (g * tap(xp, i, j)).sum(axis=(0, 1, 2))
            tap(gxp, i, j)[...] += g * weight.data[i, j]
        gx = gxp[:, p : p + h, p : p + w, :] if p else gxp
        gb = g.sum(axis=(0, 1, 2)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, bw, "depthwise_conv2d")


def channel_conv1d(x: Tensor, weight: Tensor) -> Tensor:
    """Single-filter 1-D convolution along the last axis with same (zero) padding.

    ``weight`` has odd length k; ``out[..., d] = sum_j weight[j] * x[..., d + j - k//2]``.
    """
    (k,) = weight.shape
    if k % 2 == 0:
        raise ShapeError(f"channel_conv1d: kernel size must be odd, got {k}")
    d = x.shape[-1]
    half = k // 2
    pad = [(0, 0)] * (x.ndim - 1) + [(half, half)]
    xp = np.pad(x.data, pad)
    out = np.zeros_like(x.data)
    for j in range(k):
        out += weight.data[j] * xp[..., j : j + d]

    def bw(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(weight.data)
        for j in range(k):
            gw[j] = (g * xp[..., j : j + d]).sum()
            gxp[..., j : j + d] += g * weight.data[j]
        return gxp[..., half : half + d], gw

    return _node(out, (x, weight), bw, "channel_conv1d")


# ---------------------------------------------------------------------------
# linear recurrence
# ---------------------------------------------------------------------------


def scan_recurrence(decay: Tensor, drive: Tensor, readout: Tensor) -> Tensor:
    """Run ``h_t = decay_t * h_{t-1} + drive_t`` from ``h_0 = 0`` and read out ``y_t = <readout_t, h_t>``.

    Shapes: ``decay`` and ``drive`` are (B, L, D, N); ``readout`` is (B, L, N); the
    result is (B, L, D).  Gradients flow to all three inputs.
    """
    if decay.shape != drive.shape or decay.ndim != 4:
        raise ShapeError(f"scan_recurrence: decay {decay.shape} and drive {drive.shape} must be equal 4-D")
    b, length, d, n = decay.shape
    if readout.shape != (b, length, n):
        raise ShapeError(f"scan_recurrence: readout {readout.shape} != {(b, length, n)}")
    a, u, c = decay.data, drive.data, readout.data
    hs = np.empty(np.broadcast_shapes(a.shape, u.shape), dtype=np.result_type(a, u))
    h = np.zeros((b, d, n), dtype=hs.dtype)
    for t in range(length):
        h = a[:, t] * h + u[:, t]
        hs[:, t] = h
    if not np.isfinite(hs).all():
        bad = np.nonzero(~np.isfinite(hs).reshape(b, length, -1).all(axis=(0, 2)))[0][0]
        raise NumericError(f"selective scan state became non-finite at time step {int(bad)}")
    y = np.einsum("bldn,bln->bld", hs, c)

    def bw(g):
        ga = np.empty_like(a)
        gu = np.empty_like(hs)
        gh = np.zeros((b, d, n), dtype=hs.dtype)
        for t in range(length - 1, -1, -1):
            gh = gh + g[:, t, :, None] * c[:, t, None, :]
            gu[:, t] = gh
            if t > 0:
                ga[:, t] = gh * hs[:, t - 1]
            else:
                ga[:, t] = 0.0
            gh = gh * a[:, t]
        gc = np.einsum("bld,bldn->bln", g, hs)
        return ga, gu, gc

    return _node(y, (decay, drive, readout), bw, "scan_recurrence")


def parameters_finite(tensors: Iterable[Tensor]) -> bool:
    return all(np.isfinite(t.data).all() for t in tensors)

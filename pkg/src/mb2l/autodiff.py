"""Minimal reverse-mode automatic differentiation over numpy arrays.

This deliberately covers only what the alignment models need: elementwise
arithmetic, matrix products, 1-d/2-d convolutions, reductions, the
softmax/logsumexp family, and shape surgery.  Gradients accumulate on leaf
tensors created with ``requires_grad=True``; intermediate tensors also carry
``.grad`` during a backward pass but are rebuilt on every forward, so nothing
has to be retained between steps.

All forward math is plain numpy, so dtype follows the inputs: build the graph
from float64 arrays when running finite-difference checks, float32 for
training.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf as _erf, expit as _expit

__all__ = [
    "Tensor",
    "as_tensor",
    "astype",
    "parameter",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "power",
    "power_t",
    "exp",
    "log",
    "sqrt",
    "sigmoid",
    "tanh",
    "erf",
    "gelu",
    "relu",
    "clip",
    "matmul",
    "pairwise_dot",
    "tsum",
    "tmean",
    "tmax",
    "reshape",
    "transpose",
    "swapaxes",
    "getitem",
    "concatenate",
    "softmax",
    "logsumexp",
    "conv1d",
    "depthwise_conv1d",
    "conv2d",
    "avg_pool2d",
]

# (parent, fn) pairs; fn maps the output gradient to this parent's contribution
_Parents = tuple


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: _Parents = ()

    # ---- introspection -------------------------------------------------
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
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:  # pragma: no cover
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # ---- backward ------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)

        # iterative post-order DFS; recursion depth would be fine for these
        # graphs but this keeps deep conv chains safe regardless
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(topo):
            g = node.grad
            if g is None:
                continue
            for parent, fn in node._parents:
                if not parent.requires_grad:
                    continue
                contrib = fn(g)
                parent.grad = contrib if parent.grad is None else parent.grad + contrib

    # ---- operator sugar --------------------------------------------------
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

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _coerce_pair(a, b) -> tuple[Tensor, Tensor]:
    """Tensor-ify a binary-op operand pair.

    Bare scalars adopt the other operand's float dtype so constants like
    ``x * 0.5`` never silently promote a float32 graph to float64.
    """
    if isinstance(a, Tensor) and np.isscalar(b) and np.issubdtype(a.data.dtype, np.floating):
        return a, Tensor(np.asarray(b, dtype=a.data.dtype))
    if isinstance(b, Tensor) and np.isscalar(a) and np.issubdtype(b.data.dtype, np.floating):
        return Tensor(np.asarray(a, dtype=b.data.dtype)), b
    return as_tensor(a), as_tensor(b)


def astype(a, dtype) -> Tensor:
    """Cast dtype in the graph; the gradient is cast back on the way down."""
    a = as_tensor(a)
    src = a.data.dtype
    return _make(a.data.astype(dtype), [(a, lambda g: g.astype(src))])


def parameter(data) -> Tensor:
    """Leaf tensor that receives gradient updates."""
    return Tensor(np.array(data, copy=True), requires_grad=True)


def _make(data: np.ndarray, parents: Sequence[tuple[Tensor, Callable]]) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p, _ in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the parent's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---- elementwise arithmetic ---------------------------------------------


def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    return _make(
        a.data + b.data,
        [
            (a, lambda g: _unbroadcast(g, a.data.shape)),
            (b, lambda g: _unbroadcast(g, b.data.shape)),
        ],
    )


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    return _make(
        a.data - b.data,
        [
            (a, lambda g: _unbroadcast(g, a.data.shape)),
            (b, lambda g: _unbroadcast(-g, b.data.shape)),
        ],
    )


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    return _make(
        a.data * b.data,
        [
            (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
            (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
        ],
    )


def div(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    return _make(
        a.data / b.data,
        [
            (a, lambda g: _unbroadcast(g / b.data, a.data.shape)),
            (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)),
        ],
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, [(a, lambda g: -g)])


def power(a, p: float) -> Tensor:
    """a ** p for a fixed scalar exponent."""
    a = as_tensor(a)
    p = float(p)
    return _make(a.data**p, [(a, lambda g: g * p * a.data ** (p - 1.0))])


def power_t(base, exponent) -> Tensor:
    """base ** exponent with a learnable exponent; base must be >= 0.

    Where base == 0 both partials are forced to 0; that is the right limit
    for exponents > 1 and the upstream relu kills the base gradient at the
    kink anyway.
    """
    a, p = as_tensor(base), as_tensor(exponent)
    pos = a.data > 0
    out = np.where(pos, a.data, 1.0) ** p.data
    out = np.where(pos, out, 0.0)

    def d_base(g):
        d = np.where(pos, p.data * np.where(pos, a.data, 1.0) ** (p.data - 1.0), 0.0)
        return _unbroadcast(g * d, a.data.shape)

    def d_exp(g):
        d = np.where(pos, out * np.log(np.where(pos, a.data, 1.0)), 0.0)
        return _unbroadcast(g * d, p.data.shape)

    return _make(out, [(a, d_base), (p, d_exp)])


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)
    return _make(e, [(a, lambda g: g * e)])


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), [(a, lambda g: g / a.data)])


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    s = np.sqrt(a.data)
    return _make(s, [(a, lambda g: g * 0.5 / s)])


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _expit(a.data)
    return _make(s, [(a, lambda g: g * s * (1.0 - s))])


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _make(t, [(a, lambda g: g * (1.0 - t * t))])


# python-float constants so float32 inputs stay float32
_ERF_SCALE = float(2.0 / np.sqrt(np.pi))
_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def erf(a) -> Tensor:
    a = as_tensor(a)
    return _make(_erf(a.data), [(a, lambda g: g * _ERF_SCALE * np.exp(-a.data * a.data))])


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    out = x * cdf
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return _make(out, [(a, lambda g: g * (cdf + x * pdf))])


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), [(a, lambda g: g * mask)])


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    mask = (a.data > lo) & (a.data < hi)
    return _make(np.clip(a.data, lo, hi), [(a, lambda g: g * mask)])


def tmax(a, axis=None, keepdims=False) -> Tensor:
    """Reduction max; gradient splits evenly across ties."""
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    mask = (a.data == m).astype(a.data.dtype)
    mask /= mask.sum(axis=axis, keepdims=True)
    out = m if keepdims else np.squeeze(m, axis=axis) if axis is not None else m.reshape(())

    def back(g):
        g = np.asarray(g)
        if not keepdims and axis is not None:
            g = np.expand_dims(g, axis)
        return g * mask

    return _make(out, [(a, back)])


# ---- linear algebra -------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul expects tensors with ndim >= 2")

    def d_a(g):
        return _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape)

    def d_b(g):
        return _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)

    return _make(np.matmul(a.data, b.data), [(a, d_a), (b, d_b)])


def pairwise_dot(a, b) -> Tensor:
    """Row-pairwise inner products: (N, d) x (M, d) -> (N, M).

    Uses einsum's fixed summation loop rather than BLAS matmul, so
    pairwise_dot(a, b) and pairwise_dot(b, a).T agree bit for bit.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("pairwise_dot expects (N, d) and (M, d)")

    def d_a(g):
        return np.einsum("nm,md->nd", g, b.data)

    def d_b(g):
        return np.einsum("nm,nd->md", g, a.data)

    return _make(np.einsum("nd,md->nm", a.data, b.data), [(a, d_a), (b, d_b)])


# ---- reductions ------------------------------------------------------------


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.data.shape).copy()

    return _make(out, [(a, back)])


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / out.size

    def back(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.data.shape).copy() / count

    return _make(out, [(a, back)])


# ---- shaping ----------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.data.shape
    return _make(a.data.reshape(shape), [(a, lambda g: g.reshape(orig))])


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _make(np.transpose(a.data, axes), [(a, lambda g: np.transpose(g, inv))])


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, ax1, ax2), [(a, lambda g: np.swapaxes(g, ax1, ax2))])


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def back(g):
        z = np.zeros_like(a.data)
        np.add.at(z, idx, g)
        return z

    return _make(a.data[idx], [(a, back)])


def concatenate(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    parents = []
    for i, t in enumerate(ts):
        def back(g, i=i):
            return np.split(g, splits, axis=axis)[i]

        parents.append((t, back))
    return _make(np.concatenate([t.data for t in ts], axis=axis), parents)


# ---- softmax family ---------------------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return s * (g - (g * s).sum(axis=axis, keepdims=True))

    return _make(s, [(a, back)])


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    # reductions over strided views can take a different summation path than
    # contiguous arrays; force one layout so transposed inputs round identically
    arr = np.ascontiguousarray(a.data)
    m = arr.max(axis=axis, keepdims=True)
    e = np.exp(arr - m)
    tot = e.sum(axis=axis, keepdims=True)
    out = m + np.log(tot)
    soft = e / tot
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def back(g):
        g = np.asarray(g)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return soft * g

    return _make(out, [(a, back)])


# ---- convolutions -----------------------------------------------------------


def _pad_pair(padding, n: int):
    if isinstance(padding, (tuple, list)):
        if len(padding) != n:
            raise ValueError(f"padding must have {n} entries")
        return tuple(int(p) for p in padding)
    return (int(padding),) * n


def conv1d(x, w, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Temporal convolution.  x: (B, Cin, T), w: (k, Cin, Cout) -> (B, Cout, T')."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3:
        raise ValueError("conv1d expects x (B, Cin, T) and w (k, Cin, Cout)")
    k, cin, cout = w.shape
    if x.shape[1] != cin:
        raise ValueError(f"channel mismatch: x has {x.shape[1]}, w expects {cin}")
    (pad,) = _pad_pair(padding, 1)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad))) if pad else x.data
    t_in = xp.shape[2]
    t_out = (t_in - k) // stride + 1
    if t_out < 1:
        raise ValueError("conv1d output length < 1")

    out = np.zeros((x.shape[0], t_out, cout), dtype=x.dtype)
    for tap in range(k):
        sl = xp[:, :, tap : tap + stride * (t_out - 1) + 1 : stride]  # (B, Cin, T')
        out += np.tensordot(sl, w.data[tap], axes=([1], [0]))  # -> (B, T', Cout)
    out = out.swapaxes(1, 2)  # (B, Cout, T')

    def d_x(g):
        gt = g.swapaxes(1, 2)  # (B, T', Cout)
        gxp = np.zeros_like(xp)
        for tap in range(k):
            contrib = np.tensordot(gt, w.data[tap], axes=([2], [1]))  # (B, T', Cin)
            gxp[:, :, tap : tap + stride * (t_out - 1) + 1 : stride] += contrib.swapaxes(1, 2)
        return gxp[:, :, pad : pad + x.shape[2]] if pad else gxp

    def d_w(g):
        gt = g.swapaxes(1, 2)
        gw = np.zeros_like(w.data)
        for tap in range(k):
            sl = xp[:, :, tap : tap + stride * (t_out - 1) + 1 : stride]
            gw[tap] = np.tensordot(sl, gt, axes=([0, 2], [0, 1]))  # (Cin, Cout)
        return gw

    parents = [(x, d_x), (w, d_w)]
    if bias is not None:
        b = as_tensor(bias)
        out = out + b.data[None, :, None]
        parents.append((b, lambda g: g.sum(axis=(0, 2))))
    return _make(out, parents)


def depthwise_conv1d(x, w, stride: int = 1, padding: int = 0) -> Tensor:
    """Per-channel temporal convolution.  x: (B, C, T), w: (C, k) -> (B, C, T')."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError("depthwise_conv1d expects x (B, C, T) and w (C, k)")
    c, k = w.shape
    (pad,) = _pad_pair(padding, 1)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad))) if pad else x.data
    t_out = (xp.shape[2] - k) // stride + 1
    if t_out < 1:
        raise ValueError("depthwise_conv1d output length < 1")

    out = np.zeros((x.shape[0], c, t_out), dtype=x.dtype)
    for tap in range(k):
        out += xp[:, :, tap : tap + stride * (t_out - 1) + 1 : stride] * w.data[None, :, tap : tap + 1]

    def d_x(g):
        gxp = np.zeros_like(xp)
        for tap in range(k):
            gxp[:, :, tap : tap + stride * (t_out - 1) + 1 : stride] += g * w.data[None, :, tap : tap + 1]
        return gxp[:, :, pad : pad + x.shape[2]] if pad else gxp

    def d_w(g):
        gw = np.zeros_like(w.data)
        for tap in range(k):
            sl = xp[:, :, tap : tap + stride * (t_out - 1) + 1 : stride]
            gw[:, tap] = (sl * g).sum(axis=(0, 2))
        return gw

    return _make(out, [(x, d_x), (w, d_w)])


def conv2d(x, w, bias=None, stride: int = 1, padding=0) -> Tensor:
    """Channel-last 2-d convolution.

    x: (B, H, W, Cin), w: (kh, kw, Cin, Cout) -> (B, H', W', Cout).
    Zero padding; (ph, pw) or a single int.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv2d expects x (B, H, W, Cin) and w (kh, kw, Cin, Cout)")
    kh, kw, cin, cout = w.shape
    if x.shape[3] != cin:
        raise ValueError(f"channel mismatch: x has {x.shape[3]}, w expects {cin}")
    ph, pw = _pad_pair(padding, 2)
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else x.data
    h_out = (xp.shape[1] - kh) // stride + 1
    w_out = (xp.shape[2] - kw) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ValueError("conv2d output size < 1")

    def taps(arr, dy, dx):
        return arr[
            :,
            dy : dy + stride * (h_out - 1) + 1 : stride,
            dx : dx + stride * (w_out - 1) + 1 : stride,
            :,
        ]

    out = np.zeros((x.shape[0], h_out, w_out, cout), dtype=x.dtype)
    for dy in range(kh):
        for dx in range(kw):
            out += np.tensordot(taps(xp, dy, dx), w.data[dy, dx], axes=([3], [0]))

    def d_x(g):
        gxp = np.zeros_like(xp)
        for dy in range(kh):
            for dx in range(kw):
                taps(gxp, dy, dx)[...] += np.tensordot(g, w.data[dy, dx], axes=([3], [1]))
        if ph or pw:
            return gxp[:, ph : ph + x.shape[1], pw : pw + x.shape[2], :]
        return gxp

    def d_w(g):
        gw = np.zeros_like(w.data)
        for dy in range(kh):
            for dx in range(kw):
                gw[dy, dx] = np.tensordot(taps(xp, dy, dx), g, axes=([0, 1, 2], [0, 1, 2]))
        return gw

    parents = [(x, d_x), (w, d_w)]
    if bias is not None:
        b = as_tensor(bias)
        out = out + b.data[None, None, None, :]
        parents.append((b, lambda g: g.sum(axis=(0, 1, 2))))
    return _make(out, parents)


def avg_pool2d(x, k: int) -> Tensor:
    """Non-overlapping k x k average pooling on (B, H, W, C)."""
    x = as_tensor(x)
    b, h, w, c = x.shape
    if h % k or w % k:
        raise ValueError(f"avg_pool2d: spatial dims ({h}, {w}) not divisible by {k}")
    out = x.data.reshape(b, h // k, k, w // k, k, c).mean(axis=(2, 4))

    def back(g):
        g = g / (k * k)
        return np.repeat(np.repeat(g, k, axis=1), k, axis=2)

    return _make(out, [(x, back)])

"""Small reverse-mode autodiff over numpy arrays.

Only the operations the navigation networks and the PPO loss need are
provided. Every op records a closure that maps the output gradient to
input gradients; `Tensor.backward` walks the graph once in reverse
topological order.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class GraphReuseError(RuntimeError):
    """backward() called twice on the same recorded graph."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name!r})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if self._consumed:
            raise GraphReuseError("graph already differentiated; run a new forward pass first")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                k = id(p)
                grads[k] = pg if k not in grads else grads[k] + pg
            node._consumed = True
            node._backward = _consumed_backward
            node._parents = ()

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, c):
        return mul(self, 1.0 / c)


def _consumed_backward(g):
    raise GraphReuseError("graph already differentiated; run a new forward pass first")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and reductions

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor(a.data + b.data, _parents=(a, b),
                  _backward=lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a) -> Tensor:
    return Tensor(-a.data, _parents=(a,), _backward=lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    ad, bd = a.data, b.data
    return Tensor(ad * bd, _parents=(a, b),
                  _backward=lambda g: (_unbroadcast(g * bd, sa), _unbroadcast(g * ad, sb)))


def exp(a) -> Tensor:
    out = np.exp(a.data)
    return Tensor(out, _parents=(a,), _backward=lambda g: (g * out,))


def log(a) -> Tensor:
    ad = a.data
    return Tensor(np.log(ad), _parents=(a,), _backward=lambda g: (g / ad,))


def square(a) -> Tensor:
    ad = a.data
    return Tensor(ad * ad, _parents=(a,), _backward=lambda g: (2.0 * g * ad,))


def sum(a, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return Tensor(a.data.sum(axis=axis), _parents=(a,), _backward=back)


def mean(a, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


def minimum(a, b) -> Tensor:
    """Elementwise min; ties send the gradient to `a`."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data
    sa, sb = a.shape, b.shape
    return Tensor(np.where(pick_a, a.data, b.data), _parents=(a, b),
                  _backward=lambda g: (_unbroadcast(g * pick_a, sa), _unbroadcast(g * ~pick_a, sb)))


def clip(a, lo, hi) -> Tensor:
    """Clamp with zero gradient wherever the bound is active."""
    inside = (a.data > lo) & (a.data < hi)
    return Tensor(np.clip(a.data, lo, hi), _parents=(a,), _backward=lambda g: (g * inside,))


def relu(a) -> Tensor:
    mask = a.data > 0
    return Tensor(a.data * mask, _parents=(a,), _backward=lambda g: (g * mask,))


def reshape(a, shape) -> Tensor:
    old = a.shape
    return Tensor(a.data.reshape(shape), _parents=(a,), _backward=lambda g: (g.reshape(old),))


def flatten(a) -> Tensor:
    return reshape(a, (a.shape[0], -1))


def concat(tensors, axis=1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), _parents=tuple(tensors),
                  _backward=lambda g: tuple(np.split(g, cuts, axis=axis)))


def broadcast_batch(a, n: int) -> Tensor:
    """Repeat a batch-of-one tensor n times; gradients are summed back."""
    if a.shape[0] != 1:
        raise ValueError("broadcast_batch expects a leading dimension of 1")
    return Tensor(np.repeat(a.data, n, axis=0), _parents=(a,),
                  _backward=lambda g: (g.sum(axis=0, keepdims=True),))


def take(a, index) -> Tensor:
    """a[i, index[i]] for a 2-D tensor."""
    index = np.asarray(index)
    rows = np.arange(a.shape[0])
    shape = a.shape

    def back(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[rows, index] = g
        return (out,)

    return Tensor(a.data[rows, index], _parents=(a,), _backward=back)


def log_softmax(a, axis=-1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)
    return Tensor(out, _parents=(a,),
                  _backward=lambda g: (g - sm * g.sum(axis=axis, keepdims=True),))


def softmax(a, axis=-1) -> Tensor:
    z = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    s = z / z.sum(axis=axis, keepdims=True)
    return Tensor(s, _parents=(a,),
                  _backward=lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


# ---------------------------------------------------------------------------
# layers

def linear(x, w, b=None) -> Tensor:
    """x @ w + b with w shaped (in, out)."""
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is not None:
        out = out + b.data

    def back(g):
        grads = [g @ wd.T, xd.T @ g]
        if b is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out, _parents=parents, _backward=back)


def conv1d(x, w, b=None, stride=1, padding=0) -> Tensor:
    """Cross-correlation. x: (N, C, L), w: (F, C, K) -> (N, F, Lout)."""
    xd, wd = x.data, w.data
    n, c, length = xd.shape
    f, c2, k = wd.shape
    if c != c2:
        raise ValueError(f"conv1d channel mismatch: input {c}, kernel {c2}")
    if length + 2 * padding < k:
        raise ValueError("conv1d input shorter than kernel")
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    lout = (length + 2 * padding - k) // stride + 1
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride][:, :, :lout]  # (N, C, Lout, K)
    cols = win.transpose(0, 2, 1, 3).reshape(n * lout, c * k)
    wmat = wd.reshape(f, c * k)
    out = (cols @ wmat.T).reshape(n, lout, f).transpose(0, 2, 1)
    if b is not None:
        out = out + b.data[None, :, None]

    def back(g):
        g2 = g.transpose(0, 2, 1).reshape(n * lout, f)
        dw = (g2.T @ cols).reshape(f, c, k)
        dxp = np.zeros_like(xp)
        span = stride * (lout - 1) + 1
        for j in range(k):
            dxp[:, :, j:j + span:stride] += np.einsum("nfl,fc->ncl", g, wd[:, :, j], optimize=True)
        dx = dxp[:, :, padding:padding + length] if padding else dxp
        grads = [dx, dw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(np.ascontiguousarray(out), _parents=parents, _backward=back)


def _im2col2d(xp, kh, kw, stride, ho, wo):
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    n, c = xp.shape[:2]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)


def conv2d(x, w, b=None, stride=1, padding=0, chunk=4) -> Tensor:
    """Cross-correlation. x: (N, C, H, W), w: (F, C, KH, KW) -> (N, F, Ho, Wo).

    Patches are unfolded `chunk` samples at a time to bound memory.
    """
    xd, wd = x.data, w.data
    n, c, h, wi = xd.shape
    f, c2, kh, kw = wd.shape
    if c != c2:
        raise ValueError(f"conv2d channel mismatch: input {c}, kernel {c2}")
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wi + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError("conv2d input smaller than kernel")
    wmat = wd.reshape(f, c * kh * kw)
    out = np.empty((n, f, ho, wo), dtype=np.result_type(xd, wd))
    for s in range(0, n, chunk):
        cols = _im2col2d(xp[s:s + chunk], kh, kw, stride, ho, wo)
        m = len(xp[s:s + chunk])
        out[s:s + m] = (cols @ wmat.T).reshape(m, ho, wo, f).transpose(0, 3, 1, 2)
    if b is not None:
        out += b.data[None, :, None, None]

    def back(g):
        dw = np.zeros((f, c * kh * kw), dtype=g.dtype)
        for s in range(0, n, chunk):
            cols = _im2col2d(xp[s:s + chunk], kh, kw, stride, ho, wo)
            gs = g[s:s + chunk]
            dw += gs.transpose(1, 0, 2, 3).reshape(f, -1) @ cols
        dxp = np.zeros_like(xp)
        sh, sw = stride * (ho - 1) + 1, stride * (wo - 1) + 1
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + sh:stride, j:j + sw:stride] += np.einsum(
                    "nfhw,fc->nchw", g, wd[:, :, i, j], optimize=True)
        dx = dxp[:, :, padding:padding + h, padding:padding + wi] if padding else dxp
        grads = [dx, dw.reshape(wd.shape)]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out, _parents=parents, _backward=back)


def avg_pool2d(x, out_hw: tuple[int, int]) -> Tensor:
    """Average over non-overlapping windows so that H, W shrink to `out_hw`."""
    n, c, h, w = x.shape
    oh, ow = out_hw
    if h % oh or w % ow:
        raise ValueError(f"cannot pool {h}x{w} evenly to {oh}x{ow}")
    kh, kw = h // oh, w // ow
    out = x.data.reshape(n, c, oh, kh, ow, kw).mean(axis=(3, 5))

    def back(g):
        g = np.repeat(np.repeat(g, kh, axis=2), kw, axis=3) / (kh * kw)
        return (g,)

    return Tensor(out, _parents=(x,), _backward=back)

"""Minimal reverse-mode autodiff over dense (batch, channel, H, W) arrays.

Covers exactly the op set the super-resolution network, differentiable
shading, and losses need: 3x3 stride-1 convolution, bilinear up/down
sampling, space-to-depth, warping, and elementwise arithmetic. Tensors
are float32 by default; gradient-check tests run the same ops in
float64.

Graphs are implicit: each op result keeps references to its parents and
a closure computing parent gradients. ``backward`` walks the graph in
reverse topological order exactly once and accumulates gradients into
leaf tensors' ``.grad``.
"""
from __future__ import annotations

import contextlib
from functools import lru_cache

import numpy as np

from .errors import ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._backward_fn = None

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    # -- operators -----------------------------------------------------------
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
        return mul(self, -1.0)

    def __getitem__(self, key):
        return narrow(self, key)

    def backward(self):
        backward(self)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _make(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._backward_fn is not None for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    if grad.shape != shape:
        raise ShapeError(f"cannot reduce gradient {grad.shape} to {shape}")
    return grad


def _check_broadcast(a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError as e:
        raise ShapeError(f"incompatible shapes {a.data.shape} and {b.data.shape}") from e


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a)
    _check_broadcast(a, b)

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a)
    _check_broadcast(a, b)

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a)
    _check_broadcast(a, b)

    def bw(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a)
    _check_broadcast(a, b)

    def bw(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(a.data / b.data, (a, b), bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return _make(np.where(mask, x.data, 0.0).astype(x.data.dtype), (x,), bw)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp with pass-through gradient strictly inside (lo, hi)."""
    inside = (x.data > lo) & (x.data < hi)

    def bw(g):
        return (g * inside,)

    return _make(np.clip(x.data, lo, hi), (x,), bw)


def absolute(x: Tensor) -> Tensor:
    sign = np.sign(x.data)

    def bw(g):
        return (g * sign,)

    return _make(np.abs(x.data), (x,), bw)


def sqrt(x: Tensor) -> Tensor:
    out_data = np.sqrt(x.data)

    def bw(g):
        return (g * (0.5 / out_data),)

    return _make(out_data, (x,), bw)


def power(x: Tensor, p: float) -> Tensor:
    """x**p for a constant exponent."""
    out_data = np.power(x.data, p)

    def bw(g):
        return (g * p * np.power(x.data, p - 1.0),)

    return _make(out_data, (x,), bw)


def lerp(a, b, t) -> Tensor:
    """a + (b - a) * t, elementwise."""
    a = a if isinstance(a, Tensor) else Tensor(a)
    return add(a, mul(sub(b, a), t))


# -- reductions and shape ops -------------------------------------------------

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).astype(x.data.dtype, copy=True),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, x.data.shape).astype(x.data.dtype, copy=True),)

    return _make(out_data, (x,), bw)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod(
        [x.data.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def narrow(x: Tensor, key) -> Tensor:
    """Slice view (basic slices only); gradient scatters back into place."""
    if not isinstance(key, tuple):
        key = (key,)
    for k in key:
        if not isinstance(k, slice):
            raise ShapeError("only slice indexing is supported")

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[key] = g
        return (gx,)

    return _make(x.data[key].copy(), (x,), bw)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def reshape(x: Tensor, shape) -> Tensor:
    def bw(g):
        return (g.reshape(x.data.shape),)

    return _make(x.data.reshape(shape), (x,), bw)


# -- structured ops ----------------------------------------------------------

def _im2col3(xp: np.ndarray, h: int, w: int) -> np.ndarray:
    """Zero-padded input (B, Cin, H+2, W+2) -> (Cin*9, B*H*W) patch
    matrix, ordered to match weight.reshape(Cout, Cin*9)."""
    b_, cin = xp.shape[:2]
    swv = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    return np.ascontiguousarray(swv.transpose(1, 4, 5, 0, 2, 3)).reshape(cin * 9, b_ * h * w)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """3x3 cross-correlation, stride 1, zero padding 1; spatial dims kept.

    x: (B, Cin, H, W), weight: (Cout, Cin, 3, 3), bias: (Cout,).
    Lowered to a single GEMM against the im2col patch matrix; the
    backward pass recomputes the patches instead of keeping them alive.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4D tensors, got {x.data.shape} and {weight.data.shape}")
    b_, cin, h, w = x.data.shape
    cout, cin_w, kh, kw = weight.data.shape
    if (kh, kw) != (3, 3):
        raise ShapeError(f"conv2d kernels must be 3x3, got {kh}x{kw}")
    if cin != cin_w:
        raise ShapeError(f"channel mismatch: input {cin} vs weight {cin_w}")
    if bias.data.shape != (cout,):
        raise ShapeError(f"bias must have shape ({cout},), got {bias.data.shape}")

    w2 = weight.data.reshape(cout, cin * 9)
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = _im2col3(xp, h, w)
    out = (w2 @ cols).reshape(cout, b_, h, w).swapaxes(0, 1)
    out = out + bias.data.reshape(1, cout, 1, 1)

    def bw(g):
        g2 = np.ascontiguousarray(g.swapaxes(0, 1)).reshape(cout, b_ * h * w)
        cols_r = _im2col3(xp, h, w)
        gw = (g2 @ cols_r.T).reshape(cout, cin, 3, 3)
        # scatter patch gradients back channel-major, transpose once
        gr = (w2.T @ g2).reshape(cin, 3, 3, b_, h, w)
        gxp = np.zeros((cin, b_, h + 2, w + 2), dtype=g.dtype)
        for ky in range(3):
            for kx in range(3):
                gxp[:, :, ky:ky + h, kx:kx + w] += gr[:, ky, kx]
        gx = np.ascontiguousarray(gxp[:, :, 1:-1, 1:-1].swapaxes(0, 1))
        gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return _make(out, (x, weight, bias), bw)


@lru_cache(maxsize=64)
def _interp_matrix(n_in: int, factor: int) -> np.ndarray:
    """Dense 1D bilinear upsampling matrix (align_corners=False)."""
    n_out = n_in * factor
    m = np.zeros((n_out, n_in), dtype=np.float64)
    for o in range(n_out):
        src = (o + 0.5) / factor - 0.5
        i0 = int(np.floor(src))
        f = src - i0
        a = min(max(i0, 0), n_in - 1)
        b = min(max(i0 + 1, 0), n_in - 1)
        m[o, a] += 1.0 - f
        m[o, b] += f
    return m


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """Bilinear resampling by 2x or 4x (align_corners=False); constants
    are preserved exactly. Backward is the transpose of the linear map."""
    if factor not in (2, 4):
        raise ShapeError(f"upsample factor must be 2 or 4, got {factor}")
    if x.data.ndim != 4:
        raise ShapeError(f"expected 4D tensor, got shape {x.data.shape}")
    _, _, h, w = x.data.shape
    uh = _interp_matrix(h, factor).astype(x.data.dtype)
    uw = _interp_matrix(w, factor).astype(x.data.dtype)

    out = np.matmul(uh, np.matmul(x.data, uw.T))

    def bw(g):
        return (np.matmul(uh.T, np.matmul(g, uw)),)

    return _make(out, (x,), bw)


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2 (even spatial dims required)."""
    b_, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even spatial dims, got {h}x{w}")
    out = x.data.reshape(b_, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def bw(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return _make(out.astype(x.data.dtype), (x,), bw)


def _s2d_data(a: np.ndarray, block: int) -> np.ndarray:
    b_, c, h, w = a.shape
    hh, ww = h // block, w // block
    return np.ascontiguousarray(
        a.reshape(b_, c, hh, block, ww, block)
         .transpose(0, 1, 3, 5, 2, 4)
         .reshape(b_, c * block * block, hh, ww))


def _d2s_data(a: np.ndarray, block: int) -> np.ndarray:
    b_, cb, hh, ww = a.shape
    c = cb // (block * block)
    return np.ascontiguousarray(
        a.reshape(b_, c, block, block, hh, ww)
         .transpose(0, 1, 4, 2, 5, 3)
         .reshape(b_, c, hh * block, ww * block))


def space_to_depth(x: Tensor, block: int = 4) -> Tensor:
    """Map each block x block spatial tile to channels.

    Output channel index is c*block^2 + by*block + bx (row-major inside
    the tile); invertible and purely a permutation.
    """
    _, _, h, w = x.data.shape
    if h % block or w % block:
        raise ShapeError(f"spatial dims {h}x{w} not divisible by block {block}")

    def bw(g):
        return (_d2s_data(g, block),)

    return _make(_s2d_data(x.data, block), (x,), bw)


def depth_to_space(x: Tensor, block: int = 4) -> Tensor:
    """Inverse of space_to_depth."""
    _, cb, _, _ = x.data.shape
    if cb % (block * block):
        raise ShapeError(f"channels {cb} not divisible by block^2 {block * block}")

    def bw(g):
        return (_s2d_data(g, block),)

    return _make(_d2s_data(x.data, block), (x,), bw)


def warp_bilinear(prev: Tensor, flow: np.ndarray, fill) -> Tensor:
    """Backward warp: out(p) = bilinear_sample(prev, p - flow(p)).

    ``flow`` is a constant (2, H, W) or (B, 2, H, W) array in pixel
    units (dx, dy); source coordinates outside the image use the
    per-channel ``fill`` vector. Differentiable w.r.t. ``prev`` only.
    """
    b_, c, h, w = prev.data.shape
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim == 3:
        flow = np.broadcast_to(flow[None], (b_, 2, h, w))
    if flow.shape != (b_, 2, h, w):
        raise ShapeError(f"flow shape {flow.shape} does not match {(b_, 2, h, w)}")
    fill = np.asarray(fill, dtype=prev.data.dtype).reshape(c)

    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    sx = xs[None] - flow[:, 0]
    sy = ys[None] - flow[:, 1]
    oob = (sx < 0.0) | (sx > w - 1.0) | (sy < 0.0) | (sy > h - 1.0)
    x0f = np.floor(sx)
    y0f = np.floor(sy)
    wx = (sx - x0f).astype(prev.data.dtype)
    wy = (sy - y0f).astype(prev.data.dtype)
    x0 = np.clip(x0f, 0, w - 1).astype(np.int64)
    x1 = np.clip(x0f + 1, 0, w - 1).astype(np.int64)
    y0 = np.clip(y0f, 0, h - 1).astype(np.int64)
    y1 = np.clip(y0f + 1, 0, h - 1).astype(np.int64)

    bidx = np.arange(b_)[:, None, None]
    p = prev.data
    wxc = wx[:, None]  # (B, 1, H, W) so weights broadcast over channels
    wyc = wy[:, None]
    out = ((1 - wyc) * ((1 - wxc) * p[bidx, :, y0, x0].transpose(0, 3, 1, 2)
                        + wxc * p[bidx, :, y0, x1].transpose(0, 3, 1, 2))
           + wyc * ((1 - wxc) * p[bidx, :, y1, x0].transpose(0, 3, 1, 2)
                    + wxc * p[bidx, :, y1, x1].transpose(0, 3, 1, 2)))
    out = np.where(oob[:, None], fill.reshape(1, c, 1, 1), out).astype(prev.data.dtype)

    def bw(g):
        gp = np.zeros_like(prev.data)
        inb = ~oob
        weights = ((1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx), wy * wx)
        corners = ((y0, x0), (y0, x1), (y1, x0), (y1, x1))
        for bi in range(b_):
            m = inb[bi]
            gm = g[bi][:, m]  # (C, N)
            for wgt, (yy, xx) in zip(weights, corners):
                idx = (yy[bi][m] * w + xx[bi][m])
                contrib = gm * wgt[bi][m]
                for ci in range(c):
                    gp[bi, ci] += np.bincount(idx, weights=contrib[ci],
                                              minlength=h * w).reshape(h, w).astype(gp.dtype)
        return (gp,)

    return _make(out, (prev,), bw)


def backward(loss: Tensor):
    """Reverse-mode accumulation from a scalar loss.

    Gradients sum over all use sites; leaves with requires_grad get
    their ``.grad`` filled (accumulating across calls). Deterministic:
    the traversal order is fixed by graph construction order.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward_fn is not None:
            parent_grads = node._backward_fn(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not (p.requires_grad or p._backward_fn is not None):
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg
        elif node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g

"""Differentiable primitives.

Volumetric tensors are laid out ``[C, X, Y, Z]``. Each op computes its
forward value with numpy and returns a closure mapping the upstream
gradient to one gradient per input (``None`` for inputs that need none).
"""
from __future__ import annotations

import numpy as np

from ..errors import DegenerateInstance, InvalidRate, ShapeError, WindowTooLarge
from .core import Tensor, as_tensor, make_result


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot combine shapes {a.shape} and {b.shape}") from exc


# -- elementwise --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), back, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    out = a.data / b.data

    def back(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return make_result(out, (a, b), back, "div")


def abs(x) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    # sign(0) == 0 picks the zero subgradient at ties
    return make_result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def square(x) -> Tensor:
    x = as_tensor(x)
    return make_result(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return make_result(np.where(pos, x.data, 0.0), (x,), lambda g: (np.where(pos, g, 0.0),), "relu")


def prelu(x, slope) -> Tensor:
    """Leaky rectifier with one learnable negative slope per channel (axis 0)."""
    x, slope = as_tensor(x), as_tensor(slope)
    if slope.ndim != 1 or slope.shape[0] != x.shape[0]:
        raise ShapeError(f"prelu slope shape {slope.shape} does not match {x.shape[0]} channels")
    a = slope.data.reshape((-1,) + (1,) * (x.ndim - 1))
    neg = x.data < 0
    out = np.where(neg, a * x.data, x.data)

    def back(g):
        gx = np.where(neg, a * g, g)
        ga = np.where(neg, x.data * g, 0.0).reshape(x.shape[0], -1).sum(axis=1)
        return gx, ga

    return make_result(out, (x, slope), back, "prelu")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return make_result(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return make_result(out, (x,), lambda g: (g / (2.0 * out),), "sqrt")


# -- reductions / structure ---------------------------------------------------

def sum_all(x) -> Tensor:
    x = as_tensor(x)
    return make_result(np.sum(x.data), (x,), lambda g: (np.full(x.shape, float(g)),), "sum_all")


def mean_all(x) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    return make_result(np.mean(x.data), (x,), lambda g: (np.full(x.shape, float(g) / n),), "mean_all")


def concat_channels(tensors) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    spatial = {t.shape[1:] for t in tensors}
    if len(spatial) != 1:
        raise ShapeError(f"cannot concatenate spatial shapes {sorted(spatial)}")
    bounds = np.cumsum([0] + [t.shape[0] for t in tensors])

    def back(g):
        return tuple(g[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return make_result(np.concatenate([t.data for t in tensors], axis=0), tensors, back, "concat")


# -- convolution --------------------------------------------------------------

def conv3d(x, kernel, bias=None, padding: int = 1, stride: int = 1) -> Tensor:
    """Cross-correlation of ``x[Cin,X,Y,Z]`` with ``kernel[Cout,Cin,kx,ky,kz]``.

    Accumulates one tensordot per kernel offset in a fixed order, so the
    result is independent of threading.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 5:
        raise ShapeError(f"conv3d expects [C,X,Y,Z] input and 5D kernel, got {x.shape}, {kernel.shape}")
    cout, cin = kernel.shape[:2]
    if x.shape[0] != cin:
        raise ShapeError(f"conv3d: input has {x.shape[0]} channels, kernel expects {cin}")
    ks = kernel.shape[2:]
    p, s = int(padding), int(stride)
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (p, p))) if p else x.data
    out_dims = tuple((xp.shape[i + 1] - ks[i]) // s + 1 for i in range(3))
    if min(out_dims) < 1:
        raise ShapeError(f"conv3d: kernel {ks} larger than padded input {xp.shape[1:]}")
    offsets = [(i, j, k) for i in range(ks[0]) for j in range(ks[1]) for k in range(ks[2])]

    def window(i, j, k):
        return (slice(None),
                slice(i, i + s * (out_dims[0] - 1) + 1, s),
                slice(j, j + s * (out_dims[1] - 1) + 1, s),
                slice(k, k + s * (out_dims[2] - 1) + 1, s))

    w = kernel.data
    out = np.zeros((cout,) + out_dims)
    for i, j, k in offsets:
        out += np.tensordot(w[:, :, i, j, k], xp[window(i, j, k)], axes=1)
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"conv3d: bias shape {bias.shape} != ({cout},)")
        out += bias.data[:, None, None, None]
        parents.append(bias)

    def back(g):
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(w) if kernel.requires_grad else None
        for i, j, k in offsets:
            sl = window(i, j, k)
            if gxp is not None:
                gxp[sl] += np.tensordot(w[:, :, i, j, k], g, axes=([0], [0]))
            if gw is not None:
                gw[:, :, i, j, k] = np.tensordot(g, xp[sl], axes=([1, 2, 3], [1, 2, 3]))
        if gxp is not None and p:
            gxp = gxp[:, p:-p, p:-p, p:-p]
        grads = [gxp, gw]
        if bias is not None:
            grads.append(g.sum(axis=(1, 2, 3)))
        return grads

    return make_result(out, parents, back, "conv3d")


# -- resampling ---------------------------------------------------------------

def maxpool3d(x, window: int = 2) -> Tensor:
    """Non-overlapping max pool; ties route the gradient to the lowest index in the cell."""
    x = as_tensor(x)
    c, *dims = x.shape
    if any(d % window for d in dims):
        raise ShapeError(f"maxpool3d: spatial dims {tuple(dims)} not divisible by {window}")
    n = [d // window for d in dims]
    cells = (x.data.reshape(c, n[0], window, n[1], window, n[2], window)
             .transpose(0, 1, 3, 5, 2, 4, 6)
             .reshape(c, n[0], n[1], n[2], window ** 3))
    arg = np.argmax(cells, axis=-1)  # first occurrence on ties
    out = np.take_along_axis(cells, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gc = np.zeros_like(cells)
        np.put_along_axis(gc, arg[..., None], g[..., None], axis=-1)
        gx = (gc.reshape(c, n[0], n[1], n[2], window, window, window)
              .transpose(0, 1, 4, 2, 5, 3, 6)
              .reshape(x.shape))
        return (gx,)

    return make_result(out, (x,), back, "maxpool3d")


def upsample_nn(x, factor: int = 2) -> Tensor:
    x = as_tensor(x)
    f = int(factor)
    out = x.data
    for axis in (1, 2, 3):
        out = np.repeat(out, f, axis=axis)

    def back(g):
        c, X, Y, Z = x.shape
        return (g.reshape(c, X, f, Y, f, Z, f).sum(axis=(2, 4, 6)),)

    return make_result(out, (x,), back, "upsample_nn")


# -- normalization / regularization --------------------------------------------

def instance_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Per-channel standardization over spatial voxels (biased variance)."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[0]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"instance_norm: affine params must have shape ({c},)")
    n = x.data[0].size
    if n < 2:
        raise DegenerateInstance("instance norm needs at least 2 spatial voxels per channel")
    axes = tuple(range(1, x.ndim))
    bshape = (c,) + (1,) * (x.ndim - 1)
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def back(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(bshape)
        gx = inv * (gxhat - gxhat.mean(axis=axes, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
        return gx, gg, gb

    return make_result(out, (x, gamma, beta), back, "instance_norm")


def dropout(x, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity in eval mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise InvalidRate(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise InvalidRate("train-mode dropout needs a random stream")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return make_result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# -- windows ------------------------------------------------------------------

def _box_sum_valid(a: np.ndarray, w: int) -> np.ndarray:
    """Sum over every w^3 window that fits inside the last three axes."""
    out = a
    for axis in range(a.ndim - 3, a.ndim):
        c = np.cumsum(out, axis=axis)
        pad = [(0, 0)] * a.ndim
        pad[axis] = (1, 0)
        c = np.pad(c, pad)
        n = out.shape[axis]
        out = np.take(c, np.arange(w, n + 1), axis=axis) - np.take(c, np.arange(0, n - w + 1), axis=axis)
    return out


def _box_spread(g: np.ndarray, w: int, full_shape: tuple) -> np.ndarray:
    """Adjoint of :func:`_box_sum_valid`: add each window value back over its window."""
    out = g
    for axis in range(g.ndim - 3, g.ndim):
        n = full_shape[axis]
        pad = [(0, 0)] * g.ndim
        pad[axis] = (w - 1, w - 1)
        c = np.cumsum(np.pad(out, pad), axis=axis)
        pad_c = [(0, 0)] * g.ndim
        pad_c[axis] = (1, 0)
        c = np.pad(c, pad_c)
        out = np.take(c, np.arange(w, n + w), axis=axis) - np.take(c, np.arange(0, n), axis=axis)
    return out


def box_mean(x, window: int) -> Tensor:
    """Mean over every ``window``^3 cube fully inside the last three axes."""
    x = as_tensor(x)
    w = int(window)
    if x.ndim < 3 or any(d < w for d in x.shape[-3:]):
        raise WindowTooLarge(f"window {w} does not fit spatial dims {x.shape[-3:]}")
    scale = 1.0 / w ** 3
    out = _box_sum_valid(x.data, w) * scale
    return make_result(out, (x,), lambda g: (_box_spread(g, w, x.shape) * scale,), "box_mean")

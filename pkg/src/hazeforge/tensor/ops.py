"""Differentiable ops over rank-4 tensors.

Convolutions use im2col/col2im from :mod:`hazeforge.kernels`; all other
ops are plain numpy. Every op keeps the input dtype.
"""

import numpy as np

from ..kernels import col2im, im2col
from .core import ShapeError, Tensor, record


def _check_same(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _conv_out(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D cross-correlation with zero padding.

    weight is (out_ch, in_ch, k, k); bias is any tensor with out_ch elements.
    """
    b, c, h, w = x.shape
    oc, ic, k, k2 = weight.shape
    if k != k2:
        raise ShapeError(f"conv2d: kernel must be square, got {weight.shape}")
    if ic != c:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {ic}")
    if bias is not None and bias.size != oc:
        raise ShapeError(f"conv2d: bias has {bias.size} elements, expected {oc}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: invalid stride={stride} padding={padding}")
    out_h, out_w = _conv_out(h, k, stride, padding), _conv_out(w, k, stride, padding)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"conv2d: {k}x{k} kernel does not fit {h}x{w} input with padding {padding}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = im2col(xp, k, stride, out_h, out_w).reshape(b, c * k * k, out_h * out_w)
    wmat = weight.data.reshape(oc, -1)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data.reshape(1, oc, 1)
    out = out.reshape(b, oc, out_h, out_w)
    hp, wp = h + 2 * padding, w + 2 * padding

    def backward_fn(g):
        g2 = g.reshape(b, oc, out_h * out_w)
        dw = None
        if weight.requires_grad:
            dw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        dx = None
        if x.requires_grad:
            dcols = np.matmul(wmat.T, g2).reshape(b, c, k, k, out_h, out_w)
            dxp = col2im(dcols, hp, wp, stride)
            dx = dxp[:, :, padding : padding + h, padding : padding + w]
        db = None if bias is None else g.sum(axis=(0, 2, 3)).reshape(bias.shape)
        return dx, dw, db

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record("conv2d", out, inputs, backward_fn)


def conv2d_transpose(x, weight, bias=None, stride=1, padding=0, output_padding=0):
    """Adjoint of :func:`conv2d` for the same weight and geometry.

    weight is (in_ch, out_ch, k, k) from this op's point of view, i.e. the
    same array a conv2d mapping out_ch -> in_ch would use. Output size is
    ``(H - 1) * stride - 2 * padding + k + output_padding``.
    """
    b, c, h, w = x.shape
    ic, oc, k, k2 = weight.shape
    if k != k2:
        raise ShapeError(f"conv2d_transpose: kernel must be square, got {weight.shape}")
    if ic != c:
        raise ShapeError(f"conv2d_transpose: input has {c} channels, weight expects {ic}")
    if bias is not None and bias.size != oc:
        raise ShapeError(f"conv2d_transpose: bias has {bias.size} elements, expected {oc}")
    if stride < 1 or padding < 0 or not 0 <= output_padding < max(stride, 1):
        raise ShapeError(
            f"conv2d_transpose: invalid stride={stride} padding={padding} output_padding={output_padding}"
        )
    out_h = (h - 1) * stride - 2 * padding + k + output_padding
    out_w = (w - 1) * stride - 2 * padding + k + output_padding
    if out_h < 1 or out_w < 1:
        raise ShapeError("conv2d_transpose: empty output")
    hp, wp = out_h + 2 * padding, out_w + 2 * padding

    wmat = weight.data.reshape(ic, oc * k * k)
    xf = x.data.reshape(b, c, h * w)
    cols = np.matmul(wmat.T, xf).reshape(b, oc, k, k, h, w)
    full = col2im(cols, hp, wp, stride)
    out = np.ascontiguousarray(full[:, :, padding : padding + out_h, padding : padding + out_w])
    if bias is not None:
        out += bias.data.reshape(1, oc, 1, 1)

    def backward_fn(g):
        gp = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        gcols = im2col(gp, k, stride, h, w).reshape(b, oc * k * k, h * w)
        dx = np.matmul(wmat, gcols).reshape(x.shape) if x.requires_grad else None
        dw = None
        if weight.requires_grad:
            dw = np.matmul(xf, gcols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        db = None if bias is None else g.sum(axis=(0, 2, 3)).reshape(bias.shape)
        return dx, dw, db

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record("conv2d_transpose", out, inputs, backward_fn)


def instance_norm(x, eps=1e-5):
    """Normalize each (batch, channel) slice to zero mean and unit variance."""
    if x.shape[2] * x.shape[3] < 1:
        raise ShapeError("instance_norm: empty spatial extent")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=(2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = centered * inv_std

    def backward_fn(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gxm = (g * xhat).mean(axis=(2, 3), keepdims=True)
        return ((g - gm - xhat * gxm) * inv_std,)

    return record("instance_norm", xhat, (x,), backward_fn)


def relu(x):
    mask = x.data > 0
    return record("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def leaky_relu(x, slope=0.2):
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return record("leaky_relu", x.data * scale, (x,), lambda g: (g * scale,))


def tanh(x):
    y = np.tanh(x.data)
    return record("tanh", y, (x,), lambda g: (g * (1 - y * y),))


def activation(x, kind, slope=None):
    """Dispatch by name: ``relu``, ``leaky_relu`` (needs ``slope``) or ``tanh``."""
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        if slope is None:
            raise ValueError("leaky_relu needs a slope")
        return leaky_relu(x, slope)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


def add(a, b):
    _check_same(a, b, "add")
    return record("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    _check_same(a, b, "sub")
    return record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def abs(x):
    # subgradient 0 at 0
    sign = np.sign(x.data)
    return record("abs", np.abs(x.data), (x,), lambda g: (g * sign,))


def square(x):
    return record("square", x.data * x.data, (x,), lambda g: (2 * x.data * g,))


def scalar_mul(x, s):
    s = x.dtype.type(s)
    return record("scalar_mul", x.data * s, (x,), lambda g: (g * s,))


def scalar_add(x, s):
    return record("scalar_add", x.data + x.dtype.type(s), (x,), lambda g: (g,))


def sum(x):
    """Sum of all elements as a 1x1x1x1 tensor."""
    out = x.data.sum(dtype=np.float64).astype(x.dtype).reshape(1, 1, 1, 1)
    return record("sum", out, (x,), lambda g: (np.broadcast_to(g.reshape(()), x.shape).copy(),))


def mean(x):
    """Mean of all elements as a 1x1x1x1 tensor."""
    n = x.size
    out = (x.data.sum(dtype=np.float64) / n).astype(x.dtype).reshape(1, 1, 1, 1)

    def backward_fn(g):
        return (np.full(x.shape, g.reshape(()) / n, dtype=x.dtype),)

    return record("mean", out, (x,), backward_fn)


def concat_batch(tensors):
    """Stack tensors along the batch axis."""
    tensors = list(tensors)
    sizes = [t.shape[0] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=0)

    def backward_fn(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(tensors)))

    return record("concat_batch", out, tuple(tensors), backward_fn)


__all__ = [
    "Tensor",
    "conv2d",
    "conv2d_transpose",
    "instance_norm",
    "relu",
    "leaky_relu",
    "tanh",
    "activation",
    "add",
    "sub",
    "abs",
    "square",
    "scalar_mul",
    "scalar_add",
    "sum",
    "mean",
    "concat_batch",
]

"""Differentiable primitives.

Every function here takes tensors (or array-likes, treated as constants),
computes the forward value with numpy, and records a backward rule on the
active tape when any input requires grad.
"""

import numpy as np

from .. import _kernels
from ..errors import ShapeError
from .tensor import Tensor, as_tensor, make_output

_GELU_C = 0.7978845608028654  # sqrt(2 / pi)
_GELU_A = 0.044715


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _const_like(x, ref):
    """Promote a python scalar or array to a constant tensor of ``ref``'s dtype."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=ref.dtype))


def _binary_args(a, b):
    if isinstance(a, Tensor):
        return a, _const_like(b, a)
    if isinstance(b, Tensor):
        return _const_like(a, b), b
    return as_tensor(a), as_tensor(b)


def add(a, b):
    a, b = _binary_args(a, b)
    _broadcast_shape("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_output(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = _binary_args(a, b)
    _broadcast_shape("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_output(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = _binary_args(a, b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_output(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = _binary_args(a, b)
    _broadcast_shape("div", a, b)

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return make_output(a.data / b.data, (a, b), bw, "div")


def scale(x, c):
    x = as_tensor(x)
    c = float(c)
    return make_output(x.data * x.dtype.type(c), (x,), lambda g: (g * x.dtype.type(c),), "scale")


def matmul(a, b):
    a, b = _binary_args(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: {exc}") from None

    def bw(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return make_output(out, (a, b), bw, "matmul")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return make_output(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return make_output(y, (x,), lambda g: (g * (1 - y * y),), "tanh")


def gelu(x):
    """tanh approximation of GELU."""
    # numpy's SIMD tanh beats a numba loop here, so this stays numpy-only
    x = as_tensor(x)
    d = x.data
    d2 = d * d
    t = np.tanh(_GELU_C * d * (1 + _GELU_A * d2))
    y = 0.5 * d * (1 + t)
    dy = 0.5 * (1 + t) + 0.5 * d * (1 - t * t) * (_GELU_C * (1 + 3 * _GELU_A * d2))
    return make_output(y, (x,), lambda g: (g * dy,), "gelu")


def exp(x):
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        # overflow surfaces as a NumericError from make_output
        y = np.exp(x.data)
    return make_output(y, (x,), lambda g: (g * y,), "exp")


def clamp(x, lo, hi):
    """Clip to [lo, hi]; gradient passes only where the input is strictly inside."""
    x = as_tensor(x)
    inside = (x.data > lo) & (x.data < hi)
    return make_output(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clamp")


def layernorm(x, gamma, beta, eps=1e-5):
    """Normalise over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layernorm: affine params must have shape ({d},), got {gamma.shape}, {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        red = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=red) if gamma.requires_grad else None
        gbeta = g.sum(axis=red) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return make_output(out.astype(x.dtype), (x, gamma, beta), bw, "layernorm")


def instance_norm(x, eps=1e-5):
    """Normalise each (sample, channel) plane of an NCHW tensor to zero mean, unit variance."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"instance_norm expects NCHW, got shape {x.shape}")
    flat = x.data.reshape(x.shape[0], x.shape[1], -1)
    mu = flat.mean(axis=-1, keepdims=True)
    xc = flat - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def bw(g):
        g = g.reshape(xhat.shape)
        gx = inv * (g - g.mean(axis=-1, keepdims=True) - xhat * (g * xhat).mean(axis=-1, keepdims=True))
        return (gx.reshape(x.shape),)

    return make_output(xhat.reshape(x.shape).astype(x.dtype), (x,), bw, "instance_norm")


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_output(y, (x,), bw, "softmax")


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def bw(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return make_output(y, (x,), bw, "log_softmax")


def embedding_lookup(table, ids):
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding ids out of range [0, {table.shape[0]})")

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return make_output(table.data[ids], (table,), bw, "embedding_lookup")


def reshape(x, shape):
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} into {shape}") from None
    return make_output(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None):
    x = as_tensor(x)
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"bad transpose axes {axes} for rank {x.ndim}")
    inv = tuple(np.argsort(axes))
    return make_output(np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inv),), "transpose")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_output(out, tuple(tensors), bw, "concat")


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_output(np.asarray(out, dtype=x.dtype), (x,), bw, "sum")


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return ((np.broadcast_to(g, x.shape) / x.dtype.type(n)).astype(x.dtype),)

    return make_output(np.asarray(out, dtype=x.dtype), (x,), bw, "mean")


def _is_basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice)) or i is None or i is Ellipsis for i in items)


def index(x, idx):
    """numpy-style indexing (basic slices or integer arrays)."""
    x = as_tensor(x)
    out = np.ascontiguousarray(x.data[idx])
    basic = _is_basic_index(idx)

    def bw(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[idx] += g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return make_output(out, (x,), bw, "index")


def conv2d(x, weight, bias=None, stride=1, pad=0):
    """2-D cross-correlation on (N, C, H, W) input with (O, C, k, k) weights."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, cw, k, k2 = weight.shape
    if cw != c or k != k2:
        raise ShapeError(f"conv2d: weight {weight.shape} incompatible with input {x.shape}")
    ho, wo = _kernels.conv_out_size(h, k, stride, pad), _kernels.conv_out_size(w, k, stride, pad)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: input {x.shape} too small for kernel {k}")
    cols = _kernels.im2col(x.data, k, stride, pad)
    wmat = weight.data.reshape(o, c * k * k)
    out = np.matmul(cols, wmat.T)  # (n, ho*wo, o); one GEMM per sample
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({o},)")
        out = out + bias.data
    out = np.ascontiguousarray(out.transpose(0, 2, 1)).reshape(n, o, ho, wo)
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.reshape(n, o, ho * wo).transpose(0, 2, 1)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.tensordot(g2, cols, axes=([0, 1], [0, 1])).reshape(weight.shape)
        if x.requires_grad:
            gx = _kernels.col2im(np.matmul(g2, wmat), x.shape, k, stride, pad)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return make_output(out, inputs, bw, "conv2d")


def nearest_upsample2x(x):
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"nearest_upsample2x expects (N, C, H, W), got {x.shape}")
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    n, c, h, w = x.shape

    def bw(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return make_output(out, (x,), bw, "nearest_upsample2x")


PRIMITIVES = (
    "add",
    "sub",
    "mul",
    "matmul",
    "conv2d",
    "nearest_upsample2x",
    "relu",
    "tanh",
    "gelu",
    "layernorm",
    "softmax",
    "embedding_lookup",
    "reshape",
    "concat",
    "mean",
    "sum",
    "scale",
)


def primitive_forward(kind, *inputs, **kwargs):
    """Dispatch by op-kind name, e.g. ``primitive_forward("conv2d", x, w, stride=2, pad=1)``."""
    if kind not in PRIMITIVES:
        raise ValueError(f"unknown primitive {kind!r}")
    return globals()[kind](*inputs, **kwargs)

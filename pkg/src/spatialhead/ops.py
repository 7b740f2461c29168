"""Differentiable operations.

Each public function accepts Tensors or graph Nodes (see
:func:`spatialhead.autodiff.apply`). Spatial ops use channels-last layout and
valid padding throughout; convolution is cross-correlation.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import apply, register
from .errors import ConfigError, DataError, ShapeError
from .tensor import binary_shapes, matmul_kernel, normalize_axes, reduce_mean_kernel, reshape_kernel

# ---------------------------------------------------------------------------
# tensor primitives


def _reshape_fwd(x, *, shape):
    return reshape_kernel(x, shape).copy(), x.shape


register("reshape", _reshape_fwd, lambda g, in_shape: [g.reshape(in_shape)])


def reshape(x, shape: Sequence[int]):
    return apply("reshape", x, shape=tuple(int(d) for d in shape))


def _reduce_mean_fwd(x, *, axes):
    axes = normalize_axes(x.ndim, axes)
    return reduce_mean_kernel(x, axes), (x.shape, axes)


def _reduce_mean_adj(g, saved):
    in_shape, axes = saved
    count = int(np.prod([in_shape[a] for a in axes])) if axes else 1
    g = np.expand_dims(g, axes) if axes else g
    return [np.broadcast_to(g / g.dtype.type(count), in_shape).copy()]


register("reduce_mean", _reduce_mean_fwd, _reduce_mean_adj)


def reduce_mean(x, axes: Sequence[int]):
    return apply("reduce_mean", x, axes=tuple(axes))


def _sum_fwd(x):
    return np.asarray(x.sum()), x.shape


register("sum", _sum_fwd, lambda g, in_shape: [np.broadcast_to(g, in_shape).copy()])


def sum_all(x):
    return apply("sum", x)


def _matmul_fwd(a, b):
    return matmul_kernel(a, b), (a, b)


register("matmul", _matmul_fwd, lambda g, s: [g @ s[1].T, s[0].T @ g])


def matmul(a, b):
    return apply("matmul", a, b)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def _add_fwd(a, b):
    binary_shapes(a, b, "add")
    return a + b, (a.shape, b.shape)


def _sub_fwd(a, b):
    binary_shapes(a, b, "sub")
    return a - b, (a.shape, b.shape)


def _mul_fwd(a, b):
    binary_shapes(a, b, "mul")
    return a * b, (a, b)


register("add", _add_fwd, lambda g, s: [_unbroadcast(g, s[0]), _unbroadcast(g, s[1])])
register("sub", _sub_fwd, lambda g, s: [_unbroadcast(g, s[0]), -_unbroadcast(g, s[1])])
register(
    "mul",
    _mul_fwd,
    lambda g, s: [_unbroadcast(g * s[1], s[0].shape), _unbroadcast(g * s[0], s[1].shape)],
)


def add(a, b):
    return apply("add", a, b)


def sub(a, b):
    return apply("sub", a, b)


def mul(a, b):
    return apply("mul", a, b)


def _max_scalar_fwd(x, *, s):
    return np.maximum(x, x.dtype.type(s)), x > s


register("max_with_scalar", _max_scalar_fwd, lambda g, mask: [g * mask])


def max_with_scalar(x, s: float):
    return apply("max_with_scalar", x, s=float(s))


def relu(x):
    return apply("max_with_scalar", x, s=0.0)


def _scale_fwd(x, *, s):
    return x * x.dtype.type(s), s


register("scale", _scale_fwd, lambda g, s: [g * g.dtype.type(s)])


def scale(x, s: float):
    return apply("scale", x, s=float(s))


# ---------------------------------------------------------------------------
# layers


def _windows(x, kh, kw, stride=1):
    """View of shape [n, h', w', c, kh, kw] over valid windows."""
    n, h, w, c = x.shape
    if kh > h or kw > w:
        raise ShapeError(f"kernel {kh}x{kw} larger than input {h}x{w}")
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))
    if stride > 1:
        win = win[:, ::stride, ::stride]
    return win


def conv_output_side(side: int, kernel: int, stride: int = 1) -> int:
    if kernel > side:
        raise ShapeError(f"kernel {kernel} larger than input side {side}")
    return (side - kernel) // stride + 1


def _conv2d_fwd(x, k, b=None, *, stride=1):
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"conv2d expects x [n,h,w,c] and kernel [kh,kw,ci,co], got {x.shape}, {k.shape}")
    kh, kw, ci, co = k.shape
    if x.shape[3] != ci:
        raise ShapeError(f"conv2d input has {x.shape[3]} channels, kernel expects {ci}")
    if b is not None and b.shape != (co,):
        raise ShapeError(f"conv2d bias shape {b.shape} != ({co},)")
    win = _windows(x, kh, kw, stride)
    out = np.einsum("nhwcij,ijco->nhwo", win, k, optimize=True)
    if b is not None:
        out = out + b
    return out, (x, k, b is not None, stride)


def _conv2d_adj(g, saved):
    x, k, has_bias, stride = saved
    kh, kw, _, _ = k.shape
    ho, wo = g.shape[1], g.shape[2]
    win = _windows(x, kh, kw, stride)
    gk = np.einsum("nhwcij,nhwo->ijco", win, g, optimize=True)
    gx = np.zeros_like(x)
    for i in range(kh):
        for j in range(kw):
            gx[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride, :] += g @ k[i, j].T
    grads = [gx, gk]
    if has_bias:
        grads.append(g.sum(axis=(0, 1, 2)))
    return grads


register("conv2d", _conv2d_fwd, _conv2d_adj)


def conv2d(x, kernel, bias=None, stride: int = 1):
    """Valid cross-correlation. ``kernel`` is [kh, kw, c_in, c_out]."""
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    return apply("conv2d", x, kernel, bias, stride=int(stride))


def _dw_fwd(x, k, b=None):
    if x.ndim != 4 or k.ndim != 3:
        raise ShapeError(f"depthwise_conv2d expects x [n,h,w,c] and kernel [kh,kw,c], got {x.shape}, {k.shape}")
    kh, kw, c = k.shape
    if x.shape[3] != c:
        raise ShapeError(f"depthwise kernel has {c} channels, input has {x.shape[3]}")
    if b is not None and b.shape != (c,):
        raise ShapeError(f"depthwise bias shape {b.shape} != ({c},)")
    win = _windows(x, kh, kw)
    out = np.einsum("nhwcij,ijc->nhwc", win, k, optimize=True)
    if b is not None:
        out = out + b
    return out, (x, k, b is not None)


def _dw_adj(g, saved):
    x, k, has_bias = saved
    kh, kw, _ = k.shape
    ho, wo = g.shape[1], g.shape[2]
    win = _windows(x, kh, kw)
    gk = np.einsum("nhwcij,nhwc->ijc", win, g, optimize=True)
    gx = np.zeros_like(x)
    for i in range(kh):
        for j in range(kw):
            gx[:, i : i + ho, j : j + wo, :] += g * k[i, j]
    grads = [gx, gk]
    if has_bias:
        grads.append(g.sum(axis=(0, 1, 2)))
    return grads


register("depthwise_conv2d", _dw_fwd, _dw_adj)


def depthwise_conv2d(x, kernel, bias=None):
    """Per-channel valid cross-correlation, stride 1. ``kernel`` is [kh, kw, c]."""
    return apply("depthwise_conv2d", x, kernel, bias)


def pooled_side(side: int, k: int) -> int:
    if k < 1:
        raise ConfigError("pool kernel must be >= 1")
    if k > side:
        raise ShapeError(f"pool kernel {k} larger than side {side}")
    return side // k


def _avg_pool_fwd(x, *, k):
    n, h, w, c = x.shape
    ho, wo = pooled_side(h, k), pooled_side(w, k)
    blocks = x[:, : ho * k, : wo * k, :].reshape(n, ho, k, wo, k, c)
    return blocks.sum(axis=(2, 4)) / x.dtype.type(k * k), (x.shape, k)


def _avg_pool_adj(g, saved):
    (n, h, w, c), k = saved
    ho, wo = g.shape[1], g.shape[2]
    gx = np.zeros((n, h, w, c), dtype=g.dtype)
    spread = np.broadcast_to((g / g.dtype.type(k * k))[:, :, None, :, None, :], (n, ho, k, wo, k, c))
    gx[:, : ho * k, : wo * k, :] = spread.reshape(n, ho * k, wo * k, c)
    return [gx]


register("avg_pool2d", _avg_pool_fwd, _avg_pool_adj)


def avg_pool2d(x, k: int):
    """Mean over disjoint k x k windows; stride = k, no padding, ragged edge dropped."""
    shape = x.shape
    if len(shape) != 4:
        raise ShapeError(f"avg_pool2d expects [n,h,w,c], got {shape}")
    return apply("avg_pool2d", x, k=int(k))


def _gap_fwd(x):
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects [n,h,w,c], got {x.shape}")
    return reduce_mean_kernel(x, (1, 2)), x.shape


def _gap_adj(g, in_shape):
    _, h, w, _ = in_shape
    return [np.broadcast_to((g / g.dtype.type(h * w))[:, None, None, :], in_shape).copy()]


register("global_avg_pool", _gap_fwd, _gap_adj)


def global_avg_pool(x):
    return apply("global_avg_pool", x)


def _wsum_fwd(x, k):
    if x.ndim != 4 or k.shape != x.shape[1:3]:
        raise ShapeError(f"spatial kernel {k.shape} does not match feature map {x.shape}")
    return np.einsum("nhwc,hw->nc", x, k, optimize=True), (x, k)


def _wsum_adj(g, saved):
    x, k = saved
    gx = g[:, None, None, :] * k[None, :, :, None]
    gk = np.einsum("nhwc,nc->hw", x, g, optimize=True)
    return [gx, gk]


register("spatial_weighted_sum", _wsum_fwd, _wsum_adj)


def spatial_weighted_sum(x, kernel):
    """One [h, w] weight set shared by every channel: out[n, c] = sum_hw x * kernel."""
    return apply("spatial_weighted_sum", x, kernel)


def _dense_fwd(x, w, b=None):
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: x {x.shape} incompatible with W {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"dense: bias {b.shape} != ({w.shape[1]},)")
    out = x @ w
    if b is not None:
        out = out + b
    return out, (x, w, b is not None)


def _dense_adj(g, saved):
    x, w, has_bias = saved
    grads = [g @ w.T, x.T @ g]
    if has_bias:
        grads.append(g.sum(axis=0))
    return grads


register("dense", _dense_fwd, _dense_adj)


def dense(x, weight, bias=None):
    return apply("dense", x, weight, bias)


def flatten(x):
    shape = x.shape
    return reshape(x, (shape[0], int(np.prod(shape[1:]))))


def _dropout_fwd(x, *, p, mode, rng):
    if mode == "infer" or p == 0.0:
        return x.copy(), None
    keep = rng.random(x.shape) >= p
    mask = keep.astype(x.dtype) / x.dtype.type(1.0 - p)
    return x * mask, mask


register("dropout", _dropout_fwd, lambda g, mask: [g if mask is None else g * mask])


def dropout(x, p: float, mode: str = "infer", rng: np.random.Generator | None = None):
    """Inverted dropout. The mask is drawn once at forward time and reused by the adjoint."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {p}")
    if mode not in ("train", "infer"):
        raise ConfigError(f"dropout mode must be train or infer, got {mode!r}")
    if mode == "train" and p > 0.0 and rng is None:
        raise ConfigError("train-mode dropout needs an rng")
    return apply("dropout", x, p=float(p), mode=mode, rng=rng)


def _xent_fwd(logits, *, labels):
    if logits.ndim != 2:
        raise ShapeError(f"logits must be [n, k], got {logits.shape}")
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"label out of range [0, {k})")
    top = logits.argmax(axis=1)
    z = logits - logits[np.arange(n), top][:, None]
    # the max entry contributes exactly 1; log1p over the rest keeps tiny losses accurate
    e = np.exp(z)
    e[np.arange(n), top] = 0.0
    logsum = np.log1p(e.sum(axis=1))
    logp = z - logsum[:, None]
    loss = -logp[np.arange(n), labels].sum() / logits.dtype.type(n)
    return np.asarray(loss, dtype=logits.dtype), (np.exp(logp), labels)


def _xent_adj(g, saved):
    probs, labels = saved
    n = probs.shape[0]
    d = probs.copy()
    d[np.arange(n), labels] -= 1.0
    return [d * (g / probs.dtype.type(n))]


register("softmax_cross_entropy", _xent_fwd, _xent_adj)


def softmax_cross_entropy(logits, labels):
    """Batch-mean of -log softmax(logits)[label], max-subtracted for stability."""
    return apply("softmax_cross_entropy", logits, labels=np.asarray(labels, dtype=np.int64))

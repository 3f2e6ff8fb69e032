"""Dense-tensor primitives: padding, convolution, pooling, normalization,
and the elementwise/decoder operations, each with an explicit backward.

Tensors are contiguous numpy arrays in N x C x (D x) H x W layout, float32
or float64. Operations are pure: they never mutate their inputs, and
repeated evaluation on identical inputs is bit-identical.

2D convolution/pooling reuse the 3D kernels through a depth-1 lift, so a
single accumulation order (input channel, then kernel offsets, row-major)
covers both ranks.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError

_DEBUG = os.environ.get("ACS3D_DEBUG", "") == "1"

SUPPORTED_DTYPES = (np.float32, np.float64)


def _check_finite(name, arr):
    if _DEBUG and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{name}: non-finite values produced")
    return arr


def _check_dtype(name, arr):
    if arr.dtype.type not in SUPPORTED_DTYPES:
        raise ShapeError(f"{name}: dtype must be float32 or float64, got {arr.dtype}")


def as_pairs(padding, ndim):
    """Normalize padding to per-axis (before, after) pairs."""
    if isinstance(padding, (int, np.integer)):
        return ((int(padding), int(padding)),) * ndim
    padding = tuple(padding)
    if len(padding) != ndim:
        raise ShapeError(f"expected {ndim} padding entries, got {len(padding)}")
    out = []
    for p in padding:
        if isinstance(p, (int, np.integer)):
            out.append((int(p), int(p)))
        else:
            lo, hi = p
            out.append((int(lo), int(hi)))
    return tuple(out)


def _as_tuple(v, ndim, name):
    if isinstance(v, (int, np.integer)):
        return (int(v),) * ndim
    v = tuple(int(x) for x in v)
    if len(v) != ndim:
        raise ShapeError(f"expected {ndim} {name} entries, got {len(v)}")
    return v


def out_extent(i, k, s, padding, d=1):
    """Output extent of a strided, dilated correlation along one axis."""
    lo, hi = padding if not isinstance(padding, (int, np.integer)) else (padding, padding)
    span = d * (k - 1) + 1
    padded = i + lo + hi
    if span > padded:
        raise ConfigError(f"effective kernel {span} exceeds padded extent {padded}")
    o = (padded - span) // s + 1
    if o <= 0:
        raise ConfigError(f"non-positive output extent {o}")
    return o


@dataclass(frozen=True)
class ConvConfig:
    """Kernel extents plus per-axis stride/padding/dilation and channels."""

    kernel: tuple
    stride: tuple
    padding: tuple  # per-axis (before, after)
    dilation: tuple
    in_channels: int
    out_channels: int

    @staticmethod
    def make(kernel, in_channels, out_channels, stride=1, padding=0, dilation=1):
        kernel = tuple(int(k) for k in kernel)
        n = len(kernel)
        cfg = ConvConfig(
            kernel=kernel,
            stride=_as_tuple(stride, n, "stride"),
            padding=as_pairs(padding, n),
            dilation=_as_tuple(dilation, n, "dilation"),
            in_channels=int(in_channels),
            out_channels=int(out_channels),
        )
        if any(k < 1 for k in cfg.kernel) or any(s < 1 for s in cfg.stride) or any(d < 1 for d in cfg.dilation):
            raise ConfigError(f"kernel/stride/dilation must be positive: {cfg}")
        if any(lo < 0 or hi < 0 for lo, hi in cfg.padding):
            raise ConfigError(f"padding must be non-negative: {cfg.padding}")
        return cfg

    @staticmethod
    def cubic(k, in_channels, out_channels, stride=1, padding=0, dilation=1):
        return ConvConfig.make((k, k, k), in_channels, out_channels, stride, padding, dilation)

    @staticmethod
    def planar(k, in_channels, out_channels, stride=1, padding=0, dilation=1):
        return ConvConfig.make((k, k), in_channels, out_channels, stride, padding, dilation)

    @property
    def spatial_dims(self):
        return len(self.kernel)

    def out_shape(self, spatial_extents):
        if len(spatial_extents) != self.spatial_dims:
            raise ShapeError(
                f"config has {self.spatial_dims} spatial axes, input has {len(spatial_extents)}"
            )
        return tuple(
            out_extent(i, k, s, p, d)
            for i, k, s, p, d in zip(spatial_extents, self.kernel, self.stride, self.padding, self.dilation)
        )


def pad(x, pads, value=0.0):
    """Zero-interior constant padding; ``pads`` is per-axis (before, after)."""
    pads = tuple(tuple(p) for p in pads)
    if len(pads) != x.ndim:
        raise ShapeError(f"pads rank {len(pads)} != tensor rank {x.ndim}")
    if any(lo < 0 or hi < 0 for lo, hi in pads):
        raise ShapeError(f"pad amounts must be >= 0, got {pads}")
    if not np.isfinite(value):
        raise ShapeError("pad value must be finite")
    if all(lo == 0 and hi == 0 for lo, hi in pads):
        return x.copy()
    return np.pad(x, pads, mode="constant", constant_values=value)


def _pad_value(x, pads, value):
    """Padding used internally where -inf borders are legitimate (max pool)."""
    if all(lo == 0 and hi == 0 for lo, hi in pads):
        return x
    return np.pad(x, pads, mode="constant", constant_values=value)


def _lift2d(x, w, cfg):
    """Insert a unit depth axis so the 3D kernels serve the 2D case."""
    x5 = x[:, :, None]
    w5 = w[:, :, None]
    cfg5 = ConvConfig(
        kernel=(1,) + cfg.kernel,
        stride=(1,) + cfg.stride,
        padding=((0, 0),) + cfg.padding,
        dilation=(1,) + cfg.dilation,
        in_channels=cfg.in_channels,
        out_channels=cfg.out_channels,
    )
    return x5, w5, cfg5


def _conv_check(x, w, cfg):
    if x.ndim != cfg.spatial_dims + 2:
        raise ShapeError(f"input rank {x.ndim} does not match {cfg.spatial_dims} spatial axes")
    if x.shape[1] != cfg.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, config expects {cfg.in_channels}")
    if w.shape != (cfg.out_channels, cfg.in_channels) + cfg.kernel:
        raise ShapeError(
            f"kernel shape {w.shape} != {(cfg.out_channels, cfg.in_channels) + cfg.kernel}"
        )
    if x.dtype != w.dtype:
        raise ShapeError(f"input dtype {x.dtype} != kernel dtype {w.dtype}")
    _check_dtype("conv input", x)


def conv(x, w, bias, cfg):
    """Cross-correlation (no kernel flip) over 2 or 3 spatial axes."""
    _conv_check(x, w, cfg)
    cfg.out_shape(x.shape[2:])  # validates extents
    squeeze = x.ndim == 4
    if squeeze:
        x, w, cfg = _lift2d(x, w, cfg)
    xp = _pad_value(x, ((0, 0), (0, 0)) + cfg.padding, 0.0)
    y = kernels.conv3d_fwd(xp, w, cfg.stride, cfg.dilation)
    if bias is not None:
        bias = np.asarray(bias)
        if bias.shape != (cfg.out_channels,):
            raise ShapeError(f"bias shape {bias.shape} != ({cfg.out_channels},)")
        y += bias.astype(y.dtype).reshape(1, -1, 1, 1, 1)
    if squeeze:
        y = y[:, :, 0]
    return _check_finite("conv", y)


def conv_backward(x, w, cfg, grad_out):
    """Gradients of sum(grad_out * conv(x, w, b)) w.r.t. x, w, and b."""
    _conv_check(x, w, cfg)
    expected = (x.shape[0], cfg.out_channels) + cfg.out_shape(x.shape[2:])
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} != {expected}")
    squeeze = x.ndim == 4
    if squeeze:
        x, w, cfg = _lift2d(x, w, cfg)
        grad_out = grad_out[:, :, None]
    grad_out = np.ascontiguousarray(grad_out)
    pads = ((0, 0), (0, 0)) + cfg.padding
    xp = _pad_value(x, pads, 0.0)
    gw = kernels.conv3d_grad_w(xp, grad_out, w.shape[2:], cfg.stride, cfg.dilation)
    gxp = kernels.conv3d_grad_x(grad_out, w, xp.shape, cfg.stride, cfg.dilation)
    gx = unpad(gxp, pads)
    gb = grad_out.sum(axis=(0, 2, 3, 4), dtype=grad_out.dtype)
    if squeeze:
        gx = gx[:, :, 0]
        gw = gw[:, :, 0]
    return gx, gw, gb


def unpad(x, pads):
    """Inverse of :func:`pad`: slice away per-axis (before, after) margins."""
    sl = tuple(slice(lo, x.shape[i] - hi if hi else None) for i, (lo, hi) in enumerate(pads))
    return x[sl].copy()


def pool3d(x, mode, window, stride=None, padding=0):
    """Max/avg pooling over the three spatial axes.

    Average pooling divides by the full window size, padding included.
    Max pooling pads with -inf so borders never win; its backward routes
    the gradient to the first maximal element in scan order.
    """
    if x.ndim != 5:
        raise ShapeError(f"pool3d expects a 5D tensor, got rank {x.ndim}")
    _check_dtype("pool3d input", x)
    window = _as_tuple(window, 3, "window")
    if any(k < 1 for k in window):
        raise ConfigError(f"window extents must be >= 1, got {window}")
    stride = window if stride is None else _as_tuple(stride, 3, "stride")
    pads = ((0, 0), (0, 0)) + as_pairs(padding, 3)
    padded = [e + lo + hi for e, (lo, hi) in zip(x.shape[2:], pads[2:])]
    if any(k > p for k, p in zip(window, padded)):
        raise ConfigError(f"pool window {window} larger than padded input {tuple(padded)}")
    if mode == "max":
        xp = _pad_value(x, pads, -np.inf)
        y, idx = kernels.maxpool3d_fwd(xp, window, stride)
        cache = ("max", window, stride, pads, xp.shape, idx)
    elif mode == "avg":
        xp = _pad_value(x, pads, 0.0)
        y = kernels.avgpool3d_fwd(xp, window, stride)
        cache = ("avg", window, stride, pads, xp.shape, None)
    else:
        raise ConfigError(f"unknown pool mode {mode!r}")
    return _check_finite("pool3d", y), cache


def pool3d_backward(cache, grad_out):
    mode, window, stride, pads, xp_shape, idx = cache
    if mode == "max":
        gxp = kernels.maxpool3d_grad(np.ascontiguousarray(grad_out), idx, xp_shape)
    else:
        gxp = kernels.avgpool3d_grad(np.ascontiguousarray(grad_out), window, stride, xp_shape)
    return unpad(gxp, pads)


def batchnorm(x, gamma, beta, running_mean, running_var, eps, momentum, mode):
    """Per-channel normalization over all non-channel axes.

    Identical per-channel parameters serve 2D and 3D inputs. Train mode
    normalizes with biased batch statistics and returns running stats
    updated as (1 - momentum) * old + momentum * batch.
    Returns (y, new_running_mean, new_running_var, cache).
    """
    c = x.shape[1]
    for name, v in (("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)):
        if np.asarray(v).shape != (c,):
            raise ShapeError(f"{name} has shape {np.asarray(v).shape}, expected ({c},)")
    if mode not in ("train", "eval"):
        raise ConfigError(f"unknown batchnorm mode {mode!r}")
    axes = (0,) + tuple(range(2, x.ndim))
    shape = (1, c) + (1,) * (x.ndim - 2)
    if mode == "train":
        mu = x.mean(axis=axes, dtype=x.dtype)
        var = ((x - mu.reshape(shape)) ** 2).mean(axis=axes, dtype=x.dtype)
        new_rm = ((1.0 - momentum) * running_mean + momentum * mu).astype(x.dtype)
        new_rv = ((1.0 - momentum) * running_var + momentum * var).astype(x.dtype)
    else:
        mu = np.asarray(running_mean, dtype=x.dtype)
        var = np.asarray(running_var, dtype=x.dtype)
        new_rm, new_rv = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu.reshape(shape)) * inv_std.reshape(shape)
    y = np.asarray(gamma, dtype=x.dtype).reshape(shape) * xhat + np.asarray(beta, dtype=x.dtype).reshape(shape)
    m = x.size // c
    cache = (mode, xhat, inv_std.astype(x.dtype), np.asarray(gamma, dtype=x.dtype), axes, shape, m)
    return _check_finite("batchnorm", y), new_rm, new_rv, cache


def batchnorm_backward(cache, grad_out):
    mode, xhat, inv_std, gamma, axes, shape, m = cache
    ggamma = (grad_out * xhat).sum(axis=axes, dtype=grad_out.dtype)
    gbeta = grad_out.sum(axis=axes, dtype=grad_out.dtype)
    gxhat = grad_out * gamma.reshape(shape)
    if mode == "eval":
        gx = gxhat * inv_std.reshape(shape)
    else:
        s1 = gxhat.sum(axis=axes, dtype=grad_out.dtype).reshape(shape)
        s2 = (gxhat * xhat).sum(axis=axes, dtype=grad_out.dtype).reshape(shape)
        gx = inv_std.reshape(shape) * (gxhat - (s1 + xhat * s2) / m)
    return gx.astype(grad_out.dtype), ggamma, gbeta


def relu(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(mask, grad_out):
    return grad_out * mask


def add(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return a + b


def concat_channels(parts):
    """Concatenate along the channel axis; other extents must agree."""
    base = None
    for p in parts:
        key = p.shape[:1] + p.shape[2:]
        if base is None:
            base = key
        elif key != base and p.shape[1] != 0:
            raise ShapeError(f"concat: non-channel extents differ: {p.shape}")
    return np.concatenate([p for p in parts if p.shape[1] != 0], axis=1)


def concat_channels_backward(grad_out, channel_sizes):
    grads, at = [], 0
    for c in channel_sizes:
        grads.append(grad_out[:, at : at + c].copy())
        at += c
    return grads


def upsample_nearest(x, factors):
    """Replicate each element ``factor`` times along the given spatial axes."""
    factors = _as_tuple(factors, x.ndim - 2, "factors")
    y = x
    for i, f in enumerate(factors):
        if f > 1:
            y = np.repeat(y, f, axis=2 + i)
    return y


def upsample_nearest_backward(grad_out, factors):
    factors = _as_tuple(factors, grad_out.ndim - 2, "factors")
    g = grad_out
    for i, f in enumerate(factors):
        if f > 1:
            ax = 2 + i
            shp = g.shape[:ax] + (g.shape[ax] // f, f) + g.shape[ax + 1 :]
            g = g.reshape(shp).sum(axis=ax + 1, dtype=g.dtype)
    return g


def global_avg_pool(x):
    """Mean over all spatial axes; returns an (N, C) matrix."""
    return x.mean(axis=tuple(range(2, x.ndim)), dtype=x.dtype)


def global_avg_pool_backward(grad_out, in_shape):
    m = int(np.prod(in_shape[2:]))
    g = grad_out.reshape(grad_out.shape + (1,) * (len(in_shape) - 2))
    return np.broadcast_to(g / m, in_shape).astype(grad_out.dtype)


def linear(x, w, bias=None):
    """Affine map over flattened channel features: (N, F) @ (G, F)^T."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: incompatible shapes {x.shape}, {w.shape}")
    y = x @ w.T
    if bias is not None:
        y = y + bias.reshape(1, -1)
    return y.astype(x.dtype)


def linear_backward(x, w, grad_out):
    gx = (grad_out @ w).astype(x.dtype)
    gw = (grad_out.T @ x).astype(x.dtype)
    gb = grad_out.sum(axis=0, dtype=x.dtype)
    return gx, gw, gb

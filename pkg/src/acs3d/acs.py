"""View-based 3D convolutions built from a shared 2D kernel.

A single 2D kernel bank of shape (Co, Ci, K, K) is split by output channel
into three parts and applied in three orthogonal orientations:

    view "a": kernel K x K x 1  (planes span depth/height, unit width axis)
    view "c": kernel K x 1 x K  (planes span depth/width,  unit height axis)
    view "s": kernel 1 x K x K  (planes span height/width, unit depth axis)

The anatomical labels are just names for the orientations; the kernel
shapes above are the contract. Outputs of the three view convolutions are
concatenated along the channel axis, so the stored parameter count equals
the 2D layer's exactly.

Every view convolution must produce the same spatial shape a full
K x K x K convolution would. The two K-extent axes reuse the reference
padding; the unit axis gets a signed total T = (O - 1) * s + 1 - I split
as (T // 2, T - T // 2), where negative amounts crop the input instead of
padding it. For stride 1 this cropping equals trimming the convolution
output symmetrically at the end of the computation.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels, ops
from .errors import ConfigError, ShapeError

VIEWS = ("a", "c", "s")

# Spatial axis (0=depth, 1=height, 2=width) that carries extent 1 per view.
UNIT_AXIS = {"a": 2, "c": 1, "s": 0}


def split_channels(out_channels):
    """Partition output channels into (a, c, s) parts of ~Co/3 each.

    The remainder goes one channel at a time to views in the fixed order
    a, then c, then s, which keeps conversion and weight transfer
    deterministic.
    """
    if out_channels < 1:
        raise ShapeError(f"out_channels must be >= 1, got {out_channels}")
    base, r = divmod(int(out_channels), 3)
    return (base + (1 if r > 0 else 0), base + (1 if r > 1 else 0), base)


@dataclass
class AcsKernel:
    """A shared 2D kernel bank plus its output-channel split and bias."""

    w2d: np.ndarray                     # (Co, Ci, K, K)
    split: tuple = None                 # (Co_a, Co_c, Co_s)
    bias: np.ndarray = None             # (Co,) or None

    def __post_init__(self):
        w = np.asarray(self.w2d)
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ShapeError(f"w2d must be (Co, Ci, K, K), got {w.shape}")
        self.w2d = w
        if self.split is None:
            self.split = split_channels(w.shape[0])
        self.split = tuple(int(c) for c in self.split)
        if len(self.split) != 3 or any(c < 0 for c in self.split):
            raise ShapeError(f"split must be three counts >= 0, got {self.split}")
        if sum(self.split) != w.shape[0]:
            raise ShapeError(f"split {self.split} does not sum to Co={w.shape[0]}")
        if self.bias is not None:
            self.bias = np.asarray(self.bias)
            if self.bias.shape != (w.shape[0],):
                raise ShapeError(f"bias shape {self.bias.shape} != ({w.shape[0]},)")

    @property
    def out_channels(self):
        return self.w2d.shape[0]

    @property
    def in_channels(self):
        return self.w2d.shape[1]

    @property
    def k(self):
        return self.w2d.shape[2]

    def param_count(self):
        """Stored kernel elements: Co * Ci * K^2, independent of the split."""
        return int(self.w2d.size)


@dataclass
class SoftWeights:
    """Three learnable logits; softmax turns them into view weights."""

    logits: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.float64))

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.shape != (3,):
            raise ShapeError(f"logits must have shape (3,), got {self.logits.shape}")

    def alphas(self):
        e = np.exp(self.logits - self.logits.max())
        return e / e.sum()


def make_view_kernels(kernel):
    """Reshape the split 2D kernel into its three 3D orientations.

    Returns views into ``w2d`` (no copies): rows [0, Co_a) as
    (Co_a, Ci, K, K, 1), the next Co_c rows as (Co_c, Ci, K, 1, K) and the
    rest as (Co_s, Ci, 1, K, K).
    """
    ca, cc, cs = kernel.split
    w = kernel.w2d
    wa = w[:ca, :, :, :, None]
    wc = w[ca : ca + cc, :, :, None, :]
    ws = w[ca + cc :, :, None, :, :]
    return wa, wc, ws


def _check_acs_cfg(cfg, k):
    if len(set(cfg.kernel)) != 1 or cfg.kernel[0] != k:
        raise ConfigError(f"config kernel {cfg.kernel} must be cubic {k}x{k}x{k}")
    if any(lo != hi for lo, hi in cfg.padding):
        raise ConfigError(f"view padding requires symmetric reference padding, got {cfg.padding}")


def view_padding(in_extents, cfg, unit_axis):
    """Per-axis (before, after) pads for one view convolution.

    The reference output shape is the full-kernel 3D convolution's. On the
    two K-extent axes the pads equal the reference padding. On the unit
    axis the signed total T = (O - 1) * s + 1 - I is split as
    (T // 2, T - T // 2); negative components mean cropping the input.
    """
    in_extents = tuple(int(i) for i in in_extents)
    _check_acs_cfg(cfg, cfg.kernel[0])
    ref = cfg.out_shape(in_extents)
    pads = []
    for ax in range(3):
        if ax == unit_axis:
            t = (ref[ax] - 1) * cfg.stride[ax] + 1 - in_extents[ax]
            lo = t // 2
            pads.append((lo, t - lo))
        else:
            pads.append(cfg.padding[ax])
    return tuple(pads)


def _apply_signed(x, spatial_pads):
    """Pad (positive) or crop (negative) the three spatial axes."""
    sl = [slice(None), slice(None)]
    pos = [(0, 0), (0, 0)]
    for (lo, hi), ext in zip(spatial_pads, x.shape[2:]):
        sl.append(slice(-lo if lo < 0 else 0, ext + hi if hi < 0 else ext))
        pos.append((max(lo, 0), max(hi, 0)))
    y = x[tuple(sl)]
    if any(p != (0, 0) for p in pos):
        y = np.pad(y, pos)
    return np.ascontiguousarray(y)


def _unapply_signed(g, spatial_pads, orig_spatial):
    """Adjoint of :func:`_apply_signed`: grads back onto the original extents."""
    sl = [slice(None), slice(None)]
    pos = [(0, 0), (0, 0)]
    for (lo, hi), ext in zip(spatial_pads, g.shape[2:]):
        sl.append(slice(lo if lo > 0 else 0, ext - hi if hi > 0 else ext))
        pos.append((max(-lo, 0), max(-hi, 0)))
    y = g[tuple(sl)]
    if any(p != (0, 0) for p in pos):
        y = np.pad(y, pos)
    assert y.shape[2:] == tuple(orig_spatial)
    return y


def _view_dilation(cfg, unit_axis):
    return tuple(1 if ax == unit_axis else d for ax, d in enumerate(cfg.dilation))


def _check_input(x, cfg):
    if x.ndim != 5:
        raise ShapeError(f"expected a 5D input, got rank {x.ndim}")
    if x.shape[1] != cfg.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, config expects {cfg.in_channels}")


def _view_conv(x, w_view, cfg, unit_axis):
    pads = view_padding(x.shape[2:], cfg, unit_axis)
    xv = _apply_signed(x, pads)
    w_view = np.ascontiguousarray(w_view.astype(x.dtype, copy=False))
    return kernels.conv3d_fwd(xv, w_view, cfg.stride, _view_dilation(cfg, unit_axis))


def acs_conv(x, kernel, cfg):
    """Split-kernel view convolution; output channels ordered (a, c, s)."""
    _check_input(x, cfg)
    _check_acs_cfg(cfg, kernel.k)
    if cfg.out_channels != kernel.out_channels or cfg.in_channels != kernel.in_channels:
        raise ShapeError("config channels do not match the kernel")
    views = make_view_kernels(kernel)
    parts = []
    for w_view, name in zip(views, VIEWS):
        if w_view.shape[0] == 0:
            parts.append(np.zeros((x.shape[0], 0) + cfg.out_shape(x.shape[2:]), dtype=x.dtype))
            continue
        parts.append(_view_conv(x, w_view, cfg, UNIT_AXIS[name]))
    y = ops.concat_channels(parts)
    if kernel.bias is not None:
        y += kernel.bias.astype(y.dtype).reshape(1, -1, 1, 1, 1)
    return y


def acs_conv_backward(x, kernel, cfg, grad_out):
    """Gradients to the input, the shared 2D kernel, and the bias.

    The 2D kernel gradient is assembled by inverting the split/reshape:
    each view's kernel gradient drops its unit axis and lands back on its
    output-channel rows.
    """
    _check_input(x, cfg)
    expected = (x.shape[0], kernel.out_channels) + cfg.out_shape(x.shape[2:])
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} != {expected}")
    views = make_view_kernels(kernel)
    gouts = ops.concat_channels_backward(grad_out, kernel.split)
    gx = np.zeros_like(x)
    gw2d = np.zeros_like(kernel.w2d)
    row = 0
    for w_view, name, g_view in zip(views, VIEWS, gouts):
        cv = w_view.shape[0]
        if cv == 0:
            continue
        unit = UNIT_AXIS[name]
        pads = view_padding(x.shape[2:], cfg, unit)
        xv = _apply_signed(x, pads)
        dil = _view_dilation(cfg, unit)
        g_view = np.ascontiguousarray(g_view)
        w_c = np.ascontiguousarray(w_view.astype(x.dtype, copy=False))
        gw_v = kernels.conv3d_grad_w(xv, g_view, w_c.shape[2:], cfg.stride, dil)
        gx_v = kernels.conv3d_grad_x(g_view, w_c, xv.shape, cfg.stride, dil)
        gx += _unapply_signed(gx_v, pads, x.shape[2:])
        gw2d[row : row + cv] = np.squeeze(gw_v, axis=2 + unit)
        row += cv
    gbias = grad_out.sum(axis=(0, 2, 3, 4), dtype=grad_out.dtype)
    return gx, gw2d, gbias


def _full_views(w2d):
    """All-channel orientations of the 2D kernel, materialized on the fly."""
    return (w2d[:, :, :, :, None], w2d[:, :, :, None, :], w2d[:, :, None, :, :])


def _full_view_outputs(x, w2d, cfg):
    outs = []
    for w_view, name in zip(_full_views(w2d), VIEWS):
        outs.append(_view_conv(x, w_view, cfg, UNIT_AXIS[name]))
    return outs


def mean_acs_conv(x, w2d, cfg):
    """Average of the three full-channel view convolutions."""
    _check_input(x, cfg)
    _check_acs_cfg(cfg, w2d.shape[2])
    ya, yc, ys = _full_view_outputs(x, w2d, cfg)
    return (ya + yc + ys) / 3


def _full_views_backward(x, w2d, cfg, view_grads):
    gx = np.zeros_like(x)
    gw2d = np.zeros_like(w2d)
    for w_view, name, g_view in zip(_full_views(w2d), VIEWS, view_grads):
        unit = UNIT_AXIS[name]
        pads = view_padding(x.shape[2:], cfg, unit)
        xv = _apply_signed(x, pads)
        dil = _view_dilation(cfg, unit)
        g_view = np.ascontiguousarray(g_view)
        w_c = np.ascontiguousarray(w_view.astype(x.dtype, copy=False))
        gw_v = kernels.conv3d_grad_w(xv, g_view, w_c.shape[2:], cfg.stride, dil)
        gx_v = kernels.conv3d_grad_x(g_view, w_c, xv.shape, cfg.stride, dil)
        gx += _unapply_signed(gx_v, pads, x.shape[2:])
        gw2d += np.squeeze(gw_v, axis=2 + unit)
    return gx, gw2d


def mean_acs_conv_backward(x, w2d, cfg, grad_out):
    g = grad_out / 3
    return _full_views_backward(x, w2d, cfg, (g, g, g))


def soft_acs_conv(x, w2d, soft, cfg):
    """Softmax-weighted sum of the three full-channel view convolutions.

    Computed as (e_a*Ya + e_c*Yc + e_s*Ys) / sum(e), with e the shifted
    exponentials of the logits, so zero logits reproduce the plain
    three-view average bit for bit.
    """
    _check_input(x, cfg)
    _check_acs_cfg(cfg, w2d.shape[2])
    outs = _full_view_outputs(x, w2d, cfg)
    e = np.exp(soft.logits - soft.logits.max()).astype(x.dtype)
    acc = e[0] * outs[0]
    acc += e[1] * outs[1]
    acc += e[2] * outs[2]
    return acc / e.sum()


def soft_acs_conv_backward(x, w2d, soft, cfg, grad_out):
    """Gradients to the input, the 2D kernel, and the three logits."""
    outs = _full_view_outputs(x, w2d, cfg)
    alphas = soft.alphas()
    r = np.array([np.sum(grad_out * y, dtype=np.float64) for y in outs])
    glogits = alphas * (r - float(alphas @ r))
    view_grads = [(alphas[v] * grad_out).astype(x.dtype) for v in range(3)]
    gx, gw2d = _full_views_backward(x, w2d, cfg, view_grads)
    return gx, gw2d, glogits

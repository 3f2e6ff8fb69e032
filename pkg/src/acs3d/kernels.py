"""Hot numeric kernels with numba and pure-numpy implementations.

Every function takes a pre-padded input ``xp`` (max pooling expects -inf
padding, everything else zero padding) and returns freshly allocated
outputs. The active implementation is chosen per call via
:mod:`acs3d.backend`.

The per-output-element accumulation order is fixed in both backends:
input channel first, then kernel offsets in row-major order. Forward
convolution results are therefore bitwise identical across backends and
across thread counts.
"""

import numpy as np

from . import backend

_nb = None


def _numba_mod():
    global _nb
    if _nb is None:
        from . import _kernels_numba

        _nb = _kernels_numba
    return _nb


def _out_extents(in_extents, kernel, stride, dilation):
    out = []
    for i, k, s, d in zip(in_extents, kernel, stride, dilation):
        span = d * (k - 1) + 1
        if span > i:
            raise ValueError(f"kernel span {span} exceeds padded extent {i}")
        out.append((i - span) // s + 1)
    return tuple(out)


def conv3d_fwd(xp, w, stride, dilation):
    n, ci = xp.shape[:2]
    co = w.shape[0]
    od, oh, ow = _out_extents(xp.shape[2:], w.shape[2:], stride, dilation)
    out = np.zeros((n, co, od, oh, ow), dtype=xp.dtype)
    if out.size == 0:
        return out
    if backend.using_numba():
        _numba_mod().conv3d_fwd(xp, w, out, *stride, *dilation)
        return out
    sd, sh, sw = stride
    dd, dh, dw = dilation
    kd, kh, kw = w.shape[2:]
    for c in range(ci):
        for a in range(kd):
            for b in range(kh):
                for g in range(kw):
                    sub = xp[:, c,
                             a * dd : a * dd + (od - 1) * sd + 1 : sd,
                             b * dh : b * dh + (oh - 1) * sh + 1 : sh,
                             g * dw : g * dw + (ow - 1) * sw + 1 : sw]
                    out += sub[:, None] * w[None, :, c, a, b, g, None, None, None]
    return out


def conv3d_grad_w(xp, gout, kernel, stride, dilation):
    ci = xp.shape[1]
    co = gout.shape[1]
    kd, kh, kw = kernel
    gw = np.zeros((co, ci, kd, kh, kw), dtype=xp.dtype)
    if gout.size == 0 or gw.size == 0:
        return gw
    if backend.using_numba():
        _numba_mod().conv3d_grad_w(xp, gout, gw, *stride, *dilation)
        return gw
    sd, sh, sw = stride
    dd, dh, dw = dilation
    od, oh, ow = gout.shape[2:]
    for c in range(ci):
        for a in range(kd):
            for b in range(kh):
                for g in range(kw):
                    sub = xp[:, c,
                             a * dd : a * dd + (od - 1) * sd + 1 : sd,
                             b * dh : b * dh + (oh - 1) * sh + 1 : sh,
                             g * dw : g * dw + (ow - 1) * sw + 1 : sw]
                    gw[:, c, a, b, g] = np.tensordot(gout, sub, axes=([0, 2, 3, 4], [0, 1, 2, 3]))
    return gw


def conv3d_grad_x(gout, w, xp_shape, stride, dilation):
    gxp = np.zeros(xp_shape, dtype=gout.dtype)
    if gout.size == 0:
        return gxp
    if backend.using_numba():
        if stride == (1, 1, 1):
            # Full correlation with channel-transposed, spatially flipped
            # weights reuses the (faster) forward kernel.
            spans = [d * (k - 1) for d, k in zip(dilation, w.shape[2:])]
            gp = np.pad(gout, ((0, 0), (0, 0)) + tuple((s, s) for s in spans))
            wt = np.ascontiguousarray(w[:, :, ::-1, ::-1, ::-1].swapaxes(0, 1))
            out = conv3d_fwd(gp, wt, (1, 1, 1), dilation)
            assert out.shape == xp_shape
            return out
        _numba_mod().conv3d_grad_x(gxp, gout, w, *stride, *dilation)
        return gxp
    sd, sh, sw = stride
    dd, dh, dw = dilation
    kd, kh, kw = w.shape[2:]
    od, oh, ow = gout.shape[2:]
    for a in range(kd):
        for b in range(kh):
            for g in range(kw):
                contrib = np.einsum("nodhw,oc->ncdhw", gout, w[:, :, a, b, g])
                gxp[:, :,
                    a * dd : a * dd + (od - 1) * sd + 1 : sd,
                    b * dh : b * dh + (oh - 1) * sh + 1 : sh,
                    g * dw : g * dw + (ow - 1) * sw + 1 : sw] += contrib
    return gxp


def maxpool3d_fwd(xp, window, stride):
    n, c = xp.shape[:2]
    od, oh, ow = _out_extents(xp.shape[2:], window, stride, (1, 1, 1))
    out = np.empty((n, c, od, oh, ow), dtype=xp.dtype)
    idx = np.zeros((n, c, od, oh, ow), dtype=np.int64)
    if out.size == 0:
        return out, idx
    if backend.using_numba():
        _numba_mod().maxpool3d_fwd(xp, out, idx, *window, *stride)
        return out, idx
    kd, kh, kw = window
    sd, sh, sw = stride
    _, hp, wp = xp.shape[2:]
    first = True
    for a in range(kd):
        for b in range(kh):
            for g in range(kw):
                sub = xp[:, :,
                         a : a + (od - 1) * sd + 1 : sd,
                         b : b + (oh - 1) * sh + 1 : sh,
                         g : g + (ow - 1) * sw + 1 : sw]
                dg = (np.arange(od) * sd + a)[:, None, None]
                hg = (np.arange(oh) * sh + b)[None, :, None]
                wg = (np.arange(ow) * sw + g)[None, None, :]
                flat = ((dg * hp + hg) * wp + wg)[None, None]
                if first:
                    out[...] = sub
                    idx[...] = flat
                    first = False
                else:
                    better = sub > out  # strict: keeps first max in scan order
                    np.copyto(out, sub, where=better)
                    np.copyto(idx, np.broadcast_to(flat, idx.shape), where=better)
    return out, idx


def maxpool3d_grad(gout, idx, xp_shape):
    gxp = np.zeros(xp_shape, dtype=gout.dtype)
    if gout.size == 0:
        return gxp
    if backend.using_numba():
        _numba_mod().maxpool3d_grad(gxp, gout, idx)
        return gxp
    n, c = xp_shape[:2]
    flat = gxp.reshape(n, c, -1)
    for i in range(n):
        for j in range(c):
            np.add.at(flat[i, j], idx[i, j].ravel(), gout[i, j].ravel())
    return gxp


def avgpool3d_fwd(xp, window, stride):
    n, c = xp.shape[:2]
    od, oh, ow = _out_extents(xp.shape[2:], window, stride, (1, 1, 1))
    out = np.zeros((n, c, od, oh, ow), dtype=xp.dtype)
    if out.size == 0:
        return out
    if backend.using_numba():
        _numba_mod().avgpool3d_fwd(xp, out, *window, *stride)
        return out
    kd, kh, kw = window
    sd, sh, sw = stride
    for a in range(kd):
        for b in range(kh):
            for g in range(kw):
                out += xp[:, :,
                          a : a + (od - 1) * sd + 1 : sd,
                          b : b + (oh - 1) * sh + 1 : sh,
                          g : g + (ow - 1) * sw + 1 : sw]
    out *= 1.0 / (kd * kh * kw)
    return out


def avgpool3d_grad(gout, window, stride, xp_shape):
    gxp = np.zeros(xp_shape, dtype=gout.dtype)
    if gout.size == 0:
        return gxp
    if backend.using_numba():
        _numba_mod().avgpool3d_grad(gxp, gout, *window, *stride)
        return gxp
    kd, kh, kw = window
    sd, sh, sw = stride
    od, oh, ow = gout.shape[2:]
    scaled = gout * (1.0 / (kd * kh * kw))
    for a in range(kd):
        for b in range(kh):
            for g in range(kw):
                gxp[:, :,
                    a : a + (od - 1) * sd + 1 : sd,
                    b : b + (oh - 1) * sh + 1 : sh,
                    g : g + (ow - 1) * sw + 1 : sw] += scaled
    return gxp

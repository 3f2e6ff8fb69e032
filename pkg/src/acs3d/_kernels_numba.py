"""Numba implementations of the hot kernels.

Imported lazily so that the numpy backend never touches numba. All kernels
take pre-padded inputs and write into caller-allocated outputs. Parallelism
runs over batch x channel; every output element is produced by exactly one
loop iteration with a fixed inner accumulation order, so results do not
depend on the thread count. The unit-stride inner branches exist only to
let LLVM vectorize; they accumulate in the same order as the generic ones.
"""

import numpy as np
from numba import njit, prange


@njit(parallel=True, cache=True)
def conv3d_fwd(xp, w, out, sd, sh, sw, dd, dh, dw):
    nb, ci = xp.shape[0], xp.shape[1]
    co, kd, kh, kw = w.shape[0], w.shape[2], w.shape[3], w.shape[4]
    od, oh, ow = out.shape[2], out.shape[3], out.shape[4]
    for nc in prange(nb * co):
        n = nc // co
        o = nc % co
        row = np.zeros(ow, dtype=xp.dtype)
        for zd in range(od):
            for zh in range(oh):
                for zw in range(ow):
                    row[zw] = 0
                for c in range(ci):
                    for a in range(kd):
                        base_d = zd * sd + a * dd
                        for b in range(kh):
                            base_h = zh * sh + b * dh
                            for g in range(kw):
                                wv = w[o, c, a, b, g]
                                off = g * dw
                                if sw == 1:
                                    for zw in range(ow):
                                        row[zw] += xp[n, c, base_d, base_h, zw + off] * wv
                                else:
                                    for zw in range(ow):
                                        row[zw] += xp[n, c, base_d, base_h, zw * sw + off] * wv
                for zw in range(ow):
                    out[n, o, zd, zh, zw] = row[zw]


@njit(parallel=True, cache=True)
def conv3d_grad_w(xp, gout, gw, sd, sh, sw, dd, dh, dw):
    nb, ci = xp.shape[0], xp.shape[1]
    co, kd, kh, kw = gw.shape[0], gw.shape[2], gw.shape[3], gw.shape[4]
    od, oh, ow = gout.shape[2], gout.shape[3], gout.shape[4]
    for oc in prange(co * ci):
        o = oc // ci
        c = oc % ci
        for a in range(kd):
            for b in range(kh):
                for g in range(kw):
                    acc = gw[o, c, a, b, g]  # caller zeroes gw
                    off = g * dw
                    for n in range(nb):
                        for zd in range(od):
                            base_d = zd * sd + a * dd
                            for zh in range(oh):
                                base_h = zh * sh + b * dh
                                s0 = acc - acc
                                s1 = acc - acc
                                if sw == 1:
                                    half = (ow // 2) * 2
                                    for zw in range(0, half, 2):
                                        s0 += gout[n, o, zd, zh, zw] * xp[n, c, base_d, base_h, zw + off]
                                        s1 += gout[n, o, zd, zh, zw + 1] * xp[n, c, base_d, base_h, zw + 1 + off]
                                    if half < ow:
                                        s0 += gout[n, o, zd, zh, half] * xp[n, c, base_d, base_h, half + off]
                                else:
                                    for zw in range(ow):
                                        s0 += gout[n, o, zd, zh, zw] * xp[n, c, base_d, base_h, zw * sw + off]
                                acc += s0 + s1
                    gw[o, c, a, b, g] = acc


@njit(parallel=True, cache=True)
def conv3d_grad_x(gxp, gout, w, sd, sh, sw, dd, dh, dw):
    nb, ci = gxp.shape[0], gxp.shape[1]
    co, kd, kh, kw = w.shape[0], w.shape[2], w.shape[3], w.shape[4]
    od, oh, ow = gout.shape[2], gout.shape[3], gout.shape[4]
    for nc in prange(nb * ci):
        n = nc // ci
        c = nc % ci
        for o in range(co):
            for a in range(kd):
                for b in range(kh):
                    for g in range(kw):
                        wv = w[o, c, a, b, g]
                        off = g * dw
                        for zd in range(od):
                            base_d = zd * sd + a * dd
                            for zh in range(oh):
                                base_h = zh * sh + b * dh
                                if sw == 1:
                                    for zw in range(ow):
                                        gxp[n, c, base_d, base_h, zw + off] += gout[n, o, zd, zh, zw] * wv
                                else:
                                    for zw in range(ow):
                                        gxp[n, c, base_d, base_h, zw * sw + off] += gout[n, o, zd, zh, zw] * wv


@njit(parallel=True, cache=True)
def maxpool3d_fwd(xp, out, idx, kd, kh, kw, sd, sh, sw):
    nb, ci = xp.shape[0], xp.shape[1]
    hp, wp = xp.shape[3], xp.shape[4]
    od, oh, ow = out.shape[2], out.shape[3], out.shape[4]
    for nc in prange(nb * ci):
        n = nc // ci
        c = nc % ci
        for zd in range(od):
            for zh in range(oh):
                for zw in range(ow):
                    d0 = zd * sd
                    h0 = zh * sh
                    w0 = zw * sw
                    best = xp[n, c, d0, h0, w0]
                    best_i = (d0 * hp + h0) * wp + w0
                    for a in range(kd):
                        for b in range(kh):
                            for g in range(kw):
                                v = xp[n, c, d0 + a, h0 + b, w0 + g]
                                if v > best:  # strict: keeps first max in scan order
                                    best = v
                                    best_i = ((d0 + a) * hp + (h0 + b)) * wp + (w0 + g)
                    out[n, c, zd, zh, zw] = best
                    idx[n, c, zd, zh, zw] = best_i


@njit(parallel=True, cache=True)
def maxpool3d_grad(gxp, gout, idx):
    nb, ci = gxp.shape[0], gxp.shape[1]
    dp, hp, wp = gxp.shape[2], gxp.shape[3], gxp.shape[4]
    od, oh, ow = gout.shape[2], gout.shape[3], gout.shape[4]
    flat = gxp.reshape(nb, ci, dp * hp * wp)
    for nc in prange(nb * ci):
        n = nc // ci
        c = nc % ci
        for zd in range(od):
            for zh in range(oh):
                for zw in range(ow):
                    flat[n, c, idx[n, c, zd, zh, zw]] += gout[n, c, zd, zh, zw]


@njit(parallel=True, cache=True)
def avgpool3d_fwd(xp, out, kd, kh, kw, sd, sh, sw):
    nb, ci = xp.shape[0], xp.shape[1]
    od, oh, ow = out.shape[2], out.shape[3], out.shape[4]
    inv = 1.0 / (kd * kh * kw)
    for nc in prange(nb * ci):
        n = nc // ci
        c = nc % ci
        for zd in range(od):
            for zh in range(oh):
                for zw in range(ow):
                    acc = xp[n, c, 0, 0, 0] * 0
                    for a in range(kd):
                        for b in range(kh):
                            for g in range(kw):
                                acc += xp[n, c, zd * sd + a, zh * sh + b, zw * sw + g]
                    out[n, c, zd, zh, zw] = acc * inv


@njit(parallel=True, cache=True)
def avgpool3d_grad(gxp, gout, kd, kh, kw, sd, sh, sw):
    nb, ci = gxp.shape[0], gxp.shape[1]
    od, oh, ow = gout.shape[2], gout.shape[3], gout.shape[4]
    inv = 1.0 / (kd * kh * kw)
    for nc in prange(nb * ci):
        n = nc // ci
        c = nc % ci
        for zd in range(od):
            for zh in range(oh):
                for zw in range(ow):
                    g0 = gout[n, c, zd, zh, zw] * inv
                    for a in range(kd):
                        for b in range(kh):
                            for g in range(kw):
                                gxp[n, c, zd * sd + a, zh * sh + b, zw * sw + g] += g0

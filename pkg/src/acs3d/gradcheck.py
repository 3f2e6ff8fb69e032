"""Central-difference gradient checking for the differentiable operations.

The numeric side perturbs one entry at a time with step 1e-5 * max(1, |x|)
in float64; errors are measured per entry relative to the larger of the
two values, floored at 5% of the largest gradient magnitude so that
structurally tiny entries are judged against the instance's scale rather
than against finite-difference noise. Absolute differences below 1e-9
count as exact: they sit under the central-difference noise floor (e.g.
structurally zero gradients such as a bias feeding a train-mode
batchnorm).
"""

import numpy as np

from . import acs, ops
from .engine import bce_loss, dice_loss

REL_STEP = 1e-5
FLOOR_FRACTION = 0.05
NOISE_FLOOR = 1e-9


def numeric_grad(f, x, rel_step=REL_STEP):
    """Central-difference gradient of scalar f at x (x is float64)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        h = rel_step * max(1.0, abs(orig))
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_err(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    gmax = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(n), initial=0.0))
    if gmax == 0.0:
        return 0.0
    diff = np.abs(a - n)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), FLOOR_FRACTION * gmax)
    rel = np.where(diff <= NOISE_FLOOR, 0.0, diff / denom)
    return float(np.max(rel))


def _rand(rng, shape):
    return rng.standard_normal(shape).astype(np.float64)


def check_conv(seed):
    rng = np.random.default_rng(seed)
    cfg = ops.ConvConfig.cubic(3, 2, 3, stride=(1, 2, 1), padding=1, dilation=1)
    x = _rand(rng, (2, 2, 5, 6, 5))
    w = _rand(rng, (3, 2, 3, 3, 3))
    b = _rand(rng, (3,))
    gout = _rand(rng, ops.conv(x, w, b, cfg).shape)
    gx, gw, gb = ops.conv_backward(x, w, cfg, gout)
    errs = {
        "x": max_rel_err(gx, numeric_grad(lambda v: np.sum(gout * ops.conv(v, w, b, cfg)), x)),
        "w": max_rel_err(gw, numeric_grad(lambda v: np.sum(gout * ops.conv(x, v, b, cfg)), w)),
        "b": max_rel_err(gb, numeric_grad(lambda v: np.sum(gout * ops.conv(x, w, v, cfg)), b)),
    }
    return errs


def check_acs(seed):
    rng = np.random.default_rng(seed)
    cfg = ops.ConvConfig.cubic(3, 2, 5, stride=1, padding=1, dilation=1)
    x = _rand(rng, (1, 2, 5, 5, 5))
    w2d = _rand(rng, (5, 2, 3, 3))
    bias = _rand(rng, (5,))
    kern = acs.AcsKernel(w2d, acs.split_channels(5), bias)
    gout = _rand(rng, acs.acs_conv(x, kern, cfg).shape)

    def run(xv, wv, bv):
        return np.sum(gout * acs.acs_conv(xv, acs.AcsKernel(wv, kern.split, bv), cfg))

    gx, gw, gb = acs.acs_conv_backward(x, kern, cfg, gout)
    return {
        "x": max_rel_err(gx, numeric_grad(lambda v: run(v, w2d, bias), x)),
        "w2d": max_rel_err(gw, numeric_grad(lambda v: run(x, v, bias), w2d)),
        "bias": max_rel_err(gb, numeric_grad(lambda v: run(x, w2d, v), bias)),
    }


def check_mean_acs(seed):
    rng = np.random.default_rng(seed)
    cfg = ops.ConvConfig.cubic(3, 2, 4, stride=1, padding=1, dilation=1)
    x = _rand(rng, (1, 2, 5, 5, 5))
    w2d = _rand(rng, (4, 2, 3, 3))
    gout = _rand(rng, acs.mean_acs_conv(x, w2d, cfg).shape)
    gx, gw = acs.mean_acs_conv_backward(x, w2d, cfg, gout)
    return {
        "x": max_rel_err(gx, numeric_grad(lambda v: np.sum(gout * acs.mean_acs_conv(v, w2d, cfg)), x)),
        "w2d": max_rel_err(gw, numeric_grad(lambda v: np.sum(gout * acs.mean_acs_conv(x, v, cfg)), w2d)),
    }


def check_soft_acs(seed):
    rng = np.random.default_rng(seed)
    cfg = ops.ConvConfig.cubic(3, 2, 4, stride=1, padding=1, dilation=1)
    x = _rand(rng, (1, 2, 5, 5, 5))
    w2d = _rand(rng, (4, 2, 3, 3))
    logits = _rand(rng, (3,)) * 0.5
    gout = _rand(rng, acs.soft_acs_conv(x, w2d, acs.SoftWeights(logits), cfg).shape)

    def run(xv, wv, lv):
        return np.sum(gout * acs.soft_acs_conv(xv, wv, acs.SoftWeights(lv), cfg))

    gx, gw, gl = acs.soft_acs_conv_backward(x, w2d, acs.SoftWeights(logits), cfg, gout)
    return {
        "x": max_rel_err(gx, numeric_grad(lambda v: run(v, w2d, logits), x)),
        "w2d": max_rel_err(gw, numeric_grad(lambda v: run(x, v, logits), w2d)),
        "logits": max_rel_err(gl, numeric_grad(lambda v: run(x, w2d, v), logits)),
    }


def check_batchnorm(seed):
    rng = np.random.default_rng(seed)
    x = _rand(rng, (2, 3, 2, 2, 2))
    gamma = _rand(rng, (3,)) + 2.0
    beta = _rand(rng, (3,))
    rm = np.zeros(3)
    rv = np.ones(3)
    gout = _rand(rng, x.shape)
    eps = 1e-5

    def run(xv, gv, bv):
        y, _, _, _ = ops.batchnorm(xv, gv, bv, rm, rv, eps, 0.1, "train")
        return np.sum(gout * y)

    _, _, _, cache = ops.batchnorm(x, gamma, beta, rm, rv, eps, 0.1, "train")
    gx, ggamma, gbeta = ops.batchnorm_backward(cache, gout)
    return {
        "x": max_rel_err(gx, numeric_grad(lambda v: run(v, gamma, beta), x)),
        "gamma": max_rel_err(ggamma, numeric_grad(lambda v: run(x, v, beta), gamma)),
        "beta": max_rel_err(gbeta, numeric_grad(lambda v: run(x, gamma, v), beta)),
    }


def _check_loss(loss_fn, seed):
    rng = np.random.default_rng(seed)
    logits = _rand(rng, (1, 1, 4, 4, 4))
    target = (rng.random((1, 1, 4, 4, 4)) > 0.5).astype(np.float64)
    _, glogits = loss_fn(logits, target)
    num = numeric_grad(lambda v: loss_fn(v, target)[0], logits)
    return {"logits": max_rel_err(glogits, num)}


def check_dice(seed):
    return _check_loss(dice_loss, seed)


def check_bce(seed):
    return _check_loss(bce_loss, seed)


CHECKS = {
    "conv": check_conv,
    "acs": check_acs,
    "mean_acs": check_mean_acs,
    "soft_acs": check_soft_acs,
    "batchnorm": check_batchnorm,
    "dice": check_dice,
    "bce": check_bce,
}


def run_check(op, seed):
    """Run one named gradient check; returns (per-argument errors, worst)."""
    if op not in CHECKS:
        raise ValueError(f"unknown grad-check op {op!r}; choose from {sorted(CHECKS)}")
    errs = CHECKS[op](seed)
    return errs, max(errs.values())

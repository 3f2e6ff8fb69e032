"""Optimizers, losses, metrics, and a small deterministic training loop.

Losses take raw logits and apply the sigmoid internally. The dice loss is
batch-global: intersections and sums pool over every element of the batch
before the ratio. Segmentation metrics binarize at probability 0.5 and
average over foreground classes, skipping classes absent from the ground
truth. AUC uses the rank-statistic (Mann-Whitney) formulation with
midranks for ties.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ShapeError
from .graph import backward_graph, forward_graph

DICE_EPS = 1e-5


# ---------------------------------------------------------------------------
# Optimizers


@dataclass
class AdamState:
    """Bias-corrected Adam; defaults follow the common 1e-3 setup."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """One Adam update; returns the new params dict and mutates state."""
    state.step += 1
    t = state.step
    out = dict(params.items()) if hasattr(params, "items") else dict(params)
    for key, g in grads.items():
        theta = out[key]
        if g.shape != theta.shape:
            raise ShapeError(f"{key}: grad shape {g.shape} != param shape {theta.shape}")
        g = g.astype(np.float64)
        if state.weight_decay:
            g = g + state.weight_decay * theta.astype(np.float64)
        m = state.m.get(key)
        v = state.v.get(key)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[key] = m
        state.v[key] = v
        mhat = m / (1.0 - state.beta1 ** t)
        vhat = v / (1.0 - state.beta2 ** t)
        update = state.lr * mhat / (np.sqrt(vhat) + state.eps)
        out[key] = (theta.astype(np.float64) - update).astype(theta.dtype)
    return out


@dataclass
class SgdState:
    lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 0.0
    step: int = 0
    velocity: dict = field(default_factory=dict)


def sgd_step(params, grads, state):
    state.step += 1
    out = dict(params.items()) if hasattr(params, "items") else dict(params)
    for key, g in grads.items():
        theta = out[key]
        g = g.astype(np.float64)
        if state.weight_decay:
            g = g + state.weight_decay * theta.astype(np.float64)
        vel = state.velocity.get(key)
        vel = g if vel is None else state.momentum * vel + g
        state.velocity[key] = vel
        out[key] = (theta.astype(np.float64) - state.lr * vel).astype(theta.dtype)
    return out


# ---------------------------------------------------------------------------
# Losses (sigmoid applied internally; return loss and grad wrt logits)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def dice_loss(logits, target):
    """Batch-global soft dice loss: 1 - (2*sum(pt) + eps)/(sum(p) + sum(t) + eps)."""
    if logits.shape != target.shape:
        raise ShapeError(f"dice: shapes {logits.shape} and {target.shape} differ")
    p = sigmoid(logits)
    t = target
    inter = float(np.sum(p * t, dtype=np.float64))
    denom = float(np.sum(p, dtype=np.float64) + np.sum(t, dtype=np.float64)) + DICE_EPS
    num = 2.0 * inter + DICE_EPS
    loss = 1.0 - num / denom
    # d loss / d p, then chain through the sigmoid
    gp = -(2.0 * t * denom - num) / (denom * denom)
    glogits = (gp * p * (1.0 - p)).astype(logits.dtype)
    return loss, glogits


def bce_loss(logits, target):
    """Mean elementwise binary cross-entropy on logits (numerically stable)."""
    if logits.shape != target.shape:
        raise ShapeError(f"bce: shapes {logits.shape} and {target.shape} differ")
    x = logits.astype(np.float64)
    t = target.astype(np.float64)
    loss = float(np.mean(np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))))
    glogits = ((sigmoid(x) - t) / x.size).astype(logits.dtype)
    return loss, glogits


LOSSES = {"dice": dice_loss, "bce": bce_loss}


# ---------------------------------------------------------------------------
# Metrics


def _binary_dice(pred, truth):
    inter = float(np.sum(pred & truth, dtype=np.float64))
    total = float(np.sum(pred, dtype=np.float64) + np.sum(truth, dtype=np.float64))
    if total == 0.0:
        return 1.0
    return 2.0 * inter / total


def _binary_iou(pred, truth):
    inter = float(np.sum(pred & truth, dtype=np.float64))
    union = float(np.sum(pred | truth, dtype=np.float64))
    if union == 0.0:
        return 1.0
    return inter / union


def _per_class(pred_bin, mask, n_classes, fn, pooled):
    """Average fn over foreground classes; empty classes are skipped."""
    vals, skipped = [], 0
    for cls in range(1, n_classes + 1):
        truth = mask == cls
        if pooled:
            if not truth.any():
                skipped += 1
                continue
            vals.append(fn(pred_bin[:, cls - 1], truth))
        else:
            per_case = []
            for i in range(mask.shape[0]):
                if not truth[i].any():
                    continue
                per_case.append(fn(pred_bin[i, cls - 1], truth[i]))
            if not per_case:
                skipped += 1
                continue
            vals.append(float(np.mean(per_case)))
    if skipped:
        warnings.warn(f"{skipped} empty class(es) skipped", stacklevel=3)
    return float(np.mean(vals)) if vals else float("nan")


def _binarize(probs):
    return probs >= 0.5


def dice_global(probs, mask, n_classes):
    """Per-class dice with voxels pooled across all cases, class-averaged."""
    return _per_class(_binarize(probs), mask, n_classes, _binary_dice, pooled=True)


def dice_per_case(probs, mask, n_classes):
    """Per-case, per-class dice averaged over cases then classes."""
    return _per_class(_binarize(probs), mask, n_classes, _binary_dice, pooled=False)


def miou(probs, mask, n_classes):
    """Mean IoU over foreground classes, voxels pooled across cases."""
    return _per_class(_binarize(probs), mask, n_classes, _binary_iou, pooled=True)


def _midranks(scores):
    """1-based ranks with ties sharing the mean rank of their group."""
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    n = len(s)
    starts = np.empty(n, dtype=bool)
    starts[0] = True
    np.not_equal(s[1:], s[:-1], out=starts[1:])
    idx = np.flatnonzero(starts)
    counts = np.diff(np.append(idx, n))
    group_rank = idx + 0.5 * (counts - 1) + 1.0  # mean of the tied positions
    out = np.empty(n, dtype=np.float64)
    out[order] = np.repeat(group_rank, counts)
    return out


def roc_auc(scores, labels):
    """Mann-Whitney AUC of scores against binary labels, midrank ties."""
    scores = np.asarray(scores).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs at least one positive and one negative")
    ranks = _midranks(scores)
    u = float(ranks[labels].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def _auc_from_ranks(ranks, labels, n_pos, n_neg):
    u = float(ranks[labels].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def feature_mauc(features, mask, n_classes):
    """Mean oriented AUC of the best feature channel per foreground class.

    ``features`` is (C, *spatial) and ``mask`` a matching label volume.
    Per class: each channel's voxel values are scored against the class
    mask, oriented as max(AUC, 1 - AUC), and the best channel is kept; the
    mean over non-empty classes is returned along with the skipped count.
    """
    c = features.shape[0]
    if features.shape[1:] != mask.shape:
        raise ShapeError(f"features {features.shape} do not cover mask {mask.shape}")
    flat = features.reshape(c, -1)
    ranks = [_midranks(flat[ch]) for ch in range(c)]
    mask_flat = mask.ravel()
    vals, skipped = [], 0
    for cls in range(1, n_classes + 1):
        labels = mask_flat == cls
        n_pos = int(labels.sum())
        n_neg = labels.size - n_pos
        if n_pos == 0 or n_neg == 0:
            skipped += 1
            continue
        best = 0.5
        for ch in range(c):
            auc = _auc_from_ranks(ranks[ch], labels, n_pos, n_neg)
            best = max(best, auc, 1.0 - auc)
        vals.append(best)
    return (float(np.mean(vals)) if vals else float("nan")), skipped


# ---------------------------------------------------------------------------
# Training loop


def train_loop(g, params, data_x, data_y, loss_kind, state, epochs,
               batch_size=8, seed=0, lr_decay_epochs=(), lr_decay_factor=0.1,
               augment=None, step_fn=None):
    """Deterministic mini-batch training over a fixed in-memory dataset.

    Data order, initialization, and augmentation all derive from ``seed``;
    the history records one (epoch, loss, metric) row per epoch, with the
    metric the epoch's batch-global training dice. Raises
    :class:`DivergenceError` as soon as the loss stops being finite.
    """
    if loss_kind not in LOSSES:
        raise ValueError(f"unknown loss {loss_kind!r}")
    loss_fn = LOSSES[loss_kind]
    step = adam_step if step_fn is None else step_fn
    n = len(data_x)
    if n == 0 or len(data_y) != n:
        raise ShapeError("dataset must be non-empty with matching targets")
    params = dict(params.items()) if hasattr(params, "items") else dict(params)
    rng = np.random.default_rng(seed)
    history = []
    base_lr = state.lr
    for epoch in range(epochs):
        decays = sum(1 for e in lr_decay_epochs if epoch >= e)
        state.lr = base_lr * (lr_decay_factor ** decays)
        order = rng.permutation(n)
        epoch_loss = 0.0
        inter = 0.0
        sums = 0.0
        for at in range(0, n, batch_size):
            idx = order[at : at + batch_size]
            xs, ys = [], []
            for i in idx:
                xi, yi = data_x[i], data_y[i]
                if augment is not None:
                    xi, yi = augment(rng, xi, yi)
                xs.append(xi)
                ys.append(yi)
            xb = np.stack(xs)
            yb = np.stack(ys)
            run = forward_graph(g, params, xb, mode="train")
            logits = run.outputs[g.outputs[0]]
            loss, glogits = loss_fn(logits, yb)
            if not np.isfinite(loss):
                raise DivergenceError(f"epoch {epoch}: loss became {loss}")
            grads, _ = backward_graph(g, run, {g.outputs[0]: glogits})
            params.update(run.stat_updates)
            params = step(params, grads, state)
            epoch_loss += loss * len(idx)
            pred = sigmoid(logits) >= 0.5
            truth = yb >= 0.5
            inter += float(np.sum(pred & truth, dtype=np.float64))
            sums += float(np.sum(pred, dtype=np.float64) + np.sum(truth, dtype=np.float64))
        train_dice = 2.0 * inter / sums if sums else 1.0
        history.append({"epoch": epoch, "loss": epoch_loss / n, "metric": train_dice})
    state.lr = base_lr
    return params, history


def history_text(history, sep="\t"):
    """Delimiter-separated (epoch, loss, metric) rows with a header line."""
    lines = [sep.join(("epoch", "loss", "metric"))]
    for row in history:
        lines.append(sep.join((str(row["epoch"]), repr(float(row["loss"])), repr(float(row["metric"])))))
    return "\n".join(lines)

"""Desk-scale transfer-learning experiment on the synthetic shape data.

Pipeline: pretrain a small 2D UNet on circle/square segmentation, convert
it to each 3D variant, probe the untrained 3D networks' feature
discriminability with the mAUC metric, fine-tune on a handful of 3D
volumes, and report a per-variant table (mAUC / dice / mIoU / params).
Suffix "_p" means the body weights were transferred from the 2D run,
"_r" means random initialization. Everything derives from one seed.
"""

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .data import class_targets, gen2d, gen3d
from .graph import convert_graph, forward_graph, init_params, transfer_weights
from .profiler import model_cost
from .unet import build_unet2d, feature_node, with_head_channels

N_CLASSES_2D = 2
N_CLASSES_3D = 5

VARIANTS = ("acs_r", "acs_p", "p25d_r", "p25d_p", "conv3d_r")

_MODES = {"acs": "acs", "p25d": "p25d", "conv3d": "conv3d_random"}
_VARIANT_SEED = {"acs_r": 11, "acs_p": 12, "p25d_r": 13, "p25d_p": 14, "conv3d_r": 15}


@dataclass
class PocConfig:
    seed: int = 0
    out_dir: str = "."
    n_2d: int = 500
    epochs_2d: int = 10
    batch_2d: int = 8
    n_3d_train: int = 16
    n_3d_probe: int = 100
    n_3d_eval: int = 24
    epochs_3d: int = 20
    batch_3d: int = 2
    crop: int = 24
    lr: float = 2e-3
    base_width: int = 8
    levels: int = 3
    variants: tuple = field(default_factory=lambda: VARIANTS)


def _targets(samples, n_classes):
    xs = [s.image for s in samples]
    ys = [class_targets(s.mask, n_classes) for s in samples]
    return xs, ys


def _random_crop(size):
    def crop(rng, x, y):
        starts = [int(rng.integers(0, e - size + 1)) for e in x.shape[1:]]
        sl = tuple(slice(s, s + size) for s in starts)
        return x[(slice(None),) + sl], y[(slice(None),) + sl]

    return crop


def _eval_forward(g, params, samples, want_feature=None):
    """Per-case eval forwards; returns stacked probabilities and features."""
    probs, feats = [], []
    for s in samples:
        run = forward_graph(g, params, s.image[None], mode="eval")
        logits = run.outputs[g.outputs[0]][0]
        probs.append(engine.sigmoid(logits))
        if want_feature:
            feats.append(run.outputs[want_feature][0])
    return np.stack(probs), feats


def probe_mauc(g, params, samples, fname):
    """Mean per-case feature mAUC over a probe set, without any 3D training."""
    vals = []
    skipped = 0
    for s in samples:
        run = forward_graph(g, params, s.image[None], mode="eval")
        feats = run.outputs[fname][0]
        v, sk = engine.feature_mauc(feats, s.mask, N_CLASSES_3D)
        vals.append(v)
        skipped += sk
    return float(np.mean(vals)), skipped


def pretrain_2d(cfg, log):
    g2d = build_unet2d(1, N_CLASSES_2D, cfg.base_width, cfg.levels)
    params = init_params(g2d, seed=cfg.seed)
    train = gen2d(cfg.n_2d, cfg.seed)
    xs, ys = _targets(train, N_CLASSES_2D)
    state = engine.AdamState(lr=cfg.lr)
    decay = (int(cfg.epochs_2d * 0.6), int(cfg.epochs_2d * 0.85))
    params, history = engine.train_loop(
        g2d, params, xs, ys, "dice", state, cfg.epochs_2d,
        batch_size=cfg.batch_2d, seed=cfg.seed, lr_decay_epochs=decay,
    )
    probs = []
    for s in train:
        run = forward_graph(g2d, params, s.image[None], mode="eval")
        probs.append(engine.sigmoid(run.outputs[g2d.outputs[0]][0]))
    dice2d = engine.dice_global(np.stack(probs), np.stack([s.mask for s in train]), N_CLASSES_2D)
    log(f"2D pretraining: final train loss {history[-1]['loss']:.4f}, dice {dice2d:.4f}")
    return g2d, params, history, dice2d


def run_poc(cfg, log=print):
    t0 = time.time()
    os.makedirs(cfg.out_dir, exist_ok=True)
    g2d, params2d, hist2d, dice2d = pretrain_2d(cfg, log)
    log(f"[{time.time() - t0:6.1f}s] 2D pretraining done")

    probe = gen3d(cfg.n_3d_probe, cfg.seed + 1)
    train3d = gen3d(cfg.n_3d_train, cfg.seed + 2)
    eval3d = gen3d(cfg.n_3d_eval, cfg.seed + 3)
    xs3, ys3 = _targets(train3d, N_CLASSES_3D)
    fname = feature_node(g2d)

    rows = []
    for variant in cfg.variants:
        t1 = time.time()
        family, init = variant.rsplit("_", 1)
        g3d = with_head_channels(convert_graph(g2d, _MODES[family]), N_CLASSES_3D)
        vseed = cfg.seed + _VARIANT_SEED[variant]
        if init == "p":
            params = transfer_weights(params2d, g3d, ("prefix", "u."), seed=vseed)
        else:
            params = init_params(g3d, seed=vseed)
        params = dict(params.items())

        mauc, skipped = probe_mauc(g3d, params, probe, fname)
        log(f"[{time.time() - t0:6.1f}s] {variant}: mAUC w/o training {100 * mauc:.1f} "
            f"({skipped} empty class instances skipped)")

        state = engine.AdamState(lr=cfg.lr)
        decay = (cfg.epochs_3d // 2, (3 * cfg.epochs_3d) // 4)
        params, history = engine.train_loop(
            g3d, params, xs3, ys3, "dice", state, cfg.epochs_3d,
            batch_size=cfg.batch_3d, seed=vseed, lr_decay_epochs=decay,
            augment=_random_crop(cfg.crop),
        )
        probs, _ = _eval_forward(g3d, params, eval3d)
        masks = np.stack([s.mask for s in eval3d])
        dice = engine.dice_global(probs, masks, N_CLASSES_3D)
        iou = engine.miou(probs, masks, N_CLASSES_3D)
        n_params = model_cost(g3d, (1, 1, 48, 48, 48)).total_params
        rows.append({"variant": variant, "mauc": mauc, "dice": dice, "miou": iou,
                     "params": n_params})
        log(f"[{time.time() - t0:6.1f}s] {variant}: dice {100 * dice:.1f}, mIoU {100 * iou:.1f}, "
            f"params {n_params} (trained in {time.time() - t1:.0f}s)")

    result = {
        "seed": cfg.seed,
        "dice_2d": dice2d,
        "rows": rows,
        "runtime_s": time.time() - t0,
    }
    table = format_results(result)
    log(table)
    with open(os.path.join(cfg.out_dir, "results.txt"), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    with open(os.path.join(cfg.out_dir, "results.json"), "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=2)
    return result


def format_results(result):
    headers = ("variant", "mAUC", "dice", "mIoU", "params")
    lines = [f"2D pretraining dice: {100 * result['dice_2d']:.1f}"]
    rows = [
        (r["variant"], f"{100 * r['mauc']:.1f}", f"{100 * r['dice']:.1f}",
         f"{100 * r['miou']:.1f}", str(r["params"]))
        for r in result["rows"]
    ]
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(headers)]
    lines.append("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines)

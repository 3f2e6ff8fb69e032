"""Command-line interface.

Subcommands: convert, profile, infer, gen-data, train, grad-check, poc.
Every run prints its resolved configuration first. Errors exit nonzero
with a single machine-parsable line `error: <Type>: <message>` on stderr.

Kernel backend: set ACS3D_BACKEND=numpy to force the pure-numpy fallback.
Thread count for the numba backend: NUMBA_NUM_THREADS.
"""

import argparse
import json
import sys

import numpy as np

from . import engine, weightio
from .data import class_targets, gen2d, gen3d, save_dataset
from .errors import ConfigError, DivergenceError, GraphError, OracleSubsetError, ShapeError, WeightFormatError
from .gradcheck import CHECKS, run_check
from .graph import (convert_graph, forward_graph, init_params, load_model,
                    save_model, transfer_weights)
from .poc import PocConfig, run_poc
from .profiler import compare_reports, format_table, model_cost, report_to_json

GRAD_TOL = 1e-6


def _print_config(args):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print(f"config: {json.dumps(cfg, default=str)}")


def _parse_shape(text):
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad shape {text!r}: expected comma-separated integers") from exc


def _strip_out_base(path):
    for suffix in (".model", ".acsw"):
        if path.endswith(suffix):
            return path[: -len(suffix)]
    return path


def cmd_convert(args):
    g = load_model(args.model)
    mode = "conv3d_random" if args.mode == "conv3d" else args.mode
    g3d = convert_graph(g, mode, pool_depth=args.pool_depth,
                        depth_stride=args.depth_stride, i3d_axis=args.i3d_axis)
    base = _strip_out_base(args.out)
    save_model(g3d, base + ".model")
    print(f"wrote {base}.model ({len(g3d.nodes)} nodes)")
    if args.weights:
        store2d = weightio.load(args.weights)
        store3d = transfer_weights(store2d, g3d, args.scope, seed=args.seed)
        weightio.save(store3d, base + ".acsw")
        print(f"wrote {base}.acsw ({len(store3d)} entries)")
    return 0


def cmd_profile(args):
    g = load_model(args.model)
    shape = _parse_shape(args.input_shape)
    report = model_cost(g, shape)
    if args.json:
        print(report_to_json(report))
    else:
        print(format_table(report))
    if args.compare:
        other = model_cost(load_model(args.compare), shape)
        ratios = compare_reports(report, other, args.model, args.compare)
        print(f"\ncompare ({args.compare} / {args.model}):")
        for key in ("macs", "params", "peak_activation_elems"):
            a, b, r = ratios[key]
            print(f"  {key}: {a} vs {b} (ratio {r:.4f})")
    return 0


def cmd_infer(args):
    g = load_model(args.model)
    params = weightio.load(args.weights)
    store = weightio.load(args.input)
    out = weightio.WeightStore()
    count = 0
    while f"sample/{count}/image" in store:
        count += 1
    if count == 0:
        raise GraphError(f"{args.input}: no sample/{{i}}/image entries found")
    for i in range(count):
        x = store[f"sample/{i}/image"][None].astype(np.float32)
        run = forward_graph(g, params, x, mode="eval")
        pred = engine.sigmoid(run.outputs[g.outputs[0]][0])
        out[f"sample/{i}/pred"] = pred.astype(np.float32)
    weightio.save(out, args.out)
    print(f"wrote {args.out} ({count} predictions)")
    return 0


def cmd_gen_data(args):
    gen = gen2d if args.dim == 2 else gen3d
    samples = gen(args.n, args.seed, noise=not args.no_noise,
                  noise_as_variance=args.noise_variance)
    save_dataset(samples, args.out)
    print(f"wrote {args.out} ({args.n} samples, dim {args.dim})")
    return 0


def cmd_train(args):
    g = load_model(args.model)
    from .data import load_dataset

    pairs = load_dataset(args.data)
    if not pairs:
        raise GraphError(f"{args.data}: no samples found")
    head = g.node(g.outputs[0])
    if "out_ch" not in head.attrs:
        raise GraphError(f"output node {head.name!r} has no out_ch; cannot derive class count")
    n_classes = head.attrs["out_ch"]
    xs = [img for img, _ in pairs]
    ys = [class_targets(mask, n_classes) for _, mask in pairs]
    if args.weights:
        params = weightio.load(args.weights)
    else:
        params = init_params(g, seed=args.seed)
    state = engine.AdamState(lr=args.lr)
    params, history = engine.train_loop(
        g, params, xs, ys, args.loss, state, args.epochs,
        batch_size=args.batch, seed=args.seed,
    )
    text = engine.history_text(history)
    print(text)
    if args.history:
        with open(args.history, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    store = weightio.WeightStore(params.items())
    weightio.save(store, args.out)
    print(f"wrote {args.out} ({len(store)} entries)")
    return 0


def cmd_grad_check(args):
    errs, worst = run_check(args.op, args.seed)
    for name, err in errs.items():
        print(f"{args.op}/{name}: rel err {err:.3e}")
    print(f"max rel err {worst:.3e} (tolerance {GRAD_TOL:.0e})")
    return 0 if worst <= GRAD_TOL else 1


def cmd_poc(args):
    cfg = PocConfig(
        seed=args.seed, out_dir=args.out, n_2d=args.samples_2d,
        epochs_2d=args.epochs_2d, n_3d_train=args.samples_3d,
        n_3d_probe=args.probe_3d, n_3d_eval=args.eval_3d,
        epochs_3d=args.epochs_3d, batch_3d=args.batch_3d, crop=args.crop,
        lr=args.lr,
    )
    run_poc(cfg)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="acs3d",
        description="ACS convolutions: 2D-to-3D model conversion, profiling, and experiments.",
        epilog="Environment: ACS3D_BACKEND={numba,numpy}; NUMBA_NUM_THREADS=<n>.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert a 2D model file (and optionally weights) to 3D")
    p.add_argument("--model", required=True)
    p.add_argument("--mode", required=True, choices=("acs", "p25d", "i3d", "conv3d"))
    p.add_argument("--weights")
    p.add_argument("--scope", default="whole",
                   help="'whole' or 'prefix=<node name prefix>' (default whole)")
    p.add_argument("--out", required=True, help="output base path (writes .model and .acsw)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pool-depth", choices=("one", "k"), default="one")
    p.add_argument("--depth-stride", action="store_true")
    p.add_argument("--i3d-axis", choices=("d", "h", "w"), default="d")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("profile", help="per-layer MACs/params/activation report")
    p.add_argument("--model", required=True)
    p.add_argument("--input-shape", required=True, help="e.g. 1,1,48,48,48")
    p.add_argument("--compare")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("infer", help="run a model over a dataset container")
    p.add_argument("--model", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gen-data", help="generate a synthetic shape dataset")
    p.add_argument("--dim", type=int, required=True, choices=(2, 3))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--no-noise", action="store_true")
    p.add_argument("--noise-variance", action="store_true",
                   help="read the 0.5 noise level as a variance instead of a std dev")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--loss", required=True, choices=("dice", "bce"))
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weights", help="initial weights (default: seeded init)")
    p.add_argument("--history", help="also write the history TSV here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grad-check", help="finite-difference check of one operation")
    p.add_argument("--op", required=True, choices=sorted(CHECKS))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("poc", help="run the full 2D-pretrain/convert/probe/fine-tune experiment")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples-2d", type=int, default=500)
    p.add_argument("--epochs-2d", type=int, default=10)
    p.add_argument("--samples-3d", type=int, default=16)
    p.add_argument("--probe-3d", type=int, default=100)
    p.add_argument("--eval-3d", type=int, default=24)
    p.add_argument("--epochs-3d", type=int, default=20)
    p.add_argument("--batch-3d", type=int, default=2)
    p.add_argument("--crop", type=int, default=24)
    p.add_argument("--lr", type=float, default=2e-3)
    p.set_defaults(func=cmd_poc)

    return parser


_KNOWN_ERRORS = (GraphError, WeightFormatError, ShapeError, ConfigError,
                 OracleSubsetError, DivergenceError, FileNotFoundError,
                 ValueError, OSError)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _print_config(args)
    try:
        return args.func(args)
    except _KNOWN_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Runs the hot operations (3D convolution forward/backward, pooling, and one
full view-convolution layer) on both backends, reports wall time and
GMAC/s, and verifies that the convolution forward passes agree bitwise.

Usage: python benchmarks/bench_kernels.py [--reps N]
"""

import argparse
import time

import numpy as np

from acs3d import ConvConfig, backend, ops
from acs3d.acs import AcsKernel, acs_conv


def timeit(fn, reps):
    fn()  # warm (JIT compile on the numba side)
    t0 = time.perf_counter()
    for _ in range(reps):
        out = fn()
    return (time.perf_counter() - t0) / reps, out


def bench_case(name, fn, macs, reps, results):
    per_backend = {}
    for b in ("numba", "numpy"):
        try:
            backend.set_backend(b)
        except ImportError:
            print(f"{name:28s} {b}: unavailable")
            continue
        dt, out = timeit(fn, reps)
        per_backend[b] = (dt, out)
        rate = macs / dt / 1e9 if macs else 0.0
        print(f"{name:28s} {b:5s}: {dt * 1e3:8.1f} ms   {rate:6.2f} GMAC/s")
    results[name] = per_backend
    backend.set_backend("numba")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--reps", type=int, default=5)
    args = parser.parse_args()
    r = np.random.default_rng(0)

    x = r.standard_normal((2, 16, 26, 26, 26)).astype(np.float32)
    w = r.standard_normal((16, 16, 3, 3, 3)).astype(np.float32)
    cfg = ConvConfig.cubic(3, 16, 16, padding=1)
    out_shape = (2, 16) + cfg.out_shape(x.shape[2:])
    gout = r.standard_normal(out_shape).astype(np.float32)
    macs = int(np.prod(out_shape)) * 16 * 27

    results = {}
    bench_case("conv3d forward 3x3x3", lambda: ops.conv(x, w, None, cfg), macs, args.reps, results)
    bench_case("conv3d backward 3x3x3", lambda: ops.conv_backward(x, w, cfg, gout),
               3 * macs, args.reps, results)

    kern = AcsKernel(r.standard_normal((16, 16, 3, 3)).astype(np.float32))
    bench_case("acs view conv 3x3", lambda: acs_conv(x, kern, cfg), macs // 3, args.reps, results)

    xp = r.standard_normal((2, 16, 24, 24, 24)).astype(np.float32)
    bench_case("maxpool 2x2x2", lambda: ops.pool3d(xp, "max", (2, 2, 2))[0],
               xp.size, args.reps, results)

    fwd = results.get("conv3d forward 3x3x3", {})
    if "numba" in fwd and "numpy" in fwd:
        same = np.array_equal(fwd["numba"][1], fwd["numpy"][1])
        print(f"\nconv forward bitwise identical across backends: {same}")
        if not same:
            raise SystemExit(1)


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Compares the im2col gather and col2im scatter at the hot shapes of the
default training configuration, then times a full forward+backward+Adam
step of the restoration model under each backend.

Usage:
    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --dtype float64 --steps 5
    python benchmarks/bench_kernels.py --output results.json
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from tanet import backend, kernels_numba, kernels_numpy  # noqa: E402
from tanet.blocks import NetworkConfig, TANetModel  # noqa: E402
from tanet.losses import LossConfig, total_loss  # noqa: E402
from tanet.tensor import Tensor, backward  # noqa: E402
from tanet.training import TrainState, adam_step  # noqa: E402

# (label, input shape, kh, kw, stride, ph, pw) -- the default config's hot convs
SHAPES = [
    ("head 64x64x3->16", (4, 64, 64, 3), 3, 3, 1, 1, 1),
    ("res 64x64x16", (4, 64, 64, 16), 3, 3, 1, 1, 1),
    ("down 64->32 s2", (4, 64, 64, 16), 3, 3, 2, 1, 1),
    ("res 32x32x32", (4, 32, 32, 32), 3, 3, 1, 1, 1),
    ("res 16x16x64", (4, 16, 16, 64), 3, 3, 1, 1, 1),
    ("fusion 16x16x192", (4, 16, 16, 192), 3, 3, 1, 1, 1),
]

BACKENDS = {"numba": kernels_numba, "numpy": kernels_numpy}


def timeit(fn, reps):
    fn()  # warmup (and JIT compilation for the numba path)
    start = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - start) / reps


def bench_kernels(dtype, reps):
    rng = np.random.default_rng(0)
    rows = []
    print(f"\n{'shape':<20}{'im2col numba':>14}{'im2col numpy':>14}"
          f"{'col2im numba':>14}{'col2im numpy':>14}")
    print("-" * 76)
    for label, xs, kh, kw, s, ph, pw in SHAPES:
        x = rng.standard_normal(xs).astype(dtype)
        b, h, w, c = xs
        oh, ow = kernels_numpy.out_dims(h, w, kh, kw, s, ph, pw)
        dcols = rng.standard_normal((b * oh * ow, kh * kw * c)).astype(dtype)

        times = {}
        for name, mod in BACKENDS.items():
            times[f"im2col_{name}"] = timeit(lambda m=mod: m.im2col(x, kh, kw, s, ph, pw), reps)
            times[f"col2im_{name}"] = timeit(
                lambda m=mod: m.col2im(dcols, b, h, w, c, kh, kw, s, ph, pw), reps
            )
        same = (kernels_numba.im2col(x, kh, kw, s, ph, pw)
                == kernels_numpy.im2col(x, kh, kw, s, ph, pw)).all()
        assert same, f"backends disagree on {label}"
        print(f"{label:<20}"
              f"{times['im2col_numba'] * 1e3:>12.2f}ms{times['im2col_numpy'] * 1e3:>12.2f}ms"
              f"{times['col2im_numba'] * 1e3:>12.2f}ms{times['col2im_numpy'] * 1e3:>12.2f}ms")
        rows.append({"shape": label, **{k: v * 1e3 for k, v in times.items()}})
    return rows


def bench_train_step(dtype, steps):
    rng = np.random.default_rng(1)
    x_data = rng.random((4, 64, 64, 3)).astype(dtype)
    g_data = rng.random((4, 64, 64, 3)).astype(dtype)
    results = {}
    print(f"\nfull training step (batch 4, crop 64, base 16, 2 attention blocks, {np.dtype(dtype).name})")
    for name in BACKENDS:
        backend.set_backend(name)
        model = TANetModel(NetworkConfig(base_channels=16, num_tabs=2, seed=0))
        state = TrainState(total_steps=100, loss_config=LossConfig())
        params = list(model.named_params())
        x, g = Tensor(x_data.copy()), Tensor(g_data.copy())

        def step():
            model.zero_grad()
            backward(total_loss(model(x), g, state.loss_config))
            adam_step(params, state)

        per = timeit(step, steps)
        results[name] = per * 1e3
        print(f"  {name:<6}: {per * 1e3:8.1f} ms/step  ({per * 2000 / 60:5.1f} min per 2000 steps)")
    backend.set_backend("auto")
    faster = min(results, key=results.get)
    print(f"  -> faster backend on this machine: {faster}")
    return results


def main():
    parser = argparse.ArgumentParser(description="kernel backend benchmark")
    parser.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    parser.add_argument("--reps", type=int, default=10, help="repetitions per kernel")
    parser.add_argument("--steps", type=int, default=3, help="full training steps to time")
    parser.add_argument("--output", type=str, default=None, help="write results as JSON")
    args = parser.parse_args()

    dtype = np.float32 if args.dtype == "float32" else np.float64
    backend.set_default_dtype(dtype)
    print(f"dtype: {args.dtype}   reps: {args.reps}")

    kernel_rows = bench_kernels(dtype, args.reps)
    step_times = bench_train_step(dtype, args.steps)

    if args.output:
        payload = {"dtype": args.dtype, "kernels_ms": kernel_rows, "step_ms": step_times}
        Path(args.output).write_text(json.dumps(payload, indent=2))
        print(f"\nresults saved to {args.output}")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Benchmark the kernel backends (NumPy/BLAS vs compiled) and the hybrid
dispatch on the conv shapes the default model actually runs.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

import satfp.kernels as kernels
from satfp import datapipe, synth
from satfp.kernels import available_backends
from satfp.model import FingerprintModel, _loss_and_grads, default_config

# (label, batch, c_in, length, kernel, c_out) for the default 320-sample model.
CONV_SHAPES = [
    ("enc stage 1", 32, 1, 320, 9, 16),
    ("enc stage 2", 32, 16, 80, 9, 32),
    ("enc stage 3", 32, 32, 20, 9, 64),
    ("dec stage 3", 32, 64, 20, 9, 32),
    ("dec stage 2", 32, 32, 80, 9, 16),
    ("dec stage 1", 32, 16, 320, 9, 1),
]


def time_op(fn, repeats):
    fn()
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats * 1e6  # us


def bench_conv(repeats):
    rng = np.random.default_rng(0)
    backends = available_backends()
    print(f"{'shape':<14}{'op':<6}" + "".join(f"{name:>12}" for name in backends))
    for label, n, ci, length, k, co in CONV_SHAPES:
        x = rng.standard_normal((n, ci, length)).astype(np.float32)
        w = rng.standard_normal((co, ci, k)).astype(np.float32)
        b = rng.standard_normal(co).astype(np.float32)
        g = rng.standard_normal((n, co, length)).astype(np.float32)
        ops = {
            "fwd": lambda m: m.conv1d_forward(x, w, b),
            "bwd_x": lambda m: m.conv1d_backward_input(g, w),
            "bwd_w": lambda m: m.conv1d_backward_weights(g, x, k),
        }
        for op_name, op in ops.items():
            row = f"{label:<14}{op_name:<6}"
            for mod in backends.values():
                row += f"{time_op(lambda: op(mod), repeats):>10.0f}us"
            print(row)


def bench_train_step(repeats):
    gen = synth.GenerationConfig(
        n_transmitters=8,
        messages_per_tx=20,
        severity=0.5,
        channel=synth.ChannelParams(snr_db=25.0),
        seed=7,
    )
    records = synth.generate_dataset(gen)
    batch = next(datapipe.batch_iter(records, seed=1))
    x = batch.waveform_array(np.float32)
    labels = batch.labels
    model = FingerprintModel.initialize(default_config())

    def step():
        model.net.zero_grads()
        _loss_and_grads(model, x, labels, 1.0)

    saved = {
        name: getattr(kernels, name)
        for name in (
            "conv1d_forward",
            "conv1d_backward_input",
            "conv1d_backward_weights",
            "maxpool1d_forward",
            "maxpool1d_backward",
        )
    }
    print(f"\nfull training step (batch 32, default model), backend = {kernels.BACKEND}:")
    print(f"  {kernels.BACKEND:>8}: {time_op(step, repeats) / 1000:.1f} ms")
    for name, mod in available_backends().items():
        for fn_name in saved:
            setattr(kernels, fn_name, getattr(mod, fn_name))
        print(f"  {name:>8}: {time_op(step, repeats) / 1000:.1f} ms")
    for fn_name, fn in saved.items():
        setattr(kernels, fn_name, fn)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()
    print(f"selected backend: {kernels.BACKEND}")
    print(f"available: {', '.join(available_backends())}\n")
    bench_conv(args.repeats)
    bench_train_step(args.repeats)


if __name__ == "__main__":
    main()

"""Timing comparison of the compiled kernels against the numpy fallback.

Per-kernel timings call both backend modules directly on desk-scale shapes;
the end-to-end section runs a few optimizer steps of the full model in a
subprocess per backend, since the backend choice is frozen when
``mixsep.kernels`` is imported.

Usage: python benchmarks/bench_kernels.py [--repeats N] [--no-end-to-end]
"""

import argparse
import statistics
import subprocess
import sys
import time

import numpy as np

from mixsep.kernels import _numpy

try:
    from mixsep.kernels import _accel
except ImportError:
    _accel = None

BATCH, T = 4, 2000
LENGTH, HOP = 16, 8
FRAMES = 1 + (T - LENGTH) // HOP
CHANNELS, TAPS = 128, 3

END_TO_END_SNIPPET = """
import time
import numpy as np
from mixsep import kernels
from mixsep.model import desk_config, forward, init_parameters
from mixsep.optim import Adam
from mixsep.training import graph_neg_thresholded_snr
from mixsep.signal import LossConfig

store = init_parameters(desk_config(4), seed=0)
opt = Adam({n: t for n, t in store.items()})
rng = np.random.Generator(np.random.PCG64(0))
x = rng.standard_normal((4, 2000))
target = rng.standard_normal(2000)
cfg = LossConfig()
times = []
for step in range(12):
    t0 = time.perf_counter()
    est = forward(store, x)
    loss = graph_neg_thresholded_snr(target, est.sum(axis=1).mean(axis=0), cfg)
    opt.zero_grad()
    loss.backward()
    opt.step()
    times.append(time.perf_counter() - t0)
print(kernels.BACKEND, min(times[2:]))
"""


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(repeats):
    rng = np.random.Generator(np.random.PCG64(0))
    signal = rng.standard_normal((BATCH, T))
    frames = rng.standard_normal((BATCH, FRAMES, LENGTH))
    acts = rng.standard_normal((BATCH, FRAMES, CHANNELS))
    taps = rng.standard_normal((TAPS, CHANNELS))
    grad = rng.standard_normal((BATCH, FRAMES, CHANNELS))

    cases = [
        ("frame", lambda m: m.frame(signal, LENGTH, HOP)),
        ("overlap_add", lambda m: m.overlap_add(frames, HOP, T)),
        ("depthwise_forward d=1",
         lambda m: m.depthwise_forward(acts, taps, 1)),
        ("depthwise_forward d=8",
         lambda m: m.depthwise_forward(acts, taps, 8)),
        ("depthwise_grad_input",
         lambda m: m.depthwise_grad_input(grad, taps, 4)),
        ("depthwise_grad_weight",
         lambda m: m.depthwise_grad_weight(grad, acts, 4, TAPS)),
    ]

    print(f"{'kernel':28s} {'numpy':>10s} {'cython':>10s} {'speedup':>8s}")
    for name, call in cases:
        t_np = _time(lambda: call(_numpy), repeats)
        if _accel is None:
            print(f"{name:28s} {t_np * 1e6:9.0f}u {'absent':>10s}")
            continue
        np.testing.assert_allclose(call(_numpy), call(_accel), atol=1e-10)
        t_cy = _time(lambda: call(_accel), repeats)
        print(
            f"{name:28s} {t_np * 1e6:9.0f}u {t_cy * 1e6:9.0f}u "
            f"{t_np / t_cy:7.2f}x"
        )


def bench_end_to_end():
    print()
    print("full training step (desk model, batch 4, 2000 samples):")
    results = {}
    for backend in ("numpy", "cython"):
        if backend == "cython" and _accel is None:
            print("  cython: absent")
            continue
        proc = subprocess.run(
            [sys.executable, "-c", END_TO_END_SNIPPET],
            capture_output=True,
            text=True,
            env={"MIXSEP_KERNELS": backend, "PATH": "/usr/bin:/bin"},
        )
        if proc.returncode != 0:
            print(f"  {backend}: failed\n{proc.stderr}")
            continue
        name, seconds = proc.stdout.split()
        results[name] = float(seconds)
        print(f"  {name}: {float(seconds) * 1e3:.1f} ms/step")
    if len(results) == 2:
        print(
            f"  step speedup: {results['numpy'] / results['cython']:.2f}x"
        )


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=30)
    parser.add_argument("--no-end-to-end", action="store_true")
    args = parser.parse_args()
    backend = "cython+numpy" if _accel is not None else "numpy only"
    print(f"available backends: {backend}")
    bench_kernels(args.repeats)
    if not args.no_end_to_end:
        bench_end_to_end()


if __name__ == "__main__":
    main()

"""Time the numpy fallback against the compiled kernels.

Shapes default to one training minibatch of the ablation (batch 32, length-8
sequences, length-19 context, D=16). Also reports end-to-end seconds per
training epoch of TAN for each backend, which runs in a subprocess because
the backend is fixed at import time.

    python benchmarks/bench_kernels.py [--repeat 50] [--epoch]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from triattn.kernels import available_backends, get_backend

EPOCH_SNIPPET = """
import json, time
from triattn.model import TanConfig, train
from triattn.synthetic import SyntheticSpec, gen_synthetic
data, _ = gen_synthetic(SyntheticSpec(n_train=640, n_test=1))
out = {}
for variant in ("tadd", "tdp", "trili-econ"):
    cfg = TanConfig(variant=variant, epochs=1, optimizer="adam", learning_rate=0.02)
    t = time.perf_counter()
    train(cfg, data, monitor=False)
    out[variant] = time.perf_counter() - t
print(json.dumps(out))
"""


def kernel_cases(B, P, R, S, D, seed=0):
    rng = np.random.default_rng(seed)
    X, Y, Z = rng.normal(size=(B, P, D)), rng.normal(size=(B, R, D)), rng.normal(size=(B, S, D))
    T = rng.normal(size=(B, P, R, S))
    p = rng.normal(size=D)
    return {
        "trilinear_scores": (X, Y, Z),
        "trilinear_combine": (T, Y, Z),
        "additive_scores": (X, Y, Z, p),
        "additive_scores_backward": (T, X, Y, Z, p),
    }


def time_kernels(cases, repeat):
    rows = []
    for name, args in cases.items():
        times, results = {}, {}
        for backend in available_backends():
            fn = getattr(get_backend(backend), name)
            results[backend] = fn(*args)
            times[backend] = min(timeit.repeat(lambda: fn(*args), number=repeat, repeat=3)) / repeat
        diff = None
        if len(results) == 2:
            a, b = results["python"], results["compiled"]
            pairs = zip(a, b) if isinstance(a, tuple) else [(a, b)]
            diff = max(float(np.max(np.abs(x - y))) for x, y in pairs)
        rows.append((name, times, diff))
    return rows


def epoch_times():
    out = {}
    for backend in available_backends():
        env = dict(os.environ, TRIATTN_KERNELS=backend)
        proc = subprocess.run([sys.executable, "-c", EPOCH_SNIPPET], env=env, capture_output=True,
                              text=True, check=True)
        out[backend] = json.loads(proc.stdout)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--shape", type=int, nargs=5, metavar=("B", "P", "R", "S", "D"), default=[32, 8, 8, 19, 16])
    ap.add_argument("--epoch", action="store_true", help="also time one training epoch per backend")
    args = ap.parse_args(argv)

    backends = available_backends()
    print(f"backends: {', '.join(backends)}; shape B,P,R,S,D = {tuple(args.shape)}")
    header = f"{'kernel':<26}" + "".join(f"{b + ' ms':>14}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}{'max diff':>12}"
    print(header)
    for name, times, diff in time_kernels(kernel_cases(*args.shape), args.repeat):
        line = f"{name:<26}" + "".join(f"{times[b] * 1e3:>14.3f}" for b in backends)
        if diff is not None:
            line += f"{times['python'] / times['compiled']:>9.1f}x{diff:>12.1e}"
        print(line)
    if args.epoch:
        print("\nseconds per training epoch (640 pairs, batch 32, D=16)")
        for backend, row in epoch_times().items():
            print(f"  {backend:<10}" + "  ".join(f"{k}={v:.2f}" for k, v in row.items()))


if __name__ == "__main__":
    main()

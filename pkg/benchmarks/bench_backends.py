"""Compare the numba kernels with the pure-numpy fallback.

Each backend runs in its own interpreter because ``KPK_DISABLE_JIT`` is read
at import time. Timings go through the public entry points, so they include
the dispatch overhead a caller would see.

    python3 benchmarks/bench_backends.py [--iterations 200] [--csv out.csv]
"""
import argparse
import csv
import json
import os
import subprocess
import sys

SHAPES = {
    "mnist-lstm": (40, 68),
    "kws-lstm": (118, 128),
    "kws-gru": (154, 164),
    "har1-bilstm": (178, 255),
    "square-256": (256, 256),
}


def child(iterations, warmup):
    import numpy as np

    from kpk import analysis, baselines, bench, kernels, kpcore

    rng = np.random.default_rng(0)
    out = []
    for name, (m, n) in SHAPES.items():
        plan = kpcore.select_factor_shapes(m, n)
        pair = kpcore.KronFactorPair(rng.standard_normal(plan.left), rng.standard_normal(plan.right))
        x = rng.standard_normal(n)
        sparse = baselines.magnitude_prune(rng.standard_normal((m, n)), 1 - 1 / plan.ratio)
        small = rng.standard_normal((min(m, 64), min(n, 64)))
        cases = {
            "kp_matvec": lambda: kpcore.kp_matvec(pair, x),
            "kron_expand": lambda: kpcore.kron_expand(pair),
            "csr_matvec": lambda: sparse.matvec(x),
        }
        for kernel, fn in cases.items():
            med, _, _ = bench.time_call(fn, iterations, warmup)
            out.append({"shape": name, "kernel": kernel, "backend": kernels.BACKEND, "ns": med})
        med, _, _ = bench.time_call(lambda: analysis.singular_values(small), max(iterations // 20, 5), 2)
        out.append({"shape": name, "kernel": f"svd {small.shape[0]}x{small.shape[1]}", "backend": kernels.BACKEND, "ns": med})
    json.dump(out, sys.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iterations", type=int, default=200)
    ap.add_argument("--warmup", type=int, default=50)
    ap.add_argument("--csv")
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        child(args.iterations, args.warmup)
        return

    results = {}
    for flag in ("0", "1"):
        env = dict(os.environ, KPK_DISABLE_JIT=flag)
        cmd = [sys.executable, __file__, "--child", "--iterations", str(args.iterations), "--warmup", str(args.warmup)]
        proc = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
        for r in json.loads(proc.stdout):
            results.setdefault((r["shape"], r["kernel"]), {})[r["backend"]] = r["ns"]

    header = ("shape", "kernel", "numba_ns", "numpy_ns", "numpy/numba")
    rows = [
        (shape, kernel, f"{t['numba']:.0f}", f"{t['numpy']:.0f}", f"{t['numpy'] / t['numba']:.2f}")
        for (shape, kernel), t in results.items()
    ]
    print("| " + " | ".join(header) + " |")
    print("|" + "---|" * len(header))
    for r in rows:
        print("| " + " | ".join(r) + " |")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)


if __name__ == "__main__":
    main()

"""Matvec and sequence-forward timing harness.

Timing: monotonic ``perf_counter_ns``, warmup calls first, then the median and
10th/90th percentiles over single-call samples. Wall-clock values are
host-relative; only orderings between kernels are meaningful.
"""
import csv
import io
import math
import time
from dataclasses import dataclass

import numpy as np

from . import kernels, kpcore
from .baselines import SparseCSR, lmf_rank_for_target, magnitude_prune
from .cells import build_compressed_network, init_rep, sequence_forward
from .kpcore import KronFactorPair, MultiKronChain, flop_count

WARMUP = 50
ITERATIONS = 200
FIELDS = ("kernel", "dims", "params", "flops", "wall_ns_median", "wall_ns_p10", "wall_ns_p90", "speedup_vs_dense")


@dataclass
class BenchRow:
    kernel: str
    dims: str
    params: int
    flops: int
    wall_ns_median: float
    wall_ns_p10: float
    wall_ns_p90: float
    speedup_vs_dense: float = float("nan")


def time_call(fn, iterations=ITERATIONS, warmup=WARMUP):
    """(median, p10, p90) in nanoseconds over single-call samples."""
    for _ in range(warmup):
        fn()
    samples = np.empty(iterations)
    clock = time.perf_counter_ns
    for i in range(iterations):
        t0 = clock()
        fn()
        samples[i] = clock() - t0
    p10, med, p90 = np.percentile(samples, [10, 50, 90])
    return float(med), float(p10), float(p90)


def _row(kernel, dims, params, flops, fn, iterations, warmup):
    med, p10, p90 = time_call(fn, iterations, warmup)
    return BenchRow(kernel, dims, params, flops, med, p10, p90)


def _square_chain(m, rng):
    f = round(math.log2(m))
    if 2**f != m or f < 2:
        return None
    return MultiKronChain(tuple(rng.uniform(-1, 1, (2, 2)) for _ in range(f)))


def gate_kernel_rows(m, n, seed=0, iterations=ITERATIONS, warmup=WARMUP, reps=None, hkp_target=10.0, backends=False):
    """Rows for every matvec kernel on one ``m x n`` gate matrix."""
    rng = np.random.default_rng(seed)
    reps = set(reps or ("dense", "kp", "kp-naive", "hkp", "lmf", "csr", "multi-kron"))
    x = rng.standard_normal(n)
    dense = rng.uniform(-1, 1, (m, n))
    plan = kpcore.select_factor_shapes(m, n)
    pair = KronFactorPair(rng.uniform(-1, 1, plan.left), rng.uniform(-1, 1, plan.right))
    (m1, n1), (m2, n2) = plan.left, plan.right
    kp_ratio = plan.ratio
    dims = f"{m}x{n}"
    rows = []

    rows.append(_row("dense", dims, m * n, flop_count("dense", m, n), lambda: dense @ x, iterations, warmup))
    if "kp" in reps:
        rows.append(
            _row(f"kp[{kernels.BACKEND}]", f"{dims} as {m1}x{n1} kron {m2}x{n2}", pair.n_params,
                 flop_count("kp", m1, n1, m2, n2), lambda: kpcore.kp_matvec(pair, x), iterations, warmup)
        )
    if "kp-naive" in reps:
        rows.append(
            _row("kp-naive", f"{dims} expand+mv", pair.n_params, m * n, lambda: kpcore.kp_matvec_naive(pair, x),
                 iterations, warmup)
        )
    if "hkp" in reps:
        table = kpcore.hkp_ratio_table(m, n)
        target = min(hkp_target, max(c.ratio for c in table))
        h = init_rep("hkp", m, n, rng, target)
        low = h.lower.shape if h.lower is not None else (0, n)
        hflops = h.r * n + (flop_count("kp", *h.lower.b.shape, *h.lower.c.shape) if h.lower is not None else 0)
        rows.append(
            _row("hkp", f"{dims} r={h.r} lower {low[0]}x{low[1]}", h.n_params, hflops, lambda: kpcore.hkp_matvec(h, x),
                 iterations, warmup)
        )
    if "lmf" in reps:
        d = lmf_rank_for_target(m, n, kp_ratio)
        lr = init_rep("lmf", m, n, rng, kp_ratio)
        rows.append(_row("lmf", f"{dims} d={d}", lr.n_params, flop_count("lmf", m, n, d), lambda: lr.matvec(x),
                         iterations, warmup))
    if "csr" in reps:
        s = magnitude_prune(dense, 1.0 - 1.0 / kp_ratio)
        rows.append(_row(f"csr[{kernels.BACKEND}]", f"{dims} nnz={s.nnz}", s.nnz, flop_count("csr", s.nnz),
                         lambda: s.matvec(x), iterations, warmup))
    if "multi-kron" in reps and m == n:
        chain = _square_chain(m, rng)
        if chain is not None:
            f = len(chain.factors)
            rows.append(
                _row(f"multi-kron-{f}x2x2", f"{dims} expand+mv", chain.n_params, m * n,
                     lambda: kpcore.multi_kron_expand(chain) @ x, iterations, warmup)
            )
    if backends:
        rows.extend(backend_rows(pair, dense, kp_ratio, x, iterations, warmup))
    base = rows[0].wall_ns_median
    for r in rows:
        r.speedup_vs_dense = base / r.wall_ns_median
    return rows


def backend_rows(pair, dense, kp_ratio, x, iterations=ITERATIONS, warmup=WARMUP):
    """Numba and numpy implementations of the same kernels, side by side."""
    b, c = pair.b, pair.c
    cf = kpcore._kp_c_first(b.shape, c.shape)
    s = magnitude_prune(dense, 1.0 - 1.0 / kp_ratio)
    (m1, n1), (m2, n2) = b.shape, c.shape
    kflops = flop_count("kp", m1, n1, m2, n2)
    out = []
    for name, kp_fn, csr_fn, exp_fn in (
        ("numba", kernels.kp_matvec_nb, kernels.csr_matvec_nb, kernels.kron_expand_nb),
        ("numpy", kernels.kp_matvec_np, kernels.csr_matvec_np, kernels.kron_expand_np),
    ):
        out.append(_row(f"kp[{name}]", f"{m1}x{n1} kron {m2}x{n2}", pair.n_params, kflops,
                        lambda f=kp_fn: f(b, c, x, cf), iterations, warmup))
        out.append(_row(f"csr[{name}]", f"nnz={s.nnz}", s.nnz, s.nnz,
                        lambda f=csr_fn: f(s.rows, s.row_ptr, s.col_idx, s.values, x), iterations, warmup))
        out.append(_row(f"kron-expand[{name}]", f"{m1 * m2}x{n1 * n2}", pair.n_params, m1 * m2 * n1 * n2,
                        lambda f=exp_fn: f(b, c), iterations, warmup))
    return out


def sequence_rows(preset, seed=0, iterations=ITERATIONS, warmup=WARMUP):
    """Whole-sequence forward timing, dense baseline against the Kronecker network."""
    rng = np.random.default_rng(seed)
    xs = rng.standard_normal((preset.time_steps, preset.input_dim))
    dense = build_compressed_network(preset.kind, preset.input_dim, preset.hidden_dim, preset.classes, "dense", seed)
    kp = build_compressed_network(preset.kind, preset.input_dim, preset.kp_hidden_dim, preset.classes, "kp", seed)
    rows = []
    for tag, net in (("seq-dense", dense), ("seq-kp", kp)):
        gates = net.cell.gates
        flops = sum(
            flop_count("kp", *g.b.shape, *g.c.shape) if isinstance(g, KronFactorPair) else g.n_params for g in gates
        ) * preset.time_steps
        dims = f"{preset.kind} n={preset.input_dim} m={net.cell.hidden_dim} T={preset.time_steps}"
        rows.append(_row(tag, dims, net.cell.n_params, flops, lambda n=net: sequence_forward(n, xs), iterations, warmup))
    for r in rows:
        r.speedup_vs_dense = rows[0].wall_ns_median / r.wall_ns_median
    return rows


def run_preset(preset, seed=0, iterations=ITERATIONS, warmup=WARMUP, backends=False, sequences=True):
    m, n = preset.gate()
    rows = gate_kernel_rows(m, n, seed, iterations, warmup, backends=backends)
    if sequences and preset.has_network:
        rows.extend(sequence_rows(preset, seed, max(iterations // 4, 20), max(warmup // 5, 5)))
    return rows


def rows_csv(rows, preset=None):
    buf = io.StringIO()
    fields = (("preset",) if preset else ()) + FIELDS
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        vals = [r.kernel, r.dims, r.params, r.flops, f"{r.wall_ns_median:.0f}", f"{r.wall_ns_p10:.0f}",
                f"{r.wall_ns_p90:.0f}", f"{r.speedup_vs_dense:.3f}"]
        w.writerow(([preset] if preset else []) + vals)
    return buf.getvalue()


def rows_markdown(rows):
    head = "| kernel | dims | params | flops | median ns | p10 ns | p90 ns | speedup |"
    lines = [head, "|" + "---|" * 8]
    for r in rows:
        lines.append(
            f"| {r.kernel} | {r.dims} | {r.params} | {r.flops} | {r.wall_ns_median:.0f} | "
            f"{r.wall_ns_p10:.0f} | {r.wall_ns_p90:.0f} | {r.speedup_vs_dense:.2f}x |"
        )
    return "\n".join(lines)


def sparse_from(a, sparsity):
    return magnitude_prune(a, sparsity) if sparsity else SparseCSR.from_dense(a)

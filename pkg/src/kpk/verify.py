"""Self-check suites run by ``kpk verify``.

Each suite draws seeded random instances, compares the library against an
independent reference, and keeps the first counterexample it finds. Library
functions are looked up through their module on every call so a patched
implementation is exercised.
"""
import json
import time
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import analysis, cells, kpcore, quant, train

KP_TOL = 1e-10
KP_GRAD_TOL = 1e-5
BPTT_TOL = 1e-4
RANK_TOL = 1e-10


@dataclass
class SuiteResult:
    name: str
    passed: int
    total: int
    seconds: float
    counterexample: Optional[dict] = None

    @property
    def ok(self):
        return self.passed == self.total


def _rel(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def _dims(rng, hi=16):
    return tuple(int(v) for v in rng.integers(1, hi + 1, size=4))


def _run(name, total, check):
    """Run ``check(i)`` for each trial; it returns ``None`` or a counterexample dict."""
    t0 = time.perf_counter()
    passed, first = 0, None
    for i in range(total):
        bad = check(i)
        if bad is None:
            passed += 1
        elif first is None:
            first = {"trial": i, **bad}
    return SuiteResult(name, passed, total, time.perf_counter() - t0, first)


def kp_oracle(trials, seed):
    rng = np.random.default_rng(seed)

    def check(i):
        m1, n1, m2, n2 = _dims(rng)
        b = rng.standard_normal((m1, n1))
        c = rng.standard_normal((m2, n2))
        x = rng.standard_normal(n1 * n2)
        got = kpcore.kp_matvec(kpcore.KronFactorPair(b, c), x)
        err = _rel(got, np.kron(b, c) @ x)
        return None if err <= KP_TOL else {"dims": [m1, n1, m2, n2], "rel_err": err}

    return _run("kp-oracle", trials, check)


def hkp_oracle(trials, seed):
    rng = np.random.default_rng(seed + 1)

    def check(i):
        m1, n1, m2, n2 = _dims(rng)
        r = int(rng.integers(0, 9))
        b = rng.standard_normal((m1, n1))
        c = rng.standard_normal((m2, n2))
        upper = rng.standard_normal((r, n1 * n2))
        x = rng.standard_normal(n1 * n2)
        h = kpcore.HybridMatrix(upper, kpcore.KronFactorPair(b, c))
        got = kpcore.hkp_matvec(h, x)
        err = _rel(got, np.vstack([upper, np.kron(b, c)]) @ x)
        return None if err <= KP_TOL else {"r": r, "dims": [m1, n1, m2, n2], "rel_err": err}

    return _run("hkp-oracle", trials, check)


def _central(f, a, eps):
    g = np.zeros_like(a)
    for idx in np.ndindex(a.shape):
        keep = a[idx]
        a[idx] = keep + eps
        up = f()
        a[idx] = keep - eps
        down = f()
        a[idx] = keep
        g[idx] = (up - down) / (2 * eps)
    return g


def kp_grad(trials, seed):
    rng = np.random.default_rng(seed + 2)

    def check(i):
        m1, n1, m2, n2 = _dims(rng, 5)
        b = rng.standard_normal((m1, n1))
        c = rng.standard_normal((m2, n2))
        x = rng.standard_normal(n1 * n2)
        g = rng.standard_normal(m1 * m2)
        db, dc, dx = kpcore.kp_matvec_grad(kpcore.KronFactorPair(b, c), x, g)
        f = lambda: float(g @ (np.kron(b, c) @ x))  # noqa: E731
        errs = {
            "b": _rel(db, _central(f, b, 1e-6)),
            "c": _rel(dc, _central(f, c, 1e-6)),
            "x": _rel(dx, _central(f, x, 1e-6)),
        }
        worst = max(errs, key=errs.get)
        return None if errs[worst] <= KP_GRAD_TOL else {"dims": [m1, n1, m2, n2], "tensor": worst, "rel_err": errs[worst]}

    return _run("kp-grad", trials, check)


BPTT_CASES = [
    (kind, rep)
    for kind in ("rnn", "fastrnn", "lstm", "gru", "bilstm")
    for rep in ("dense", "kp", "hkp:1.5", "lmf:1.5", "sparse:2")
]


def bptt_grad(trials, seed):
    """Every cell kind crossed with every representation, cycled over ``trials``."""

    def check(i):
        kind, rep = BPTT_CASES[i % len(BPTT_CASES)]
        rng = np.random.default_rng(seed + 100 + i)
        net = cells.build_compressed_network(kind, 3, 4, 3, rep, seed=seed + i)
        xs = rng.standard_normal((2, 3, 3))
        labels = rng.integers(0, 3, size=2)
        _, grads = train.bptt_grads(net, xs, labels)
        params = {k: np.array(v, dtype=np.float64) for k, v in net.parameters().items()}
        f = lambda: train.bptt_grads(net.with_parameters(params), xs, labels)[0]  # noqa: E731
        for k, v in params.items():
            err = _rel(grads[k], _central(f, v, 1e-6))
            if err > BPTT_TOL:
                return {"kind": kind, "rep": rep, "param": k, "rel_err": err}
        return None

    return _run("bptt-grad", trials, check)


def _low_rank(rng, rows, cols, rank):
    if rank == 0:
        return np.zeros((rows, cols))
    return rng.standard_normal((rows, rank)) @ rng.standard_normal((rank, cols))


def rank_product(trials, seed):
    """``rank(b kron c) == rank(b) * rank(c)`` with factors of planted rank."""
    rng = np.random.default_rng(seed + 3)

    def check(i):
        m1, n1, m2, n2 = _dims(rng, 8)
        rb = int(rng.integers(0, min(m1, n1) + 1))
        rc = int(rng.integers(0, min(m2, n2) + 1))
        b = _low_rank(rng, m1, n1, rb)
        c = _low_rank(rng, m2, n2, rc)
        got = analysis.rank_numeric(kpcore.kron_expand(kpcore.KronFactorPair(b, c)), RANK_TOL)
        want = analysis.rank_numeric(b, RANK_TOL) * analysis.rank_numeric(c, RANK_TOL)
        if got == want == rb * rc:
            return None
        return {"dims": [m1, n1, m2, n2], "planted": [rb, rc], "rank_kron": got, "rank_product": want}

    return _run("rank-product", trials, check)


def quant_codes(trials, seed):
    """Every 8-bit code of both schemes, then random rounding-error bounds."""
    rng = np.random.default_rng(seed + 4)
    scale = 0.037
    codes = np.arange(256, dtype=np.uint8)
    checks = []
    for c in codes:
        checks.append(("float8_e4m3", int(c)))
        checks.append(("int8_symmetric", int(c.view(np.int8))))
    extra = max(trials, 1)

    def check(i):
        if i < len(checks):
            scheme, code = checks[i]
            if scheme == "float8_e4m3":
                v = quant.e4m3_decode(np.uint8(code))
                if np.isnan(v):
                    return None if (code & 0x7F) == 0x7F else {"scheme": scheme, "code": code, "decoded": "nan"}
                back = quant.e4m3_decode(quant.e4m3_encode(v))
                return None if back == v else {"scheme": scheme, "code": code, "value": float(v), "back": float(back)}
            v = quant.dequantize8(quant.QuantTensor(scheme, np.array([code], dtype=np.int8), scale, (1,)))[0]
            back = int(quant.quantize8(np.array([v]), scheme, scale=scale).payload[0])
            # -128 sits outside the symmetric range and saturates to -127
            want = max(code, -127)
            return None if back == want else {"scheme": scheme, "code": code, "back": back}
        a = rng.uniform(-1, 1, 64) * 10.0 ** rng.uniform(-3, 2)
        q = quant.quantize8(a, "int8_symmetric")
        err = np.abs(quant.dequantize8(q) - a)
        if np.any(err > q.scale / 2 * (1 + 1e-12)):
            return {"scheme": "int8_symmetric", "value": float(a[np.argmax(err)]), "err": float(err.max())}
        b = np.clip(a * 10, -quant.E4M3_MAX, quant.E4M3_MAX)
        err = np.abs(quant.dequantize8(quant.quantize8(b, "float8_e4m3")) - b)
        bound = quant.e4m3_half_ulp(b)
        if np.any(err > bound):
            j = int(np.argmax(err - bound))
            return {"scheme": "float8_e4m3", "value": float(b[j]), "err": float(err[j])}
        return None

    return _run("quant-codes", len(checks) + extra, check)


SUITES = {
    "kp-oracle": (kp_oracle, lambda t: t),
    "hkp-oracle": (hkp_oracle, lambda t: max(t // 2, 1)),
    "kp-grad": (kp_grad, lambda t: max(t // 20, 1)),
    "bptt-grad": (bptt_grad, lambda t: min(max(t // 40, 1), len(BPTT_CASES))),
    "rank-product": (rank_product, lambda t: max(t // 2, 1)),
    "quant-codes": (quant_codes, lambda t: max(t // 10, 1)),
}


def run_all(trials=1000, seed=0, only=None):
    """Run every suite (or those named in ``only``) and return their results."""
    out = []
    for name, (fn, count) in SUITES.items():
        if only and name not in only:
            continue
        out.append(fn(count(trials), seed))
    return out


def report_json(results):
    return json.dumps([{**asdict(r), "ok": r.ok} for r in results], indent=2)

"""Kronecker-product algebra.

Factor-shape selection, expansion, the expansion-free matvec and its
gradient, the hybrid (dense top block over a Kronecker block) matvec, and the
parameter / FLOP accounting used everywhere else.

Index convention: ``kron(B, C)[i*m2 + k, j*n2 + l] == B[i, j] * C[k, l]``.
"""
from dataclasses import dataclass
from functools import reduce
from typing import NamedTuple, Optional

import numpy as np

from . import kernels
from .errors import InfeasibleError, ResourceError, ShapeError

#: Largest matrix (in elements) the expansion routines will materialize.
EXPAND_ELEMENT_CAP = 2**26


def _as_matrix(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D matrix, got shape {a.shape}")
    return a


# -- shape selection -------------------------------------------------------


def prime_factorize(n):
    """Ascending prime factors of ``n`` with multiplicity; ``[1]`` for ``n == 1``."""
    n = int(n)
    if n < 1:
        raise ValueError(f"prime_factorize needs n >= 1, got {n}")
    if n == 1:
        return [1]
    out = []
    p = 2
    while p * p <= n:
        while n % p == 0:
            out.append(p)
            n //= p
        p += 1
    if n > 1:
        out.append(n)
    return out


def reduce_list(factors):
    """Merge the two smallest entries until exactly two remain.

    A single entry is padded with 1 first. Equal entries are merged
    positionally (the first two of the ascending list).
    """
    items = sorted(int(f) for f in factors)
    if not items:
        raise ValueError("reduce_list needs at least one factor")
    if len(items) == 1:
        items = [1] + items
    while len(items) > 2:
        first = items.pop(0)
        items[0] *= first
        items.sort()
    return items


@dataclass(frozen=True)
class ShapePlan:
    """Factor dimensions for an ``m x n`` target.

    ``first`` and ``second`` follow the order the selection algorithm emits;
    the left Kronecker operand is ``second`` (see :meth:`left`).
    """

    first: tuple
    second: tuple
    target: tuple

    def __post_init__(self):
        m, n = self.target
        if self.first[0] * self.second[0] != m or self.first[1] * self.second[1] != n:
            raise ShapeError(f"plan {self.first} x {self.second} does not tile {self.target}")

    @property
    def params_compressed(self):
        return self.first[0] * self.first[1] + self.second[0] * self.second[1]

    @property
    def params_dense(self):
        return self.target[0] * self.target[1]

    @property
    def left(self):
        """Shape of the left Kronecker operand ``B``."""
        return self.second

    @property
    def right(self):
        """Shape of the right Kronecker operand ``C``."""
        return self.first

    @property
    def ratio(self):
        return self.params_dense / self.params_compressed


def select_factor_shapes(m, n):
    """Pick two factor shapes whose Kronecker product is ``m x n``."""
    if m < 1 or n < 1:
        raise ValueError(f"dimensions must be positive, got ({m}, {n})")
    rows = sorted(reduce_list(prime_factorize(m)), reverse=True)
    cols = sorted(reduce_list(prime_factorize(n)))
    return ShapePlan(first=(rows[0], cols[0]), second=(rows[1], cols[1]), target=(int(m), int(n)))


def compression_ratio(m, n, plan):
    if tuple(plan.target) != (m, n):
        raise ShapeError(f"plan targets {plan.target}, not {(m, n)}")
    return (m * n) / plan.params_compressed


def _divisors(k):
    return [d for d in range(1, k + 1) if k % d == 0]


def enumerate_kp_ratios(m, n):
    """Every two-factor split of an ``m x n`` matrix with its compression ratio.

    A split and its mirror (factors swapped) are listed once. The scalar split,
    where one factor is ``1 x 1``, is skipped since it stores more numbers
    than the dense matrix. Sorted by descending ratio, then by shape.
    """
    if m < 2 or n < 2:
        raise ValueError(f"enumeration needs m, n >= 2, got ({m}, {n})")
    seen = set()
    out = []
    for m1 in _divisors(m):
        for n1 in _divisors(n):
            a, b = (m1, n1), (m // m1, n // n1)
            if a == (1, 1) or b == (1, 1):
                continue
            key = min(a, b), max(a, b)
            if key in seen:
                continue
            seen.add(key)
            out.append((key, (m * n) / (a[0] * a[1] + b[0] * b[1])))
    out.sort(key=lambda e: (-e[1], e[0]))
    return out


def ratio_levels(entries):
    """Distinct ratio values of an enumeration, descending."""
    return sorted({r for _, r in entries}, reverse=True)


class HKPChoice(NamedTuple):
    r: int
    plan: Optional[ShapePlan]
    params: int
    ratio: float


def hkp_params(m, n, r):
    """Stored numbers for a hybrid matrix whose dense top block has ``r`` rows."""
    if not 0 <= r <= m:
        raise ValueError(f"r must lie in [0, {m}], got {r}")
    if r == m:
        return m * n, None
    plan = select_factor_shapes(m - r, n)
    return r * n + plan.params_compressed, plan


def hkp_ratio_table(m, n):
    """``HKPChoice`` for every ``r`` in ``0..m``."""
    table = []
    for r in range(m + 1):
        params, plan = hkp_params(m, n, r)
        table.append(HKPChoice(r, plan, params, (m * n) / params))
    return table


def hkp_rank_rows_for_target(m, n, target_ratio):
    """Dense top-block height giving the ratio closest to ``target_ratio`` from above.

    Among all ``r`` whose hybrid ratio is at least the target, the one with the
    smallest ratio wins (ties go to the smaller ``r``). The ratio is not
    monotone in ``r`` because the Kronecker block's shape depends on the prime
    structure of ``m - r``.
    """
    if target_ratio < 1:
        raise ValueError(f"target ratio must be >= 1, got {target_ratio}")
    table = hkp_ratio_table(m, n)
    ok = [c for c in table if c.ratio >= target_ratio and (c.r < m or target_ratio <= 1)]
    if not ok:
        best = max(c.ratio for c in table)
        raise InfeasibleError(
            f"target {target_ratio:g}x exceeds the best hybrid ratio {best:.4g}x for {m}x{n}",
            max_ratio=best,
        )
    return min(ok, key=lambda c: (c.ratio, c.r))


# -- representations -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KronFactorPair:
    """``b kron c`` stored as its two factors."""

    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "b", _as_matrix(self.b, "b"))
        object.__setattr__(self, "c", _as_matrix(self.c, "c"))

    @classmethod
    def from_plan(cls, plan, rng, scale=1.0):
        b = rng.uniform(-scale, scale, size=plan.left)
        c = rng.uniform(-scale, scale, size=plan.right)
        return cls(b, c)

    @property
    def shape(self):
        return (self.b.shape[0] * self.c.shape[0], self.b.shape[1] * self.c.shape[1])

    @property
    def n_params(self):
        return self.b.size + self.c.size

    def params(self):
        return {"b": self.b, "c": self.c}

    def with_params(self, p):
        return KronFactorPair(p["b"], p["c"])

    def to_dense(self):
        return kron_expand(self)

    def matvec(self, x):
        return kp_matvec(self, x)

    def apply(self, x):
        """Batched product, one example per row of ``x``."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return self.matvec(x)
        (m1, n1), (m2, n2) = self.b.shape, self.c.shape
        if x.shape[-1] != n1 * n2:
            raise ShapeError(f"input width {x.shape[-1]} != {n1 * n2}")
        xr = x.reshape(-1, n1, n2)
        return np.matmul(self.b, xr @ self.c.T).reshape(-1, m1 * m2)

    def backward(self, x, g):
        """Parameter gradients and input gradient for a batched ``apply``."""
        (m1, n1), (m2, n2) = self.b.shape, self.c.shape
        xr = np.asarray(x, dtype=np.float64).reshape(-1, n1, n2)
        gr = np.asarray(g, dtype=np.float64).reshape(-1, m1, m2)
        xc = xr @ self.c.T
        db = np.einsum("bik,bjk->ij", gr, xc)
        dc = np.einsum("bik,bil->kl", gr, np.matmul(self.b, xr))
        dx = np.matmul(self.b.T, gr) @ self.c
        return {"b": db, "c": dc}, dx.reshape(-1, n1 * n2)


@dataclass(frozen=True, eq=False)
class MultiKronChain:
    factors: tuple

    def __post_init__(self):
        fs = tuple(_as_matrix(f, f"factor {i}") for i, f in enumerate(self.factors))
        if len(fs) < 2:
            raise ShapeError("a Kronecker chain needs at least two factors")
        object.__setattr__(self, "factors", fs)

    @property
    def shape(self):
        return (
            int(np.prod([f.shape[0] for f in self.factors])),
            int(np.prod([f.shape[1] for f in self.factors])),
        )

    @property
    def n_params(self):
        return sum(f.size for f in self.factors)


@dataclass(frozen=True, eq=False)
class HybridMatrix:
    """Dense ``upper`` block (``r`` rows) stacked over a Kronecker ``lower`` block.

    ``lower`` is ``None`` when ``r`` equals the full row count.
    """

    upper: np.ndarray
    lower: Optional[KronFactorPair]

    def __post_init__(self):
        upper = np.asarray(self.upper, dtype=np.float64)
        if upper.ndim != 2:
            raise ShapeError(f"upper block must be 2-D, got shape {upper.shape}")
        object.__setattr__(self, "upper", upper)
        if self.lower is None:
            if upper.shape[0] == 0:
                raise ShapeError("hybrid matrix with no upper rows needs a lower block")
        elif upper.shape[1] != self.lower.shape[1]:
            raise ShapeError(f"upper has {upper.shape[1]} columns, lower has {self.lower.shape[1]}")

    @property
    def r(self):
        return self.upper.shape[0]

    @property
    def shape(self):
        low = self.lower.shape[0] if self.lower is not None else 0
        return (self.r + low, self.upper.shape[1])

    @property
    def n_params(self):
        return self.upper.size + (self.lower.n_params if self.lower is not None else 0)

    def params(self):
        p = {"upper": self.upper}
        if self.lower is not None:
            p.update(self.lower.params())
        return p

    def with_params(self, p):
        lower = self.lower.with_params(p) if self.lower is not None else None
        return HybridMatrix(p["upper"], lower)

    def to_dense(self):
        if self.lower is None:
            return self.upper.copy()
        return np.vstack([self.upper, kron_expand(self.lower)])

    def matvec(self, x):
        return hkp_matvec(self, x)

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return self.matvec(x)
        top = x @ self.upper.T
        if self.lower is None:
            return top
        return np.concatenate([top, self.lower.apply(x)], axis=1)

    def backward(self, x, g):
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.shape[1])
        g = np.asarray(g, dtype=np.float64).reshape(-1, self.shape[0])
        gu = g[:, : self.r]
        grads = {"upper": gu.T @ x}
        dx = gu @ self.upper
        if self.lower is not None:
            lg, ldx = self.lower.backward(x, g[:, self.r :])
            grads.update(lg)
            dx = dx + ldx
        return grads, dx


# -- expansion ---------------------------------------------------------------


def _check_cap(shape, cap):
    cap = EXPAND_ELEMENT_CAP if cap is None else cap
    if shape[0] * shape[1] > cap:
        raise ResourceError(f"expansion to {shape[0]}x{shape[1]} exceeds the {cap}-element cap")


def kron_expand(pair, cap=None):
    """Materialize ``pair.b kron pair.c``."""
    _check_cap(pair.shape, cap)
    return kernels.kron_expand_kernel(pair.b, pair.c)


def multi_kron_expand(chain, cap=None):
    """Materialize ``W0 kron W1 kron ...``, folding from the right."""
    _check_cap(chain.shape, cap)
    return reduce(lambda acc, f: kernels.kron_expand_kernel(f, acc), reversed(chain.factors[:-1]), chain.factors[-1])


# -- matvec ------------------------------------------------------------------


def _kp_c_first(b_shape, c_shape):
    (m1, n1), (m2, n2) = b_shape, c_shape
    return n1 * n2 * m2 + m1 * n1 * m2 <= m1 * n1 * n2 + m1 * n2 * m2


def kp_matvec(pair, x):
    """``(b kron c) @ x`` without forming the product."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    n = pair.shape[1]
    if x.shape != (n,):
        raise ShapeError(f"x must have length {n}, got shape {x.shape}")
    return kernels.kp_matvec_kernel(pair.b, pair.c, x, _kp_c_first(pair.b.shape, pair.c.shape))


def kp_matvec_naive(pair, x):
    """Expand-then-multiply reference path."""
    return kron_expand(pair) @ np.asarray(x, dtype=np.float64)


def kp_matvec_grad(pair, x, g):
    """Gradients of ``g . kp_matvec(pair, x)`` w.r.t. ``b``, ``c`` and ``x``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    m, n = pair.shape
    if x.shape != (n,) or g.shape != (m,):
        raise ShapeError(f"expected x of length {n} and g of length {m}, got {x.shape} and {g.shape}")
    grads, dx = pair.backward(x[None, :], g[None, :])
    return grads["b"], grads["c"], dx[0]


def hkp_matvec(h, x):
    """``[upper; b kron c] @ x``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    n = h.shape[1]
    if x.shape != (n,):
        raise ShapeError(f"x must have length {n}, got shape {x.shape}")
    top = h.upper @ x
    if h.lower is None:
        return top
    return np.concatenate([top, kp_matvec(h.lower, x)])


# -- FLOP accounting ----------------------------------------------------------


def flop_count(kind, *dims):
    """Multiply-accumulate count of one matvec.

    ``dense``: (m, n); ``kp``: (m1, n1, m2, n2) with ``b`` m1 x n1 and ``c``
    m2 x n2; ``hkp``: (r, n, m1, n1, m2, n2); ``lmf``: (m, n, d);
    ``csr``: (nnz,). The Kronecker cost uses the cheaper association order.
    """
    if kind == "dense":
        m, n = dims
        return m * n
    if kind == "kp":
        m1, n1, m2, n2 = dims
        return min(m2 * n2 * n1 + m2 * n1 * m1, m1 * n1 * n2 + m1 * n2 * m2)
    if kind == "hkp":
        r, n, m1, n1, m2, n2 = dims
        return r * n + flop_count("kp", m1, n1, m2, n2)
    if kind == "lmf":
        m, n, d = dims
        return d * n + m * d
    if kind == "csr":
        (nnz,) = dims
        return int(nnz)
    raise ValueError(f"unknown kernel kind {kind!r}")

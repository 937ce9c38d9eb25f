"""Comparison representations: magnitude pruning stored as CSR, and low-rank factors."""
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .analysis import svd
from .errors import ShapeError


@dataclass(frozen=True, eq=False)
class SparseCSR:
    rows: int
    cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        row_ptr = np.asarray(self.row_ptr, dtype=np.int64)
        col_idx = np.asarray(self.col_idx, dtype=np.int32)
        values = np.asarray(self.values, dtype=np.float64)
        if row_ptr.shape != (self.rows + 1,) or row_ptr[0] != 0 or np.any(np.diff(row_ptr) < 0):
            raise ShapeError("row_ptr must start at 0, be nondecreasing and have rows + 1 entries")
        if col_idx.shape != values.shape or row_ptr[-1] != values.size:
            raise ShapeError("col_idx/values length must equal row_ptr[-1]")
        if col_idx.size and (col_idx.min() < 0 or col_idx.max() >= self.cols):
            raise ShapeError("column index out of range")
        for i in range(self.rows):
            seg = col_idx[row_ptr[i] : row_ptr[i + 1]]
            if seg.size > 1 and np.any(np.diff(seg) <= 0):
                raise ShapeError(f"column indices of row {i} are not strictly increasing")
        object.__setattr__(self, "row_ptr", row_ptr)
        object.__setattr__(self, "col_idx", col_idx)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_dense(cls, a, mask=None):
        a = np.asarray(a, dtype=np.float64)
        mask = a != 0 if mask is None else np.asarray(mask, dtype=bool)
        rows, cols = np.nonzero(mask)
        row_ptr = np.zeros(a.shape[0] + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=a.shape[0]), out=row_ptr[1:])
        return cls(a.shape[0], a.shape[1], row_ptr, cols, a[rows, cols])

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def nnz(self):
        return int(self.row_ptr[-1])

    @property
    def n_params(self):
        return self.nnz

    def storage_bytes(self, value_bytes=4, index_bytes=4):
        """Bytes for values, column indices and row pointers."""
        return self.nnz * (value_bytes + index_bytes) + (self.rows + 1) * index_bytes

    def _row_of(self):
        return np.repeat(np.arange(self.rows), np.diff(self.row_ptr))

    def params(self):
        return {"values": self.values}

    def with_params(self, p):
        return SparseCSR(self.rows, self.cols, self.row_ptr, self.col_idx, p["values"])

    def to_dense(self):
        out = np.zeros(self.shape)
        out[self._row_of(), self.col_idx] = self.values
        return out

    def matvec(self, x):
        return csr_matvec(self, x)

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return self.matvec(x)
        prod = x[:, self.col_idx] * self.values
        out = np.zeros((x.shape[0], self.rows))
        for i in range(self.rows):
            lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
            if hi > lo:
                out[:, i] = prod[:, lo:hi].sum(axis=1)
        return out

    def backward(self, x, g):
        # the sparsity mask is frozen: only surviving entries receive gradient
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.cols)
        g = np.asarray(g, dtype=np.float64).reshape(-1, self.rows)
        dvalues = np.einsum("bk,bk->k", g[:, self._row_of()], x[:, self.col_idx])
        return {"values": dvalues}, g @ self.to_dense()


@dataclass(frozen=True, eq=False)
class LowRankPair:
    """``u @ v`` with ``u`` m x d and ``v`` d x n."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.ndim != 2 or v.ndim != 2 or u.shape[1] != v.shape[0]:
            raise ShapeError(f"incompatible low-rank factors {u.shape} and {v.shape}")
        if not 1 <= u.shape[1] <= min(u.shape[0], v.shape[1]):
            raise ShapeError(f"rank {u.shape[1]} outside [1, {min(u.shape[0], v.shape[1])}]")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def d(self):
        return self.u.shape[1]

    @property
    def shape(self):
        return (self.u.shape[0], self.v.shape[1])

    @property
    def n_params(self):
        return self.u.size + self.v.size

    def params(self):
        return {"u": self.u, "v": self.v}

    def with_params(self, p):
        return LowRankPair(p["u"], p["v"])

    def to_dense(self):
        return self.u @ self.v

    def matvec(self, x):
        return lmf_matvec(self, x)

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) @ self.v.T) @ self.u.T

    def backward(self, x, g):
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.shape[1])
        g = np.asarray(g, dtype=np.float64).reshape(-1, self.shape[0])
        h = x @ self.v.T
        dh = g @ self.u
        return {"u": g.T @ h, "v": dh.T @ x}, dh @ self.v


def magnitude_prune(a, sparsity):
    """One-shot magnitude pruning.

    Zeroes the ``floor(sparsity * size)`` smallest-magnitude entries, ties
    broken by row-major position, and keeps every other entry (explicit zeros
    included) so ``nnz == size - floor(sparsity * size)``.
    """
    a = np.asarray(a, dtype=np.float64)
    if not 0 <= sparsity < 1:
        raise ValueError(f"sparsity must lie in [0, 1), got {sparsity}")
    k = math.floor(sparsity * a.size)
    keep = np.ones(a.size, dtype=bool)
    keep[np.argsort(np.abs(a).ravel(), kind="stable")[:k]] = False
    return SparseCSR.from_dense(a, keep.reshape(a.shape))


def csr_matvec(s, x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != (s.cols,):
        raise ShapeError(f"x must have length {s.cols}, got shape {x.shape}")
    return kernels.csr_matvec_kernel(s.rows, s.row_ptr, s.col_idx, s.values, x)


def lmf_rank_for_target(m, n, target_ratio):
    """Inner dimension ``d`` of a rank-``d`` factorization hitting ``target_ratio``.

    ``d`` is at least 1 and at most ``min(m, n)``. A ``UserWarning`` is issued
    when the factors store at least as many numbers as the dense matrix.
    """
    if target_ratio < 1:
        raise ValueError(f"target ratio must be >= 1, got {target_ratio}")
    d = min(max(1, math.floor(m * n / (target_ratio * (m + n)))), m, n)
    if d * (m + n) >= m * n:
        warnings.warn(f"rank {d} factors of a {m}x{n} matrix give no compression", stacklevel=2)
    return d


def lmf_factorize(a, d):
    """Best rank-``d`` Frobenius approximation as a :class:`LowRankPair`."""
    a = np.asarray(a, dtype=np.float64)
    if not 1 <= d <= min(a.shape):
        raise ValueError(f"rank must lie in [1, {min(a.shape)}], got {d}")
    u, s, vt = svd(a)
    return LowRankPair(u[:, :d] * s[:d], vt[:d])


def lmf_matvec(p, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (p.shape[1],):
        raise ShapeError(f"x must have length {p.shape[1]}, got shape {x.shape}")
    return p.u @ (p.v @ x)

"""Spectral diagnostics: singular values, numerical rank, conditioning."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DataError

MAX_SIDE = 2048
RANK_TOL = 1e-10


def _checked(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DataError(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DataError("matrix has non-finite entries")
    if min(a.shape) > MAX_SIDE:
        raise DataError(f"smaller side {min(a.shape)} exceeds {MAX_SIDE}")
    return a


def svd(a, tol=1e-15, max_sweeps=60):
    """Thin SVD ``a == u @ diag(s) @ vt`` by one-sided Jacobi rotations.

    Rotations act on the orientation with fewer columns. ``s`` is descending;
    left vectors paired with zero singular values are left as zero columns.
    """
    a = _checked(a)
    flip = a.shape[0] < a.shape[1]
    work = a.T if flip else a
    if work.size == 0:
        k = min(a.shape)
        return np.zeros((a.shape[0], k)), np.zeros(k), np.zeros((k, a.shape[1]))
    w, v = kernels.jacobi_orthogonalize(np.ascontiguousarray(work), tol, max_sweeps)
    s = np.sqrt(np.einsum("ij,ij->j", w, w))
    order = np.argsort(-s, kind="stable")
    s, w, v = s[order], w[:, order], v[:, order]
    u = np.zeros_like(w)
    nz = s > 0
    u[:, nz] = w[:, nz] / s[nz]
    if flip:
        return v, s, u.T
    return u, s, v.T


def singular_values(a):
    return svd(a)[1]


@dataclass(frozen=True)
class SpectralReport:
    singular_values: np.ndarray
    rank: int
    condition_number: float
    sigma_max: float

    def rows(self):
        """``(label, value)`` pairs for tabular output."""
        return [
            ("rank", self.rank),
            ("sigma_max", self.sigma_max),
            ("condition_number", self.condition_number),
            ("sigma_min", float(self.singular_values[-1]) if self.singular_values.size else 0.0),
        ]


def rank_numeric(a, tol=RANK_TOL, s=None):
    s = singular_values(a) if s is None else s
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.count_nonzero(s > tol * s[0]))


def condition_number(a, tol=RANK_TOL, s=None):
    """``sigma_max / sigma_min``; ``inf`` when the matrix is numerically rank deficient."""
    s = singular_values(a) if s is None else s
    if s.size == 0 or rank_numeric(None, tol, s) < s.size:
        return float("inf")
    return float(s[0] / s[-1])


def spectral_report(a, tol=RANK_TOL):
    s = singular_values(a)
    return SpectralReport(
        singular_values=s,
        rank=rank_numeric(None, tol, s),
        condition_number=condition_number(None, tol, s),
        sigma_max=float(s[0]) if s.size else 0.0,
    )


def amplification_bound_check(a, trials, seed=0):
    """Largest ``|a @ x|`` over sampled unit vectors, next to ``sigma_max``.

    The probe set starts with the standard basis vectors, then continues with
    uniformly random directions until ``trials`` probes have been evaluated.
    """
    a = _checked(a)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    n = a.shape[1]
    n_basis = min(trials, n)
    probes = [np.eye(n)[:n_basis]]
    rest = trials - n_basis
    if rest:
        x = np.random.default_rng(seed).standard_normal((rest, n))
        probes.append(x / np.linalg.norm(x, axis=1, keepdims=True))
    x = np.vstack(probes)
    sampled = float(np.max(np.linalg.norm(x @ a.T, axis=1)))
    return sampled, float(singular_values(a)[0])

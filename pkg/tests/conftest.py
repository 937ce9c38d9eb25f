"""Independent reference implementations shared by the test modules.

None of these call into kpk; they are deliberately slow and literal.
"""
import numpy as np
import pytest


def kron_by_index(b, c):
    """Kronecker product from the index formula, one entry at a time."""
    m1, n1 = b.shape
    m2, n2 = c.shape
    out = np.empty((m1 * m2, n1 * n2))
    for i in range(m1):
        for j in range(n1):
            for k in range(m2):
                for l in range(n2):
                    out[i * m2 + k, j * n2 + l] = b[i, j] * c[k, l]
    return out


def _count_below(g, sigma):
    """Eigenvalues of symmetric ``g`` below ``sigma``, by LDL^T inertia."""
    n = g.shape[0]
    a = g - sigma * np.eye(n)
    d = np.zeros(n)
    lo = np.zeros((n, n))
    neg = 0
    for j in range(n):
        dj = a[j, j] - np.sum(lo[j, :j] ** 2 * d[:j])
        if dj == 0.0:
            dj = -1e-300
        d[j] = dj
        neg += dj < 0
        for i in range(j + 1, n):
            lo[i, j] = (a[i, j] - np.sum(lo[i, :j] * lo[j, :j] * d[:j])) / dj
    return neg


def singular_values_by_bisection(a, rel=1e-13):
    """Singular values of ``a`` (descending) from Gram-matrix eigenvalue bisection."""
    a = np.asarray(a, dtype=np.float64)
    g = a.T @ a if a.shape[0] >= a.shape[1] else a @ a.T
    n = g.shape[0]
    hi0 = float(np.sum(np.abs(g))) + 1.0
    eig = []
    for k in range(n):
        # k-th smallest eigenvalue: the smallest x with count_below(x) > k
        lo, hi = -1e-12 * hi0, hi0
        while hi - lo > rel * max(hi, 1e-300):
            mid = 0.5 * (lo + hi)
            if _count_below(g, mid) > k:
                hi = mid
            else:
                lo = mid
        eig.append(0.5 * (lo + hi))
    return np.sqrt(np.maximum(eig, 0.0))[::-1]


def central_diff(f, a, eps=1e-6):
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


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdict lines so they land in the plain log."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", None) != "call":
                continue
            lines += [v for k, v in getattr(rep, "user_properties", []) if k == "acceptance"]
    if lines:
        terminalreporter.section("acceptance")
        for line in sorted(lines, key=lambda s: int(s.split()[1][1:])):
            terminalreporter.write_line(line)

"""Hot numeric kernels.

Every kernel exists twice: a numba ``@njit`` loop version (``*_nb``) and a
pure-numpy version (``*_np``). The public name points at one of them based on
:data:`kpk._jit.USE_NUMBA`; both stay importable so the benchmark and the
parity tests can call them side by side.
"""
import numpy as np

from ._jit import USE_NUMBA, njit

# -- Kronecker expansion --------------------------------------------------


@njit
def kron_expand_nb(b, c):
    m1, n1 = b.shape
    m2, n2 = c.shape
    out = np.empty((m1 * m2, n1 * n2))
    for i in range(m1):
        for j in range(n1):
            bij = b[i, j]
            for k in range(m2):
                row = i * m2 + k
                for l in range(n2):
                    out[row, j * n2 + l] = bij * c[k, l]
    return out


def kron_expand_np(b, c):
    m1, n1 = b.shape
    m2, n2 = c.shape
    return (b[:, None, :, None] * c[None, :, None, :]).reshape(m1 * m2, n1 * n2)


# -- expansion-free Kronecker matvec -------------------------------------
#
# (B kron C) x == ravel(B @ reshape(x, n1, n2) @ C.T)
# c_first=True evaluates reshape(x) @ C.T first.


@njit
def kp_matvec_nb(b, c, x, c_first):
    m1, n1 = b.shape
    m2, n2 = c.shape
    y = np.zeros(m1 * m2)
    if c_first:
        t = np.zeros((n1, m2))
        for j in range(n1):
            for k in range(m2):
                acc = 0.0
                for l in range(n2):
                    acc += x[j * n2 + l] * c[k, l]
                t[j, k] = acc
        for i in range(m1):
            for j in range(n1):
                bij = b[i, j]
                for k in range(m2):
                    y[i * m2 + k] += bij * t[j, k]
    else:
        t = np.zeros((m1, n2))
        for i in range(m1):
            for j in range(n1):
                bij = b[i, j]
                for l in range(n2):
                    t[i, l] += bij * x[j * n2 + l]
        for i in range(m1):
            for k in range(m2):
                acc = 0.0
                for l in range(n2):
                    acc += t[i, l] * c[k, l]
                y[i * m2 + k] = acc
    return y


def kp_matvec_np(b, c, x, c_first):
    xr = x.reshape(b.shape[1], c.shape[1])
    if c_first:
        return (b @ (xr @ c.T)).ravel()
    return ((b @ xr) @ c.T).ravel()


# -- CSR matvec ------------------------------------------------------------


@njit
def csr_matvec_nb(rows, row_ptr, col_idx, values, x):
    y = np.zeros(rows)
    for i in range(rows):
        acc = 0.0
        for k in range(row_ptr[i], row_ptr[i + 1]):
            acc += values[k] * x[col_idx[k]]
        y[i] = acc
    return y


def csr_matvec_np(rows, row_ptr, col_idx, values, x):
    row_of = np.repeat(np.arange(rows), np.diff(row_ptr))
    return np.bincount(row_of, weights=values * x[col_idx], minlength=rows).astype(np.float64)


# -- one-sided Jacobi SVD --------------------------------------------------
#
# Both versions take a matrix with rows >= cols and return (work, v) where
# the columns of ``work`` are mutually orthogonal and a == work @ v.T.


@njit
def jacobi_orthogonalize_nb(a, tol, max_sweeps):
    m, n = a.shape
    u = a.copy()
    v = np.eye(n)
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for i in range(m):
                    up = u[i, p]
                    uq = u[i, q]
                    alpha += up * up
                    beta += uq * uq
                    gamma += up * uq
                if gamma == 0.0 or abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                if zeta == 0.0:
                    t = 1.0
                cs = 1.0 / np.sqrt(1.0 + t * t)
                sn = cs * t
                for i in range(m):
                    up = u[i, p]
                    uq = u[i, q]
                    u[i, p] = cs * up - sn * uq
                    u[i, q] = sn * up + cs * uq
                for i in range(n):
                    vp = v[i, p]
                    vq = v[i, q]
                    v[i, p] = cs * vp - sn * vq
                    v[i, q] = sn * vp + cs * vq
        if not rotated:
            break
    return u, v


def _round_robin(n):
    """Pairings of ``n`` (even) columns so each pair meets once per sweep."""
    idx = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        rounds.append((np.array(idx[:half]), np.array(idx[half:][::-1])))
        idx = [idx[0]] + [idx[-1]] + idx[1:-1]
    return rounds


def jacobi_orthogonalize_np(a, tol, max_sweeps):
    m, n = a.shape
    pad = n % 2
    u = np.zeros((m, n + pad))
    u[:, :n] = a
    v = np.eye(n + pad)
    rounds = _round_robin(n + pad)
    for _ in range(max_sweeps):
        rotated = False
        for p, q in rounds:
            up, uq = u[:, p], u[:, q]
            alpha = np.einsum("ij,ij->j", up, up)
            beta = np.einsum("ij,ij->j", uq, uq)
            gamma = np.einsum("ij,ij->j", up, uq)
            act = (gamma != 0.0) & (np.abs(gamma) > tol * np.sqrt(alpha * beta))
            if not act.any():
                continue
            rotated = True
            p, q = p[act], q[act]
            alpha, beta, gamma = alpha[act], beta[act], gamma[act]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta == 0.0, 1.0, np.sign(zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta)))
            cs = 1.0 / np.sqrt(1.0 + t * t)
            sn = cs * t
            up, uq = u[:, p], u[:, q]
            u[:, p] = cs * up - sn * uq
            u[:, q] = sn * up + cs * uq
            vp, vq = v[:, p], v[:, q]
            v[:, p] = cs * vp - sn * vq
            v[:, q] = sn * vp + cs * vq
        if not rotated:
            break
    return u[:, :n], v[:n, :n]


if USE_NUMBA:
    kron_expand_kernel = kron_expand_nb
    kp_matvec_kernel = kp_matvec_nb
    csr_matvec_kernel = csr_matvec_nb
    jacobi_orthogonalize = jacobi_orthogonalize_nb
else:
    kron_expand_kernel = kron_expand_np
    kp_matvec_kernel = kp_matvec_np
    csr_matvec_kernel = csr_matvec_np
    jacobi_orthogonalize = jacobi_orthogonalize_np

BACKEND = "numba" if USE_NUMBA else "numpy"

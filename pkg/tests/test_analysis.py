import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import rel_err, singular_values_by_bisection
from kpk import analysis, kpcore
from kpk.errors import DataError


def test_singular_value_examples():
    assert np.allclose(analysis.singular_values(np.eye(5)), np.ones(5), atol=1e-15)
    assert np.array_equal(analysis.singular_values(np.diag([3.0, 0.0])), [3.0, 0.0])


@pytest.mark.parametrize("shape", [(10, 7), (7, 10), (1, 6), (12, 12)])
def test_singular_values_vs_bisection(shape, rng):
    a = rng.standard_normal(shape)
    assert rel_err(analysis.singular_values(a), singular_values_by_bisection(a)) < 1e-8


@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 9999))
@settings(max_examples=30, deadline=None)
def test_svd_reconstructs(m, n, seed):
    a = np.random.default_rng(seed).standard_normal((m, n))
    u, s, vt = analysis.svd(a)
    assert np.all(np.diff(s) <= 0)
    assert np.allclose(u @ np.diag(s) @ vt, a, atol=1e-12)
    assert np.allclose(vt @ vt.T, np.eye(min(m, n)), atol=1e-12)


def test_svd_guards():
    with pytest.raises(DataError):
        analysis.singular_values(np.array([[1.0, np.nan]]))
    with pytest.raises(DataError):
        analysis.singular_values(np.zeros((analysis.MAX_SIDE + 1, analysis.MAX_SIDE + 1)))


def test_rank_examples(rng):
    assert analysis.rank_numeric(np.outer([1.0, 2, 3], [4.0, 5])) == 1
    assert analysis.rank_numeric(np.zeros((4, 3))) == 0
    full = rng.standard_normal((5, 5))
    low = rng.standard_normal((4, 2)) @ rng.standard_normal((2, 4))
    k = kpcore.kron_expand(kpcore.KronFactorPair(full, low))
    assert analysis.rank_numeric(k) == 10


def test_condition_number_examples(rng):
    assert analysis.condition_number(np.eye(3)) == pytest.approx(1.0)
    assert analysis.condition_number(np.diag([10.0, 1.0])) == pytest.approx(10.0)
    q, _ = np.linalg.qr(rng.standard_normal((8, 5)))
    assert abs(analysis.condition_number(q) - 1.0) < 1e-8
    assert analysis.condition_number(np.diag([1.0, 0.0])) == float("inf")


def test_spectral_report(rng):
    a = rng.standard_normal((6, 4))
    rep = analysis.spectral_report(a)
    assert rep.rank == 4
    assert rep.sigma_max == pytest.approx(rep.singular_values[0])
    assert rep.condition_number == pytest.approx(rep.singular_values[0] / rep.singular_values[-1])
    assert dict(rep.rows())["rank"] == 4


def test_amplification_bound(rng):
    sampled, smax = analysis.amplification_bound_check(np.eye(4), 50)
    assert sampled <= 1.0 + 1e-15 and smax == pytest.approx(1.0)
    sampled, smax = analysis.amplification_bound_check(np.diag([5.0, 1.0]), 3)
    assert sampled == 5.0 and smax == pytest.approx(5.0)
    a = rng.standard_normal((50, 50))
    sampled, smax = analysis.amplification_bound_check(a, 10_000, seed=3)
    assert sampled <= smax * (1 + 1e-12)
    with pytest.raises(ValueError):
        analysis.amplification_bound_check(a, 0)

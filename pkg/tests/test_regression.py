import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ilalab import regression as reg

from oracles import ridge_gd, svr_pgd


def problem(seed, N, m, zero_row=True):
    rng = np.random.default_rng(seed)
    H = rng.normal(size=(N, m))
    if zero_row:
        H[0] = 0.0  # the anchor row of every trajectory dataset
    r = rng.uniform(0.0, 3.0, size=N)
    return H, r


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


# -------------------------------------------------------------------- ridge


def test_ridge_trivial_scalar():
    # (h^2 + lam)^-1 h r with h=2, r=3, lam=1
    np.testing.assert_allclose(reg.ridge_primal([[2.0]], [3.0], 1.0), [1.2])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 12), st.integers(1, 30),
       st.sampled_from([1e-2, 1.0, 1e2]))
def test_ridge_primal_equals_dual(seed, N, m, lam):
    H, r = problem(seed, N, m)
    assert rel(reg.ridge_dual(H, r, lam), reg.ridge_primal(H, r, lam)) < 1e-8


@pytest.mark.parametrize("seed,N,m,lam", [(0, 11, 6, 1.0), (1, 6, 20, 0.5), (2, 11, 40, 3.0)])
def test_ridge_matches_gradient_descent(seed, N, m, lam):
    H, r = problem(seed, N, m)
    assert rel(reg.ridge_primal(H, r, lam), ridge_gd(H, r, lam)) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(3, 12), st.integers(2, 50))
def test_strong_ridge_aligns_with_correlation(seed, N, m):
    H, r = problem(seed, N, m)
    lam = 1e10
    w = reg.ridge_primal(H, r, lam)
    approx = reg.ridge_approx(H, r)
    cos = w @ approx / (np.linalg.norm(w) * np.linalg.norm(approx))
    assert cos > 0.999999
    # the gap is a vector-level O(1/lam) term, so bound it in norm
    assert rel(w * lam, approx) < 1e-6


def test_ridge_rejects_bad_input():
    with pytest.raises(ValueError):
        reg.ridge_primal(np.ones((2, 2)), np.ones(2), 0.0)
    with pytest.raises(reg.DegenerateDataset):
        reg.ridge_dual(np.zeros((3, 2)), np.ones(3), 1.0)
    with pytest.raises(ValueError):
        reg.ridge_primal(np.ones((2, 2)), np.ones(3), 1.0)
    with pytest.raises(ValueError):
        reg.ridge_primal(np.array([[np.inf, 0.0]]), np.ones(1), 1.0)


def test_spd_solve_escalates_jitter():
    A = np.ones((3, 3))  # rank one, Cholesky fails without jitter
    x = reg.spd_solve(A, np.ones(3))
    assert np.isfinite(x).all()


# -------------------------------------------------------------- elastic net


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 12), st.integers(1, 30),
       st.sampled_from([1e-2, 1.0, 10.0]))
def test_elasticnet_without_l1_is_ridge(seed, N, m, l2):
    H, r = problem(seed, N, m)
    assert rel(reg.elasticnet(H, r, 0.0, l2), reg.ridge_primal(H, r, l2)) < 1e-7


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(3, 12), st.integers(2, 20),
       st.sampled_from([0.05, 0.5, 2.0]), st.sampled_from([0.1, 1.0]))
def test_elasticnet_reaches_zero_duality_gap(seed, N, m, l1, l2):
    H, r = problem(seed, N, m)
    w = reg.elasticnet(H, r, l1, l2)
    obj = np.sum((r - H @ w) ** 2) + l1 * np.abs(w).sum() + l2 * w @ w
    assert reg.elasticnet_gap(H, r, w, l1, l2) <= 1e-6 * max(obj, 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(3, 12), st.integers(2, 200),
       st.sampled_from([0.01, 0.05, 0.5]), st.sampled_from([0.1, 1.0]))
def test_warm_started_elasticnet_matches_cold_start(seed, N, m, l1, l2):
    H, r = problem(seed, N, m)
    H = H * 4.0  # strongly correlated, badly conditioned columns are the slow case for cold CD
    cold, _, ok = reg._enet_cd(np.asfortranarray(H), r, l1, l2, 1e-13, 10**6, np.zeros(m))
    assert ok
    assert rel(reg.elasticnet(H, r, l1, l2), cold) < 1e-8


def test_elasticnet_large_l1_gives_zero():
    H, r = problem(0, 8, 5)
    lmax = 2 * np.abs(H.T @ r).max()
    assert not reg.elasticnet(H, r, lmax * 1.01, 1.0).any()
    assert reg.elasticnet(H, r, lmax * 0.5, 1.0).any()


def test_elasticnet_sparsity_grows_with_l1():
    H, r = problem(3, 10, 40)
    nnz = [np.count_nonzero(reg.elasticnet(H, r, l1, 1.0)) for l1 in (0.05, 1.0, 5.0, 20.0)]
    assert nnz == sorted(nnz, reverse=True)


def test_elasticnet_rejects_bad_strengths():
    with pytest.raises(ValueError):
        reg.elasticnet(np.ones((2, 2)), np.ones(2), 0.0, 0.0)
    with pytest.raises(ValueError):
        reg.elasticnet(np.ones((2, 2)), np.ones(2), -1.0, 1.0)


def test_elasticnet_reports_non_convergence():
    H, r = problem(0, 10, 20)
    with pytest.raises(reg.ConvergenceError) as info:
        reg.elasticnet(H, r, 0.1, 1e-6, tol=1e-15, max_sweeps=2)
    assert info.value.iterations == 2


# ---------------------------------------------------------------------- SVR


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 8), st.integers(1, 4),
       st.sampled_from([0.01, 0.1, 1.0]), st.sampled_from([0.0, 0.1, 0.5]))
def test_svr_matches_projected_gradient_qp(seed, N, m, C, e):
    H, r = problem(seed, N, m)
    w = reg.svr(H, r, C, e, tol=1e-12)
    ref = svr_pgd(H, r, C, e)
    assert np.linalg.norm(w - ref) <= 1e-3 * max(np.linalg.norm(ref), 1e-3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 10), st.integers(1, 10),
       st.sampled_from([0.01, 1.0]), st.sampled_from([0.0, 0.2]))
def test_svr_dual_is_feasible(seed, N, m, C, e):
    H, r = problem(seed, N, m)
    beta = reg.svr_dual_coefficients(H, r, C, e)
    assert np.all(np.abs(beta) <= C + 1e-12)
    np.testing.assert_allclose(H.T @ beta, reg.svr(H, r, C, e))


def test_svr_small_c_is_scaled_correlation():
    """All duals saturate at +C when every residual is positive, so w = C H^T r / r."""
    H, r = problem(4, 9, 6)
    w = reg.svr(H, r, 1e-10, 0.0)
    np.testing.assert_allclose(w, 1e-10 * H.T @ np.ones(9), rtol=1e-8)


def test_svr_wide_tube_gives_zero_guide():
    H, r = problem(5, 6, 3)
    assert not reg.svr(H, r, 1.0, e=10.0).any()


def test_svr_rejects_bad_hyper():
    with pytest.raises(ValueError):
        reg.svr(np.ones((2, 2)), np.ones(2), 0.0)
    with pytest.raises(ValueError):
        reg.svr(np.ones((2, 2)), np.ones(2), 1.0, -0.1)

"""Intercept-free linear regressors mapping feature discrepancies to loss.

All solvers take a design matrix ``H`` (N x m, one discrepancy per row) and
targets ``r`` (N,) and return a weight vector ``w`` (m,):

* ridge:       min ||Hw - r||^2 + lam ||w||^2
* elastic net: min ||Hw - r||^2 + l1 ||w||_1 + l2 ||w||^2
* SVR:         min 1/2 ||w||^2 + C sum max(0, |Hw - r| - e)
"""

from __future__ import annotations

import logging

import numpy as np
from numba import njit
from scipy import linalg

log = logging.getLogger(__name__)

JITTERS = (0.0, 1e-12, 1e-10, 1e-8, 1e-6)


class DegenerateDataset(ValueError):
    """All discrepancies are zero, so no direction can be fitted."""


class ConvergenceError(RuntimeError):
    def __init__(self, msg: str, iterations: int, residual: float):
        super().__init__(f"{msg} after {iterations} iterations (residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


def _check(H: np.ndarray, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    H = np.asarray(H, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if H.ndim != 2 or r.shape != (H.shape[0],):
        raise ValueError(f"H {H.shape} and r {r.shape} do not align")
    if not (np.isfinite(H).all() and np.isfinite(r).all()):
        raise ValueError("non-finite entries in regression data")
    if not H.any():
        raise DegenerateDataset("all discrepancy rows are zero")
    return H, r


def spd_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cholesky solve, escalating a relative diagonal jitter on failure."""
    scale = max(float(np.mean(np.diag(A))), 1e-300)
    for jitter in JITTERS:
        M = A + (jitter * scale) * np.eye(len(A)) if jitter else A
        try:
            x = linalg.cho_solve(linalg.cho_factor(M, lower=True, check_finite=False), b,
                                 check_finite=False)
        except linalg.LinAlgError:
            continue
        if np.isfinite(x).all():
            if jitter:
                log.info("cholesky needed relative jitter %.0e", jitter)
            return x
    raise ValueError("linear solve failed even with jitter")


def ridge_primal(H, r, lam: float) -> np.ndarray:
    """``(H^T H + lam I_m)^{-1} H^T r``: an m x m solve."""
    if lam <= 0:
        raise ValueError("lam must be > 0")
    H, r = _check(H, r)
    return spd_solve(H.T @ H + lam * np.eye(H.shape[1]), H.T @ r)


def ridge_dual(H, r, lam: float) -> np.ndarray:
    """Same solution through the N x N system: ``H^T (H H^T + lam I_N)^{-1} r``."""
    if lam <= 0:
        raise ValueError("lam must be > 0")
    H, r = _check(H, r)
    return H.T @ spd_solve(H @ H.T + lam * np.eye(H.shape[0]), r)


def ridge_approx(H, r) -> np.ndarray:
    """``H^T r``, the strong-regularization limit of ridge up to scale."""
    H, r = _check(H, r)
    w = H.T @ r
    if not w.any():
        raise DegenerateDataset("H^T r is identically zero")
    return w


# -------------------------------------------------------------- elastic net


def _soft(u, a):
    return np.sign(u) * np.maximum(np.abs(u) - a, 0.0)


def _enet_residual_newton(H, r, l1, l2, max_iter=50):
    """Warm start for coordinate descent when ``l2 > 0``.

    At the optimum ``l2 w = S(H^T rho, l1/2)`` with ``rho = r - H w``, so
    ``rho`` minimizes the strongly convex
    ``phi(rho) = |rho|^2/2 - r.rho + |S(H^T rho, l1/2)|^2 / (2 l2)``,
    an N-dimensional problem solved by semismooth Newton with backtracking.
    """
    a = 0.5 * l1
    phi = lambda p: 0.5 * p @ p - r @ p + _soft(H.T @ p, a) @ _soft(H.T @ p, a) / (2 * l2)
    rho = r.copy()
    for _ in range(max_iter):
        u = H.T @ rho
        grad = rho - r + H @ _soft(u, a) / l2
        if np.linalg.norm(grad) <= 1e-15 * max(1.0, np.linalg.norm(r)):
            break
        act = np.abs(u) > a
        Ha = H[:, act]
        step = np.linalg.solve(np.eye(len(r)) + Ha @ Ha.T / l2, -grad)
        t, f0 = 1.0, phi(rho)
        while phi(rho + t * step) > f0 + 1e-4 * t * (grad @ step) and t > 1e-10:
            t *= 0.5
        rho = rho + t * step
    return _soft(H.T @ rho, a) / l2


@njit(cache=True)
def _enet_cd(H, r, l1, l2, tol, max_sweeps, w0):
    n, m = H.shape
    w = w0.copy()
    resid = r.copy()
    for j in range(m):
        if w[j] != 0.0:
            for i in range(n):
                resid[i] -= H[i, j] * w[j]
    col_sq = np.zeros(m)
    for j in range(m):
        s = 0.0
        for i in range(n):
            s += H[i, j] * H[i, j]
        col_sq[j] = s
    half = 0.5 * l1
    for sweep in range(max_sweeps):
        max_dw = 0.0
        max_w = 0.0
        for j in range(m):
            denom = col_sq[j] + l2
            if denom == 0.0:
                continue
            rho = col_sq[j] * w[j]
            for i in range(n):
                rho += H[i, j] * resid[i]
            if rho > half:
                new = (rho - half) / denom
            elif rho < -half:
                new = (rho + half) / denom
            else:
                new = 0.0
            d = new - w[j]
            if d != 0.0:
                for i in range(n):
                    resid[i] -= d * H[i, j]
                w[j] = new
            if abs(d) > max_dw:
                max_dw = abs(d)
            if abs(new) > max_w:
                max_w = abs(new)
        if max_dw <= tol * max_w or max_w == 0.0:
            return w, sweep + 1, True
    return w, max_sweeps, False


def elasticnet_gap(H, r, w, l1: float, l2: float) -> float:
    """Duality gap of the elastic-net objective at ``w`` (0 at the optimum)."""
    resid = r - H @ w
    primal = resid @ resid + l1 * np.abs(w).sum() + l2 * w @ w
    # lasso on augmented data [H; sqrt(l2) I], halved objective
    corr = H.T @ resid - l2 * w
    a = 0.5 * l1
    cmax = np.abs(corr).max()
    s = 1.0 if cmax == 0 else (min(1.0, a / cmax) if a > 0 else 0.0)
    theta1, theta2 = s * resid, -s * np.sqrt(l2) * w
    dual = 0.5 * (r @ r) - 0.5 * ((r - theta1) @ (r - theta1) + theta2 @ theta2)
    return float(primal - 2.0 * dual)


def elasticnet(H, r, l1: float, l2: float, tol: float = 1e-12,
               max_sweeps: int = 100_000) -> np.ndarray:
    """Cyclic coordinate descent; stops when no coordinate moves by more
    than ``tol`` relative to the largest coefficient."""
    if l1 < 0 or l2 < 0 or (l1 == 0 and l2 == 0):
        raise ValueError("need l1 >= 0, l2 >= 0, not both zero")
    H, r = _check(H, r)
    # CD is the solver of record; with l2 > 0 it starts from the residual-space Newton point
    w0 = _enet_residual_newton(H, r, l1, l2) if l2 > 0 else np.zeros(H.shape[1])
    w, sweeps, ok = _enet_cd(np.asfortranarray(H), r, float(l1), float(l2), tol, max_sweeps, w0)
    if not ok:
        raise ConvergenceError("elastic net did not converge", sweeps,
                               elasticnet_gap(H, r, w, l1, l2))
    return w


# ---------------------------------------------------------------------- SVR


@njit(cache=True)
def _svr_dual_cd(Q, r, C, e, tol, max_passes):
    n = len(r)
    beta = np.zeros(n)
    qb = np.zeros(n)
    viol = 0.0
    for it in range(max_passes):
        viol = 0.0
        for i in range(n):
            G = qb[i] - r[i]
            b = beta[i]
            # KKT residual of the one-variable subproblem
            if b > 0.0:
                v = abs(G + e) if b < C else max(0.0, G + e)
            elif b < 0.0:
                v = abs(G - e) if b > -C else max(0.0, -(G - e))
            else:
                v = max(0.0, abs(G) - e)
            if v > viol:
                viol = v
            qii = Q[i, i]
            if qii > 0.0:
                if G + e < qii * b:
                    nb = b - (G + e) / qii
                elif G - e > qii * b:
                    nb = b - (G - e) / qii
                else:
                    nb = 0.0
            else:
                if G + e < 0.0:
                    nb = C
                elif G - e > 0.0:
                    nb = -C
                else:
                    nb = 0.0
            nb = min(max(nb, -C), C)
            d = nb - b
            if d != 0.0:
                for k in range(n):
                    qb[k] += d * Q[k, i]
                beta[i] = nb
        if viol <= tol:
            return beta, it + 1, viol, True
    return beta, max_passes, viol, False


def svr(H, r, C: float, e: float = 0.0, tol: float = 1e-8,
        max_passes: int = 100_000) -> np.ndarray:
    """Intercept-free epsilon-insensitive SVR via dual coordinate descent.

    The dual is ``min 1/2 b^T H H^T b - r^T b + e ||b||_1`` over
    ``-C <= b <= C`` and ``w = H^T b``. ``tol`` bounds the KKT residual
    relative to ``max(1, max|r|)``.
    """
    if C <= 0 or e < 0:
        raise ValueError("need C > 0 and e >= 0")
    H, r = _check(H, r)
    Q = H @ H.T
    scale = max(1.0, float(np.abs(r).max()))
    beta, passes, viol, ok = _svr_dual_cd(Q, r, float(C), float(e), tol * scale, max_passes)
    if not ok:
        raise ConvergenceError("SVR dual did not converge", passes, viol)
    return H.T @ beta


def svr_dual_coefficients(H, r, C: float, e: float = 0.0, tol: float = 1e-8,
                          max_passes: int = 100_000) -> np.ndarray:
    H, r = _check(H, r)
    scale = max(1.0, float(np.abs(r).max()))
    beta, passes, viol, ok = _svr_dual_cd(H @ H.T, r, float(C), float(e), tol * scale, max_passes)
    if not ok:
        raise ConvergenceError("SVR dual did not converge", passes, viol)
    return beta

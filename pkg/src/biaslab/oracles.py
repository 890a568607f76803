"""Brute-force reference computations used to cross-check the fast paths.

Nothing here calls the discretization, coarsening or filtering code it is
meant to check: exponentials come from truncated Taylor series, integrals
from composite Simpson quadrature, and Gaussian laws from writing every
quantity as an explicit linear map of the independent noise sources.
"""

from __future__ import annotations

import math

import numpy as np


def taylor_exp(M, terms: int = 30) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    out = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, terms + 1):
        term = term @ M / k
        out = out + term
    return out


def simpson_noise_integral(F, Q, step: float, panels: int = 10_000) -> np.ndarray:
    """∫_0^δ e^{Fu} Q e^{Fᵀu} du by composite Simpson on ``panels`` subintervals."""
    F = np.asarray(F, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if panels % 2:
        panels += 1
    h = step / panels
    E_h = taylor_exp(F * h)
    E = np.eye(F.shape[0])
    total = np.zeros_like(Q)
    for k in range(panels + 1):
        w = 1.0 if k in (0, panels) else (4.0 if k % 2 else 2.0)
        total += w * (E @ Q @ E.T)
        E = E_h @ E
    return total * h / 3.0


class LinearGaussianUnroll:
    """Every fine state as an explicit affine map of (x0, w_1, ..., w_T).

    ``states[t]`` is (L, c) with X_{t+1} = L z + c, z ~ N(0, blockdiag(P0, C, ..., C)),
    where the x0 block is centred (its mean enters through c).
    """

    def __init__(self, A, B, C, mean0, cov0, controls):
        A = np.asarray(A, dtype=float)
        B = np.atleast_2d(np.asarray(B, dtype=float))
        d = A.shape[0]
        T = len(controls)
        n = d * (T + 1)
        self.d = d
        self.cov_z = np.zeros((n, n))
        self.cov_z[:d, :d] = cov0
        for t in range(T):
            self.cov_z[d * (t + 1):d * (t + 2), d * (t + 1):d * (t + 2)] = C
        L = np.zeros((d, n))
        L[:, :d] = np.eye(d)
        c = np.asarray(mean0, dtype=float).copy()
        self.states = []
        for t in range(T):
            u = np.atleast_1d(np.asarray(controls[t], dtype=float))
            L = A @ L
            L[:, d * (t + 1):d * (t + 2)] += np.eye(d)
            c = A @ c + B @ u
            self.states.append((L.copy(), c.copy()))

    def moments(self, indices) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of the stacked states at 0-based ``indices``."""
        L = np.vstack([self.states[i][0] for i in indices])
        c = np.concatenate([self.states[i][1] for i in indices])
        return c, L @ self.cov_z @ L.T


def mvn_logpdf(x, mean, cov) -> float:
    x = np.asarray(x, dtype=float) - np.asarray(mean, dtype=float)
    if x.size == 0:
        return 0.0
    chol = np.linalg.cholesky(cov)
    z = np.linalg.solve(chol, x)
    return float(-0.5 * (x.size * math.log(2 * math.pi) + 2 * np.log(np.diag(chol)).sum() + z @ z))


def joint_measurement_loglik(A_seq, C_seq, drive_seq, H_seq, R_seq, y, has_y, mean0, cov0) -> float:
    """Log density of all measured y under the time-varying linear-Gaussian model, in one block."""
    mean0 = np.asarray(mean0, dtype=float)
    d = mean0.size
    T = len(y)
    n = d * (T + 1)
    cov_z = np.zeros((n, n))
    cov_z[:d, :d] = cov0
    for t in range(T):
        cov_z[d * (t + 1):d * (t + 2), d * (t + 1):d * (t + 2)] = C_seq[t]
    L = np.zeros((d, n))
    L[:, :d] = np.eye(d)
    c = mean0.copy()
    rows, means, noise, vals = [], [], [], []
    for t in range(T):
        A = np.asarray(A_seq[t], dtype=float)
        L = A @ L
        L[:, d * (t + 1):d * (t + 2)] += np.eye(d)
        c = A @ c + np.asarray(drive_seq[t], dtype=float)
        if has_y[t]:
            h = np.asarray(H_seq[t], dtype=float)
            rows.append(h @ L)
            means.append(h @ c)
            noise.append(R_seq[t])
            vals.append(y[t])
    if not rows:
        return 0.0
    Ly = np.array(rows)
    cov = Ly @ cov_z @ Ly.T + np.diag(noise)
    return mvn_logpdf(vals, means, cov)


def fine_window_average_loglik(A, B, C, H, R, mean0, cov0, actions, observed, y_avg, m) -> float:
    """Density of window averages of observed fine measurements, built on the fine grid.

    ``actions`` is U_0..U_{n-1}, ``observed`` the fine observation flags
    (step k+1 at index k) and ``y_avg[w]`` the average for window w
    (ignored when the window has no observation).
    """
    H = np.asarray(H, dtype=float).reshape(-1)
    r = float(np.asarray(R).reshape(-1)[0])
    n = len(actions)
    un = LinearGaussianUnroll(A, B, C, mean0, cov0, [[a] for a in actions])
    W = n // m
    rows, means, vals = [], [], []
    noise_rows = []
    for w in range(W):
        idx = [w * m + i for i in range(m) if observed[w * m + i]]
        if not idx:
            continue
        Lsum = sum(H @ un.states[i][0] for i in idx) / len(idx)
        csum = sum(H @ un.states[i][1] for i in idx) / len(idx)
        rows.append(Lsum)
        means.append(csum)
        v = np.zeros(n)
        v[idx] = 1.0 / len(idx)
        noise_rows.append(v)
        vals.append(y_avg[w])
    if not rows:
        return 0.0
    Ly = np.array(rows)
    Nv = np.array(noise_rows)
    cov = Ly @ un.cov_z @ Ly.T + r * Nv @ Nv.T
    return mvn_logpdf(vals, means, cov)

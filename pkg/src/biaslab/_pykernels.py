"""Pure-Python/numpy kernels; same contract as the compiled ``_ckernels``."""

import math

import numpy as np

from .errors import InnovationVarianceError

VAR_FLOOR = 1e-300
# keeps the geometric weight total away from underflow on long gaps
RESCALE_BELOW = 1e-150
RESCALE_BY = 1e150


def run_filter(A_tab, C_tab, tab_idx, drive, H, R, y, has_y, mean0, cov0):
    """Kalman pass carrying K mean columns through one shared covariance.

    Step t predicts with (A_tab[tab_idx[t]], C_tab[tab_idx[t]]) plus
    ``drive[t]`` (D x K) and, when ``has_y[t]``, conditions on the scalar
    y[t] = H[t] x + N(0, R[t]). Returns residuals (T x K) and innovation
    variances (T,), NaN on unmeasured steps, plus the final belief.
    """
    T = len(tab_idx)
    K = mean0.shape[1]
    mean = np.array(mean0, dtype=float)
    cov = np.array(cov0, dtype=float)
    resid = np.full((T, K), np.nan)
    var = np.full(T, np.nan)
    for t in range(T):
        A = A_tab[tab_idx[t]]
        mean = A @ mean + drive[t]
        cov = A @ cov @ A.T + C_tab[tab_idx[t]]
        cov = 0.5 * (cov + cov.T)
        if has_y[t]:
            h = H[t]
            ph = cov @ h
            s = float(h @ ph) + R[t]
            if not s > VAR_FLOOR:
                raise InnovationVarianceError(f"innovation variance {s!r} at step {t}")
            r = y[t] - h @ mean
            gain = ph / s
            mean = mean + np.outer(gain, r)
            cov = cov - np.outer(gain, ph)
            cov = 0.5 * (cov + cov.T)
            resid[t] = r
            var[t] = s
    return resid, var, mean, cov


def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def simulate(A, B, L, H, sqrt_r, x0, z_state, z_meas, u_obs, u_act,
             p_obs, beta0, beta1, alpha):
    """Roll the fine model forward under the recency-weighted logistic policy.

    Row k of the outputs is fine step k+1; actions[k] is U_k, the action
    applied on the transition into that step.
    """
    n, d = z_state.shape
    states = np.empty((n, d))
    ys = np.empty(n)
    obs = np.zeros(n, dtype=np.uint8)
    acts = np.zeros(n, dtype=np.uint8)
    x = [float(v) for v in x0]
    Al = A.tolist()
    Ll = L.tolist()
    Bl = [float(v) for v in B]
    Hl = [float(v) for v in H]
    wsum = 0.0
    wtot = 0.0
    act = 1 if u_act[0] < _sigmoid(beta0) else 0
    acts[0] = act
    for k in range(n):
        z = z_state[k]
        xn = []
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += Al[i][j] * x[j]
            acc += Bl[i] * act
            for j in range(d):
                acc += Ll[i][j] * z[j]
            xn.append(acc)
        x = xn
        states[k] = x
        yk = 0.0
        for j in range(d):
            yk += Hl[j] * x[j]
        yk += sqrt_r * z_meas[k]
        ys[k] = yk
        o = 1 if u_obs[k] < p_obs else 0
        obs[k] = o
        if k + 1 < n:
            wsum = alpha * wsum + o * yk
            wtot = alpha * wtot + o
            if 0.0 < wtot < RESCALE_BELOW:
                wsum *= RESCALE_BY
                wtot *= RESCALE_BY
            avg = wsum / wtot if (alpha > 0.0 and wtot > 0.0) else 0.0
            act = 1 if u_act[k + 1] < _sigmoid(beta0 + beta1 * avg) else 0
            acts[k + 1] = act
    return states, ys, obs, acts

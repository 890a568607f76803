# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; mirrors ``_pykernels`` operation for operation."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, NAN

from .errors import InnovationVarianceError

cnp.import_array()

cdef double VAR_FLOOR = 1e-300
cdef double RESCALE_BELOW = 1e-150
cdef double RESCALE_BY = 1e150


cdef void _sandwich(const double[:, ::1] A, double[:, ::1] P,
                    double[:, ::1] tmp, const double[:, ::1] C) noexcept nogil:
    """P <- sym(A P Aᵀ + C); zero entries of A are skipped."""
    cdef Py_ssize_t D = A.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double a
    for i in range(D):
        for j in range(D):
            tmp[i, j] = 0.0
    for i in range(D):
        for k in range(D):
            a = A[i, k]
            if a == 0.0:
                continue
            for j in range(D):
                tmp[i, j] += a * P[k, j]
    for i in range(D):
        for j in range(D):
            P[i, j] = C[i, j]
    for j in range(D):
        for k in range(D):
            a = A[j, k]
            if a == 0.0:
                continue
            for i in range(D):
                P[i, j] += tmp[i, k] * a
    for i in range(D):
        for j in range(i + 1, D):
            a = 0.5 * (P[i, j] + P[j, i])
            P[i, j] = a
            P[j, i] = a


def run_filter(A_tab, C_tab, tab_idx, drive, H, R, y, has_y, mean0, cov0):
    """Kalman pass carrying K mean columns through one shared covariance."""
    cdef const double[:, :, ::1] At = np.ascontiguousarray(A_tab, dtype=np.float64)
    cdef const double[:, :, ::1] Ct = np.ascontiguousarray(C_tab, dtype=np.float64)
    cdef const cnp.intp_t[::1] idx = np.ascontiguousarray(tab_idx, dtype=np.intp)
    cdef const double[:, :, ::1] dr = np.ascontiguousarray(drive, dtype=np.float64)
    cdef const double[:, ::1] Hm = np.ascontiguousarray(H, dtype=np.float64)
    cdef const double[::1] Rv = np.ascontiguousarray(R, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const cnp.uint8_t[::1] hv = np.ascontiguousarray(has_y, dtype=np.uint8)

    cdef Py_ssize_t T = idx.shape[0]
    cdef Py_ssize_t D = At.shape[1]
    cdef Py_ssize_t K = dr.shape[2]
    mean_arr = np.array(mean0, dtype=np.float64, order="C")
    cov_arr = np.array(cov0, dtype=np.float64, order="C")
    resid_arr = np.full((T, K), np.nan)
    var_arr = np.full(T, np.nan)
    cdef double[:, ::1] mean = mean_arr
    cdef double[:, ::1] P = cov_arr
    cdef double[:, ::1] resid = resid_arr
    cdef double[::1] var = var_arr
    cdef double[:, ::1] mtmp = np.empty((D, K))
    cdef double[:, ::1] tmp = np.empty((D, D))
    cdef double[::1] ph = np.empty(D)
    cdef double[::1] gain = np.empty(D)
    cdef double[::1] r = np.empty(K)

    cdef Py_ssize_t t, i, j, k, a_i
    cdef double a, s, h, acc
    cdef bint failed = False
    cdef double bad_s = 0.0
    cdef Py_ssize_t bad_t = 0

    with nogil:
        for t in range(T):
            a_i = idx[t]
            # mean <- A mean + drive
            for i in range(D):
                for k in range(K):
                    mtmp[i, k] = 0.0
            for i in range(D):
                for j in range(D):
                    a = At[a_i, i, j]
                    if a == 0.0:
                        continue
                    for k in range(K):
                        mtmp[i, k] += a * mean[j, k]
            for i in range(D):
                for k in range(K):
                    mean[i, k] = mtmp[i, k] + dr[t, i, k]
            _sandwich(At[a_i], P, tmp, Ct[a_i])
            if not hv[t]:
                continue
            s = 0.0
            for i in range(D):
                acc = 0.0
                for j in range(D):
                    h = Hm[t, j]
                    if h != 0.0:
                        acc += P[i, j] * h
                ph[i] = acc
                s += Hm[t, i] * acc
            s += Rv[t]
            if not s > VAR_FLOOR:
                failed = True
                bad_s = s
                bad_t = t
                break
            for k in range(K):
                acc = 0.0
                for j in range(D):
                    acc += Hm[t, j] * mean[j, k]
                r[k] = yv[t] - acc
                resid[t, k] = r[k]
            var[t] = s
            for i in range(D):
                gain[i] = ph[i] / s
            for i in range(D):
                for k in range(K):
                    mean[i, k] += gain[i] * r[k]
            for i in range(D):
                a = gain[i]
                for j in range(D):
                    P[i, j] -= a * ph[j]
            for i in range(D):
                for j in range(i + 1, D):
                    a = 0.5 * (P[i, j] + P[j, i])
                    P[i, j] = a
                    P[j, i] = a
    if failed:
        raise InnovationVarianceError(f"innovation variance {bad_s!r} at step {bad_t}")
    return resid_arr, var_arr, mean_arr, cov_arr


cdef inline double _sigmoid(double z) noexcept nogil:
    cdef double e
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


def simulate(A, B, L, H, double sqrt_r, x0, z_state, z_meas, u_obs, u_act,
             double p_obs, double beta0, double beta1, double alpha):
    """Roll the fine model forward under the recency-weighted logistic policy."""
    cdef const double[:, ::1] Am = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[::1] Bv = np.ascontiguousarray(np.ravel(B), dtype=np.float64)
    cdef const double[:, ::1] Lm = np.ascontiguousarray(L, dtype=np.float64)
    cdef const double[::1] Hv = np.ascontiguousarray(np.ravel(H), dtype=np.float64)
    cdef const double[:, ::1] zs = np.ascontiguousarray(z_state, dtype=np.float64)
    cdef const double[::1] zm = np.ascontiguousarray(z_meas, dtype=np.float64)
    cdef const double[::1] uo = np.ascontiguousarray(u_obs, dtype=np.float64)
    cdef const double[::1] ua = np.ascontiguousarray(u_act, dtype=np.float64)
    cdef Py_ssize_t n = zs.shape[0]
    cdef Py_ssize_t d = zs.shape[1]

    states_arr = np.empty((n, d))
    ys_arr = np.empty(n)
    obs_arr = np.zeros(n, dtype=np.uint8)
    acts_arr = np.zeros(n, dtype=np.uint8)
    cdef double[:, ::1] states = states_arr
    cdef double[::1] ys = ys_arr
    cdef cnp.uint8_t[::1] obs = obs_arr
    cdef cnp.uint8_t[::1] acts = acts_arr
    cdef double[::1] x = np.array(np.ravel(x0), dtype=np.float64)
    cdef double[::1] xn = np.empty(d)

    cdef Py_ssize_t k, i, j
    cdef double acc, yk, avg
    cdef double wsum = 0.0
    cdef double wtot = 0.0
    cdef int o, act

    with nogil:
        act = 1 if ua[0] < _sigmoid(beta0) else 0
        acts[0] = act
        for k in range(n):
            for i in range(d):
                acc = 0.0
                for j in range(d):
                    acc += Am[i, j] * x[j]
                acc += Bv[i] * act
                for j in range(d):
                    acc += Lm[i, j] * zs[k, j]
                xn[i] = acc
            for i in range(d):
                x[i] = xn[i]
                states[k, i] = xn[i]
            yk = 0.0
            for j in range(d):
                yk += Hv[j] * x[j]
            yk += sqrt_r * zm[k]
            ys[k] = yk
            o = 1 if uo[k] < p_obs else 0
            obs[k] = o
            if k + 1 < n:
                wsum = alpha * wsum + o * yk
                wtot = alpha * wtot + o
                if 0.0 < wtot < RESCALE_BELOW:
                    wsum *= RESCALE_BY
                    wtot *= RESCALE_BY
                if alpha > 0.0 and wtot > 0.0:
                    avg = wsum / wtot
                else:
                    avg = 0.0
                act = 1 if ua[k + 1] < _sigmoid(beta0 + beta1 * avg) else 0
                acts[k + 1] = act
    return states_arr, ys_arr, obs_arr, acts_arr

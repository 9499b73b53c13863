"""Compiled inner loops: Kalman sensitivity pass and the pairwise score update.

Both kernels have slow reference twins in the test suite; the contracts are
pinned there, not here.  The pairwise kernel parallelises over the target
particle index only, and each per-particle reduction runs in a fixed order,
so results do not depend on the thread count.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

_LOG_2PI = float(np.log(2.0 * np.pi))


@njit(cache=True)
def kalman_pass(ys, phi, sx, sv):
    """Scalar Kalman filter with tangent recursions for (phi, sigma_x, sigma_v).

    Returns (loglik, grad[3], min_predictive_var) for observations ys under
    x_t = phi x_{t-1} + N(0, sx^2), y_t = x_t + N(0, sv^2), stationary init.
    """
    n = ys.shape[0]
    one_m = 1.0 - phi * phi
    p0 = sx * sx / one_m

    mp = 0.0
    pp = p0
    dmp = np.zeros(3)
    dpp = np.zeros(3)
    dpp[0] = 2.0 * phi * sx * sx / (one_m * one_m)
    dpp[1] = 2.0 * sx / one_m

    loglik = 0.0
    grad = np.zeros(3)
    min_var = pp
    for t in range(n):
        s = pp + sv * sv
        ds0 = dpp[0]
        ds1 = dpp[1]
        ds2 = dpp[2] + 2.0 * sv
        e = ys[t] - mp
        loglik += -0.5 * (_LOG_2PI + np.log(s)) - e * e / (2.0 * s)
        inv_s = 1.0 / s
        half_e2_s2 = e * e * inv_s * inv_s / 2.0
        grad[0] += -ds0 * inv_s / 2.0 + e * dmp[0] * inv_s + half_e2_s2 * ds0
        grad[1] += -ds1 * inv_s / 2.0 + e * dmp[1] * inv_s + half_e2_s2 * ds1
        grad[2] += -ds2 * inv_s / 2.0 + e * dmp[2] * inv_s + half_e2_s2 * ds2

        k = pp * inv_s
        dk0 = (dpp[0] * s - pp * ds0) * inv_s * inv_s
        dk1 = (dpp[1] * s - pp * ds1) * inv_s * inv_s
        dk2 = (dpp[2] * s - pp * ds2) * inv_s * inv_s
        m = mp + k * e
        dm0 = dmp[0] + dk0 * e - k * dmp[0]
        dm1 = dmp[1] + dk1 * e - k * dmp[1]
        dm2 = dmp[2] + dk2 * e - k * dmp[2]
        p = (1.0 - k) * pp
        dp0 = -dk0 * pp + (1.0 - k) * dpp[0]
        dp1 = -dk1 * pp + (1.0 - k) * dpp[1]
        dp2 = -dk2 * pp + (1.0 - k) * dpp[2]

        mp = phi * m
        dmp[0] = m + phi * dm0
        dmp[1] = phi * dm1
        dmp[2] = phi * dm2
        pp = phi * phi * p + sx * sx
        dpp[0] = 2.0 * phi * p + phi * phi * dp0
        dpp[1] = 2.0 * sx + phi * phi * dp1
        dpp[2] = phi * phi * dp2
        if pp < min_var:
            min_var = pp
    return loglik, grad, min_var


@njit(parallel=True, fastmath=True, cache=True)
def ar1_score_update(x_prev, x_new, log_w_prev, alphas_prev, phi, sigma, idx_phi, idx_sig, out):
    """Mix previous score tags into new particles under an AR(1) Gaussian kernel.

    For each new particle i this computes, with normalised mixture weights
    wt_ij proportional to w_j q(x_new_i | x_prev_j),

        out[i, :] = sum_j wt_ij (alphas_prev[j, :] + grad log q(x_new_i | x_prev_j))

    where grad log q only touches the (idx_phi, idx_sig) components.  The
    observation-gradient term is added by the caller.  Weights are handled in
    log space with per-row max subtraction; the underflow cut at exp(-46)
    drops terms below double precision relative to the row maximum.
    """
    n_new = x_new.shape[0]
    n_old = x_prev.shape[0]
    d = alphas_prev.shape[1]
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    inv_s2 = 1.0 / (sigma * sigma)
    inv_s = 1.0 / sigma
    inv_s3 = inv_s2 * inv_s
    for i in prange(n_new):
        xi = x_new[i]
        mx = -1.0e300
        for j in range(n_old):
            r = xi - phi * x_prev[j]
            l = log_w_prev[j] - r * r * inv2s2
            if l > mx:
                mx = l
        thr = mx - 46.0
        den = 0.0
        g_phi = 0.0
        g_r2 = 0.0
        for c in range(d):
            out[i, c] = 0.0
        for j in range(n_old):
            r = xi - phi * x_prev[j]
            l = log_w_prev[j] - r * r * inv2s2
            if l < thr:
                continue
            e = np.exp(l - mx)
            den += e
            g_phi += e * r * x_prev[j]
            g_r2 += e * r * r
            for c in range(d):
                out[i, c] += e * alphas_prev[j, c]
        inv_den = 1.0 / den
        for c in range(d):
            out[i, c] *= inv_den
        out[i, idx_phi] += g_phi * inv_den * inv_s2
        out[i, idx_sig] += g_r2 * inv_den * inv_s3 - inv_s
    return out

"""Hot numeric kernels.

Every function here is valid both as plain numpy and as numba nopython code;
``_accel.kernel`` decides which at import time. Arguments are contiguous
float64 arrays and Python scalars only.
"""
import math

import numpy as np

from ._accel import kernel

# status codes returned by the MINRES kernels
OK = 0
KRYLOV_EXHAUSTED = 1
NONFINITE = 2

# case codes returned by the SQP predicate
NO_CASE = 0
CASE_A = 1
CASE_B = 2
FALLBACK = 3

# layout of the float parameter vector consumed by ``minres_sqp``
P_TAU, P_OMEGA1, P_OMEGA2, P_OMEGA_A, P_OMEGA_B, P_BETA, P_SIGMA, P_EPS_D, P_STRICT, P_USE_CASES = range(10)
N_PARAMS = 10


@kernel
def kkt_matvec(H, J, v):
    n = H.shape[0]
    out = np.empty(v.shape[0])
    v1 = v[:n]
    v2 = v[n:]
    out[:n] = H @ v1 + J.T @ v2
    out[n:] = J @ v1
    return out


@kernel
def kkt_residual(H, J, d, delta, top, bottom):
    rho = H @ d + J.T @ delta - top
    r = J @ d - bottom
    return rho, r


@kernel
def minres_init(b):
    """Zero-start MINRES state: rows of ``V`` are r1, r2, w, w2, x."""
    V = np.zeros((5, b.shape[0]))
    V[0, :] = b
    V[1, :] = b
    beta1 = math.sqrt(np.dot(b, b))
    # oldb, beta, dbar, epsln, phibar, cs, sn
    s = np.array([0.0, beta1, 0.0, 0.0, beta1, -1.0, 0.0])
    return V, s


@kernel
def minres_step(H, J, V, s, itn):
    """Advance the Paige-Saunders recurrence by one Lanczos step (in place)."""
    oldb = s[0]
    beta = s[1]
    dbar = s[2]
    epsln = s[3]
    phibar = s[4]
    cs = s[5]
    sn = s[6]

    v = V[1] / beta
    y = kkt_matvec(H, J, v)
    if itn >= 2:
        y = y - (beta / oldb) * V[0]
    alfa = np.dot(v, y)
    y = y - (alfa / beta) * V[1]
    V[0, :] = V[1]
    V[1, :] = y
    oldb = beta
    beta = math.sqrt(np.dot(y, y))

    oldeps = epsln
    delta = cs * dbar + sn * alfa
    gbar = sn * dbar - cs * alfa
    epsln = sn * beta
    dbar = -cs * beta
    gamma = max(math.sqrt(gbar * gbar + beta * beta), 1e-300)
    cs = gbar / gamma
    sn = beta / gamma
    phi = cs * phibar
    phibar = sn * phibar

    w1 = V[3].copy()
    V[3, :] = V[2]
    V[2, :] = (v - oldeps * w1 - delta * V[3]) / gamma
    V[4, :] += phi * V[2]

    s[0] = oldb
    s[1] = beta
    s[2] = dbar
    s[3] = epsln
    s[4] = phibar
    s[5] = cs
    s[6] = sn

    if not (math.isfinite(alfa) and math.isfinite(beta) and math.isfinite(gamma) and math.isfinite(phi)):
        return NONFINITE
    if beta <= 1e-300:
        return KRYLOV_EXHAUSTED
    return OK


@kernel
def l1(a):
    return np.abs(a).sum()


@kernel
def model_reduction_value(tau, gtd, c_l1, r_l1):
    return -tau * gtd + c_l1 - r_l1


@kernel
def case_a_holds(delta_l, tau, quad, gtd, c_l1, r_l1, omega1, omega_a, beta, sigma, strict):
    lower = tau * omega1 * quad + omega1 * max(c_l1, r_l1 - c_l1)
    if delta_l < lower:
        return False
    if r_l1 > omega_a * beta ** (sigma / 2.0) * delta_l:
        return False
    if strict and c_l1 > 0.0 and gtd + quad > 0.0:
        return False
    return True


@kernel
def case_b_holds(r_l1, rho_l1, c_l1, omega1, omega2, omega_a, beta, sigma, omega_b):
    threshold = min((1.0 - omega1) * omega2, omega1 * omega_a * beta ** (sigma / 2.0))
    return r_l1 < threshold * c_l1 and rho_l1 < omega_b * c_l1


@kernel
def classify_iterate(H, d, r, rho, gbar, c_l1, p):
    """Return CASE_A, CASE_B or NO_CASE for one inexact KKT iterate."""
    gtd = np.dot(gbar, d)
    quad = max(np.dot(d, H @ d), p[P_EPS_D] * np.dot(d, d))
    r_l1 = l1(r)
    delta_l = model_reduction_value(p[P_TAU], gtd, c_l1, r_l1)
    if case_a_holds(delta_l, p[P_TAU], quad, gtd, c_l1, r_l1, p[P_OMEGA1], p[P_OMEGA_A],
                    p[P_BETA], p[P_SIGMA], p[P_STRICT] != 0.0):
        return CASE_A
    if case_b_holds(r_l1, l1(rho), c_l1, p[P_OMEGA1], p[P_OMEGA2], p[P_OMEGA_A],
                    p[P_BETA], p[P_SIGMA], p[P_OMEGA_B]):
        return CASE_B
    return NO_CASE


@kernel
def minres_sqp(H, J, top, bottom, gbar, p, max_iters, tol):
    """MINRES on the KKT system, stopped by the SQP termination cases.

    Returns ``(x, code, iters, status, resnorms)``. With ``p[P_USE_CASES] == 0``
    the cases are never tested and the solve runs to ``tol`` (relative to the
    right-hand side) or ``max_iters``; ``code`` is then FALLBACK.
    """
    n = H.shape[0]
    b = np.empty(top.shape[0] + bottom.shape[0])
    b[:n] = top
    b[n:] = bottom
    bnorm = math.sqrt(np.dot(b, b))
    c_l1 = l1(bottom)
    use_cases = p[P_USE_CASES] != 0.0
    resnorms = np.zeros(max_iters + 1)
    resnorms[0] = bnorm
    V, s = minres_init(b)
    if bnorm == 0.0:
        code = FALLBACK
        if use_cases:
            code = classify_iterate(H, V[4, :n], -bottom, -top, gbar, c_l1, p)
            if code == NO_CASE:
                code = FALLBACK
        return V[4].copy(), code, 0, OK, resnorms[:1]

    status = OK
    for itn in range(1, max_iters + 1):
        status = minres_step(H, J, V, s, itn)
        if status == NONFINITE:
            return V[4].copy(), NO_CASE, itn, status, resnorms[:itn]
        d = V[4, :n]
        delta = V[4, n:]
        rho, r = kkt_residual(H, J, d, delta, top, bottom)
        resnorms[itn] = math.sqrt(np.dot(rho, rho) + np.dot(r, r))
        if use_cases:
            code = classify_iterate(H, d, r, rho, gbar, c_l1, p)
            if code != NO_CASE:
                return V[4].copy(), code, itn, OK, resnorms[:itn + 1]
        if resnorms[itn] <= tol * bnorm or status == KRYLOV_EXHAUSTED:
            return V[4].copy(), FALLBACK, itn, OK, resnorms[:itn + 1]
    return V[4].copy(), FALLBACK, max_iters, OK, resnorms


@kernel
def logistic_grads(XT, labels, x, idx):
    """Per-sample gradients of log(1 + exp(-y_i X_i^T x)), one row per index."""
    rows = XT[idx]
    lab = labels[idx]
    z = lab * (rows @ x)
    z = np.minimum(np.maximum(z, -30.0), 30.0)
    coef = -lab / (1.0 + np.exp(z))
    out = np.empty_like(rows)
    for j in range(rows.shape[0]):
        out[j] = coef[j] * rows[j]
    return out


@kernel
def mean_and_variance(G):
    """Row mean and unbiased trace variance of stacked gradients (0 for one row)."""
    k = G.shape[0]
    mean = G.sum(axis=0) / k
    if k < 2:
        return mean, 0.0
    dev = G - mean
    return mean, (dev * dev).sum() / (k - 1)

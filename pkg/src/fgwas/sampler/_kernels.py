"""Compiled inner loops of the Gibbs sweep.

Everything works in coefficient space. For subject i with whitened design
``W U_i`` the engine caches ``G_i = U_i' Gamma_i^{-1} U_i`` and keeps
``R_i = U_i' Gamma_i^{-1} (y_i - U_i theta_i)`` current, so a group update
touches only the subjects with a nonzero genotype code.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

# no nnan/ninf: the SPD checks rely on NaN comparisons
_FASTMATH = {"reassoc", "contract", "arcp", "nsz"}

# status codes returned by the sweep
OK = 0
NOT_SPD = 1

# upper bound on tau^2; keeps the prior precision of an unidentified group
# positive when lambda^2 drifts toward zero
TAU2_CEILING = 1e100


@njit(cache=True, nogil=True, fastmath=_FASTMATH)
def _cholesky(M, L):
    v = M.shape[0]
    for j in range(v):
        s = M[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            return False
        L[j, j] = math.sqrt(s)
        for i in range(j + 1, v):
            s = M[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
        for i in range(j):
            L[i, j] = 0.0
    return True


@njit(cache=True, nogil=True, fastmath=_FASTMATH)
def gaussian_draw(M, lin, z, scale, out, L, w):
    """out = M^{-1} lin + scale * L^{-T} z with M = L L'.

    The posterior precision is ``M / scale**2``. ``L`` and ``w`` are
    scratch space. Retries with diagonal jitter before reporting failure.
    """
    v = M.shape[0]
    ok = _cholesky(M, L)
    if not ok:
        tr = 0.0
        for d in range(v):
            tr += abs(M[d, d])
        jitter = 1e-10 * max(tr / v, 1e-300)
        Mj = M.copy()
        for _ in range(3):
            for d in range(v):
                Mj[d, d] = M[d, d] + jitter
            ok = _cholesky(Mj, L)
            if ok:
                break
            jitter *= 100.0
        if not ok:
            return False
    for i in range(v):
        s = lin[i]
        for k in range(i):
            s -= L[i, k] * w[k]
        w[i] = s / L[i, i]
    # L' out = w + scale * z
    for i in range(v - 1, -1, -1):
        s = w[i] + scale * z[i]
        for k in range(i + 1, v):
            s -= L[k, i] * out[k]
        out[i] = s / L[i, i]
    return True


@njit(cache=True, nogil=True, fastmath=_FASTMATH)
def ig_variate(mean, shape, nu, u):
    w = mean * nu * nu / (2.0 * shape)
    x = mean / (1.0 + w + math.sqrt(w * w + 2.0 * w))
    if u <= mean / (mean + x):
        return x
    return mean * mean / x


@njit(cache=True, nogil=True, fastmath=_FASTMATH)
def _apply_delta(i, weight, delta, G, R, theta):
    v = delta.shape[0]
    for a in range(v):
        theta[i, a] += weight * delta[a]
        s = 0.0
        for b in range(v):
            s += G[i, a, b] * delta[b]
        R[i, a] -= weight * s


@njit(cache=True, nogil=True, fastmath=_FASTMATH)
def _update_group(j, coef, prior_prec, A, ptr, idx, val, G, R, theta, sigma2, z, work):
    v = coef.shape[1]
    M = work[0:v]
    L = work[v:2 * v]
    lin = work[2 * v]
    new = work[2 * v + 1]
    delta = work[2 * v + 2]
    scratch = work[2 * v + 3]
    for a in range(v):
        s = 0.0
        for b in range(v):
            M[a, b] = A[j, a, b]
            s += A[j, a, b] * coef[j, b]
        lin[a] = s
        M[a, a] += prior_prec
    for e in range(ptr[j], ptr[j + 1]):
        i = idx[e]
        w = val[e]
        for a in range(v):
            lin[a] += w * R[i, a]
    if not gaussian_draw(M, lin, z, math.sqrt(sigma2), new, L, scratch):
        return False
    for a in range(v):
        delta[a] = new[a] - coef[j, a]
        coef[j, a] = new[a]
    for e in range(ptr[j], ptr[j + 1]):
        _apply_delta(idx[e], val[e], delta, G, R, theta)
    return True


@njit(cache=True, nogil=True, fastmath=_FASTMATH)
def _draw_scale(coef_j, lam2, sigma2, nu, u, ceiling):
    v = coef_j.shape[0]
    norm2 = 0.0
    for a in range(v):
        norm2 += coef_j[a] * coef_j[a]
    shape = v * lam2
    if norm2 < 1e-300:
        mean = ceiling
    else:
        mean = min(math.sqrt(shape * sigma2 / norm2), ceiling)
    x = ig_variate(mean, shape, nu, u)
    if not x * TAU2_CEILING > 1.0:
        return TAU2_CEILING
    return 1.0 / x


@njit(cache=True, nogil=True, fastmath=_FASTMATH)
def sweep_coefficients(
    G, R, theta, X, C_cov, G_tot, P_m0, P_r0,
    ptr_a, idx_a, val_a, A_add, active_a,
    ptr_d, idx_d, val_d, A_dom, active_d,
    m, r, b, c, tau2, tau2s,
    sigma2, lam2, lam2s, penalized, fixed_prec, ceiling,
    upd_m, upd_r, upd_b, upd_c, upd_tau, upd_taus,
    z_m, z_r, z_b, z_c, nu_b, u_b, nu_c, u_c,
):
    """One pass over m, r_1..r_q, (b_j, tau_j^2)_j, (c_j, tau*_j^2)_j."""
    n, v = theta.shape
    q = r.shape[0]
    p = b.shape[0]
    new = np.empty(v)
    L = np.zeros((v, v))
    scratch = np.empty(v)
    work = np.zeros((2 * v + 4, v))
    if upd_m:
        M = sigma2 * P_m0 + G_tot
        lin = G_tot @ m
        for i in range(n):
            for a in range(v):
                lin[a] += R[i, a]
        if not gaussian_draw(M, lin, z_m, math.sqrt(sigma2), new, L, scratch):
            return NOT_SPD
        delta = new - m
        m[:] = new
        for i in range(n):
            _apply_delta(i, 1.0, delta, G, R, theta)
    if upd_r:
        for k in range(q):
            M = sigma2 * P_r0 + C_cov[k]
            lin = C_cov[k] @ r[k]
            for i in range(n):
                for a in range(v):
                    lin[a] += X[i, k] * R[i, a]
            if not gaussian_draw(M, lin, z_r[k], math.sqrt(sigma2), new, L, scratch):
                return NOT_SPD
            delta = new - r[k]
            r[k, :] = new
            for i in range(n):
                if X[i, k] != 0.0:
                    _apply_delta(i, X[i, k], delta, G, R, theta)
    if upd_b:
        for j in range(p):
            if not active_a[j]:
                continue
            prec = 1.0 / tau2[j] if penalized else sigma2 * fixed_prec
            if not _update_group(j, b, prec, A_add, ptr_a, idx_a, val_a, G, R, theta, sigma2, z_b[j], work):
                return NOT_SPD
            if penalized and upd_tau:
                tau2[j] = _draw_scale(b[j], lam2, sigma2, nu_b[j], u_b[j], ceiling)
    if upd_c:
        for j in range(p):
            if not active_d[j]:
                continue
            prec = 1.0 / tau2s[j] if penalized else sigma2 * fixed_prec
            if not _update_group(j, c, prec, A_dom, ptr_d, idx_d, val_d, G, R, theta, sigma2, z_c[j], work):
                return NOT_SPD
            if penalized and upd_taus:
                tau2s[j] = _draw_scale(c[j], lam2s, sigma2, nu_c[j], u_c[j], ceiling)
    return OK


@njit(cache=True, nogil=True, fastmath=_FASTMATH)
def subject_grams(offsets, y, U, phi, scl, G, h):
    """Fill G_i = (W U_i)'(W U_i) and h_i = (W U_i)'(W y_i) for every subject."""
    n = offsets.shape[0] - 1
    v = U.shape[1]
    wu = np.empty(v)
    for i in range(n):
        for a in range(v):
            h[i, a] = 0.0
            for b in range(v):
                G[i, a, b] = 0.0
        start = offsets[i]
        for l in range(start, offsets[i + 1]):
            if l == start:
                for a in range(v):
                    wu[a] = U[l, a]
                wy = y[l]
            else:
                for a in range(v):
                    wu[a] = (U[l, a] - phi[l] * U[l - 1, a]) * scl[l]
                wy = (y[l] - phi[l] * y[l - 1]) * scl[l]
            for a in range(v):
                h[i, a] += wu[a] * wy
                for b in range(a, v):
                    G[i, a, b] += wu[a] * wu[b]
        for a in range(v):
            for b in range(a):
                G[i, a, b] = G[i, b, a]


@njit(cache=True, nogil=True, fastmath=_FASTMATH)
def residual_quadratic(offsets, y, U, theta, phi, scl):
    """sum_i e_i' Gamma_i^{-1} e_i with e_i = y_i - U_i theta_i."""
    n = offsets.shape[0] - 1
    v = U.shape[1]
    total = 0.0
    for i in range(n):
        prev = 0.0
        start = offsets[i]
        for l in range(start, offsets[i + 1]):
            e = y[l]
            for a in range(v):
                e -= U[l, a] * theta[i, a]
            if l == start:
                w = e
            else:
                w = (e - phi[l] * prev) * scl[l]
            total += w * w
            prev = e
    return total


@njit(cache=True, nogil=True, fastmath=_FASTMATH)
def coefficient_residual(G, h, theta, R):
    """R_i = h_i - G_i theta_i."""
    n, v = theta.shape
    for i in range(n):
        for a in range(v):
            s = h[i, a]
            for b in range(v):
                s -= G[i, a, b] * theta[i, b]
            R[i, a] = s

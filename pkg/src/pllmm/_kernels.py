"""Hot numeric kernels, numba-compiled by default with a pure-numpy fallback.

All kernels work on stacked group data: the observations of group g occupy
rows starts[g]:starts[g+1] of the stacked arrays. Matrices that are iterated
column-by-column are passed transposed (shape (p, n), C order) so the inner
loops run over contiguous memory.

The names exported at module level are rebound to ``numba.njit`` compiled
versions at import time unless the environment variable ``PLLMM_NO_NUMBA``
is set to a truthy value (or numba is not importable). ``KERNEL_BACKEND``
records which lane is active; ``benchmarks/bench_kernels.py`` compares the
two lanes in subprocesses.
"""

import math
import os

import numpy as np

# Penalty family codes, shared with pllmm.penalties.
FAMILY_L1 = 0
FAMILY_L2 = 1
FAMILY_LQ = 2
FAMILY_HARD = 3
FAMILY_SCAD = 4

_LOG_2PI = math.log(2.0 * math.pi)


def penalty_value(family, lam, a, q, t):
    """Penalty value p_lambda(t) for t >= 0 (no domain checks)."""
    if lam == 0.0:
        return 0.0
    if family == FAMILY_L1:
        return lam * t
    if family == FAMILY_L2:
        return lam * t * t
    if family == FAMILY_LQ:
        return lam * t ** q
    if family == FAMILY_HARD:
        if t < lam:
            return lam * lam - (t - lam) * (t - lam)
        return lam * lam
    # SCAD: quadratic spline with knots at lam and a*lam.
    if t <= lam:
        return lam * t
    al = a * lam
    if t < al:
        return (2.0 * al * t - t * t - lam * lam) / (2.0 * (a - 1.0))
    return 0.5 * (a + 1.0) * lam * lam


def penalty_deriv(family, lam, a, q, t):
    """Derivative of p_lambda at t > 0 (right derivative at kinks)."""
    if lam == 0.0:
        return 0.0
    if family == FAMILY_L1:
        return lam
    if family == FAMILY_L2:
        return 2.0 * lam * t
    if family == FAMILY_LQ:
        return lam * q * t ** (q - 1.0)
    if family == FAMILY_HARD:
        if t < lam:
            return 2.0 * (lam - t)
        return 0.0
    if t <= lam:
        return lam
    d = a * lam - t
    if d > 0.0:
        return d / (a - 1.0)
    return 0.0


def threshold(family, lam, a, q, z, h):
    """Exact global minimizer of 0.5*h*(z-g)^2 + p_lambda(|g|) over g.

    The minimizer has the sign of z, so the search runs on [0, |z|] plus the
    penalty knots; each quadratic piece contributes its clipped stationary
    point and the candidate with the smallest objective wins (ties go to the
    candidate closer to zero).
    """
    if lam == 0.0 or z == 0.0:
        return z
    s = 1.0 if z > 0.0 else -1.0
    az = z * s

    if family == FAMILY_L1:
        t = az - lam / h
        if t > 0.0:
            return s * t
        return 0.0

    if family == FAMILY_L2:
        return s * h * az / (h + 2.0 * lam)

    if family == FAMILY_HARD:
        best_g = 0.0
        best_f = 0.5 * h * az * az
        # plateau region |g| >= lam, penalty lam^2
        g1 = az if az >= lam else lam
        f1 = 0.5 * h * (az - g1) * (az - g1) + lam * lam
        if f1 < best_f:
            best_g = g1
            best_f = f1
        # region [0, lam]: 0.5*h*(az-g)^2 + 2*lam*g - g^2
        if h > 2.0:
            gs = (h * az - 2.0 * lam) / (h - 2.0)
            if 0.0 < gs < lam:
                fs = 0.5 * h * (az - gs) * (az - gs) + 2.0 * lam * gs - gs * gs
                if fs < best_f:
                    best_g = gs
                    best_f = fs
        f2 = 0.5 * h * (az - lam) * (az - lam) + lam * lam
        if f2 < best_f:
            best_g = lam
            best_f = f2
        return s * best_g

    if family == FAMILY_SCAD:
        al = a * lam
        best_g = 0.0
        best_f = 0.5 * h * az * az
        # inner piece [0, lam]: soft-threshold stationary point, clipped
        g1 = az - lam / h
        if g1 < 0.0:
            g1 = 0.0
        elif g1 > lam:
            g1 = lam
        f1 = 0.5 * h * (az - g1) * (az - g1) + penalty_value(FAMILY_SCAD, lam, a, q, g1)
        if f1 < best_f:
            best_g = g1
            best_f = f1
        # middle piece [lam, a*lam]
        den = h * (a - 1.0) - 1.0
        if den > 0.0:
            g2 = (h * az * (a - 1.0) - al) / den
            if g2 < lam:
                g2 = lam
            elif g2 > al:
                g2 = al
            f2 = 0.5 * h * (az - g2) * (az - g2) + penalty_value(FAMILY_SCAD, lam, a, q, g2)
            if f2 < best_f:
                best_g = g2
                best_f = f2
        fknot = 0.5 * h * (az - lam) * (az - lam) + lam * lam
        if fknot < best_f:
            best_g = lam
            best_f = fknot
        # outer plateau [a*lam, inf)
        g3 = az if az >= al else al
        f3 = 0.5 * h * (az - g3) * (az - g3) + 0.5 * (a + 1.0) * lam * lam
        if f3 < best_f:
            best_g = g3
            best_f = f3
        return s * best_g

    # FAMILY_LQ with exponent q in (0, 2)
    if q == 1.0:
        t = az - lam / h
        if t > 0.0:
            return s * t
        return 0.0
    if q > 1.0:
        # smooth convex objective: unique root of h*(g-az) + lam*q*g^(q-1) in (0, az)
        lo = 0.0
        hi = az
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if h * (mid - az) + lam * q * mid ** (q - 1.0) > 0.0:
                hi = mid
            else:
                lo = mid
        return s * 0.5 * (lo + hi)
    # q < 1: derivative blows up at 0+, so 0 is always a local minimum;
    # an interior one can only live beyond the minimum of the derivative.
    gstar = (lam * q * (1.0 - q) / h) ** (1.0 / (2.0 - q))
    if gstar >= az:
        return 0.0
    if h * (gstar - az) + lam * q * gstar ** (q - 1.0) >= 0.0:
        return 0.0
    lo = gstar
    hi = az
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if h * (mid - az) + lam * q * mid ** (q - 1.0) > 0.0:
            hi = mid
        else:
            lo = mid
    g2 = 0.5 * (lo + hi)
    if 0.5 * h * (az - g2) * (az - g2) + lam * g2 ** q < 0.5 * h * az * az:
        return s * g2
    return 0.0


def nll_quad(Z, starts, psi, sigma2, r):
    """0.5*(n*log(2*pi) + sum_g log|V_g| + r_g' V_g^{-1} r_g).

    V_g = Z_g diag(psi) Z_g' + sigma2*I. Returns (value, bad_group) where
    bad_group is -1 on success and the offending group index when a pivot
    of the in-place Cholesky is not strictly positive.
    """
    ngroups = starts.shape[0] - 1
    n = r.shape[0]
    q = Z.shape[1]
    total = n * _LOG_2PI
    for g in range(ngroups):
        s0 = starts[g]
        ni = starts[g + 1] - s0
        V = np.empty((ni, ni))
        for i in range(ni):
            for j in range(i + 1):
                acc = 0.0
                for k in range(q):
                    acc += psi[k] * Z[s0 + i, k] * Z[s0 + j, k]
                if i == j:
                    acc += sigma2
                V[i, j] = acc
        w = np.empty(ni)
        for i in range(ni):
            d = V[i, i]
            for k in range(i):
                d -= V[i, k] * V[i, k]
            if d <= 0.0:
                return np.nan, g
            d = math.sqrt(d)
            V[i, i] = d
            total += 2.0 * math.log(d)
            for j in range(i + 1, ni):
                acc = V[j, i]
                for k in range(i):
                    acc -= V[j, k] * V[i, k]
                V[j, i] = acc / d
        for i in range(ni):
            acc = r[s0 + i]
            for k in range(i):
                acc -= V[i, k] * w[k]
            w[i] = acc / V[i, i]
            total += w[i] * w[i]
    return 0.5 * total, -1


def vinv_apply_t(Z, starts, psi, sigma2, BT):
    """Apply V^{-1} block-wise to the rows of BT (shape (k, n)).

    Returns (OUT, bad_group) with OUT[k, i] = (V^{-1} B)[i, k]; bad_group as
    in nll_quad.
    """
    kdim = BT.shape[0]
    ngroups = starts.shape[0] - 1
    q = Z.shape[1]
    OUT = np.empty_like(BT)
    for g in range(ngroups):
        s0 = starts[g]
        ni = starts[g + 1] - s0
        V = np.empty((ni, ni))
        for i in range(ni):
            for j in range(i + 1):
                acc = 0.0
                for k in range(q):
                    acc += psi[k] * Z[s0 + i, k] * Z[s0 + j, k]
                if i == j:
                    acc += sigma2
                V[i, j] = acc
        for i in range(ni):
            d = V[i, i]
            for k in range(i):
                d -= V[i, k] * V[i, k]
            if d <= 0.0:
                return OUT, g
            V[i, i] = math.sqrt(d)
            for j in range(i + 1, ni):
                acc = V[j, i]
                for k in range(i):
                    acc -= V[j, k] * V[i, k]
                V[j, i] = acc / V[i, i]
        w = np.empty(ni)
        for row in range(kdim):
            for i in range(ni):
                acc = BT[row, s0 + i]
                for k in range(i):
                    acc -= V[i, k] * w[k]
                w[i] = acc / V[i, i]
            for i in range(ni - 1, -1, -1):
                acc = w[i]
                for k in range(i + 1, ni):
                    acc -= V[k, i] * w[k]
                w[i] = acc / V[i, i]
                OUT[row, s0 + i] = w[i]
    return OUT, -1


def beta_sweep(XT, WXT, r, u, beta, h, h_exact, penalized, family, lam, a, q,
               inv_n, delta, rho, gamma, alpha0, max_backtracks, zero_clamp):
    """One coordinate pass of the penalized descent, in ascending order.

    The loss is quadratic in beta, so for a step of size ``t`` on coordinate
    j the change of the normalized objective is exactly
    t*grad_j + 0.5*t^2*h_exact_j + penalty(new) - penalty(old); the Armijo
    test uses that identity rather than a fresh likelihood evaluation.
    Updates beta, r, and u = V^{-1} r in place; returns the number of
    accepted coordinate updates.
    """
    p = beta.shape[0]
    n = r.shape[0]
    n_updates = 0
    for j in range(p):
        gj = 0.0
        for i in range(n):
            gj -= XT[j, i] * u[i]
        gj *= inv_n
        hj = h[j]
        pen_old = 0.0
        if penalized[j]:
            z = beta[j] - gj / hj
            gam_hat = threshold(family, lam, a, q, z, hj)
            if -zero_clamp < gam_hat < zero_clamp:
                gam_hat = 0.0
            d = gam_hat - beta[j]
            pen_old = penalty_value(family, lam, a, q, abs(beta[j]))
        else:
            d = -gj / hj
        if d == 0.0:
            continue
        if penalized[j]:
            pen_new = penalty_value(family, lam, a, q, abs(beta[j] + d))
        else:
            pen_new = 0.0
        delta_j = gj * d + gamma * d * d * hj + pen_new - pen_old
        if delta_j >= 0.0:
            continue
        alpha = alpha0
        accepted = False
        for _ in range(max_backtracks + 1):
            step = alpha * d
            if penalized[j]:
                pen_step = penalty_value(family, lam, a, q, abs(beta[j] + step))
            else:
                pen_step = 0.0
            dq = step * gj + 0.5 * step * step * h_exact[j] + pen_step - pen_old
            if dq <= alpha * rho * delta_j:
                accepted = True
                break
            alpha *= delta
        if not accepted:
            continue
        step = alpha * d
        beta[j] = beta[j] + step
        for i in range(n):
            r[i] -= step * XT[j, i]
            u[i] -= step * WXT[j, i]
        n_updates += 1
    return n_updates


class _Lane:
    """Plain namespace holding one set of kernel implementations."""

    def __init__(self, **fns):
        self.__dict__.update(fns)


PURE = _Lane(
    penalty_value=penalty_value,
    penalty_deriv=penalty_deriv,
    threshold=threshold,
    nll_quad=nll_quad,
    vinv_apply_t=vinv_apply_t,
    beta_sweep=beta_sweep,
)


def _numba_disabled():
    flag = os.environ.get("PLLMM_NO_NUMBA", "").strip().lower()
    return flag in {"1", "true", "yes", "on"}


KERNEL_BACKEND = "numpy"

if not _numba_disabled():
    try:
        from numba import njit
    except ImportError:
        pass
    else:
        # Rebind the module globals in dependency order so compiled callers
        # link against compiled callees. The PURE lane keeps the original
        # python functions (their inner calls go through the compiled
        # helpers, which changes nothing numerically); run with
        # PLLMM_NO_NUMBA=1 for a fully interpreter-only process.
        penalty_value = njit(cache=True)(penalty_value)
        penalty_deriv = njit(cache=True)(penalty_deriv)
        threshold = njit(cache=True)(threshold)
        nll_quad = njit(cache=True)(nll_quad)
        vinv_apply_t = njit(cache=True)(vinv_apply_t)
        beta_sweep = njit(cache=True)(beta_sweep)
        KERNEL_BACKEND = "numba"

"""Penalized likelihood optimizers.

Two routes minimize the penalized objective

    Q(beta, eta) = -loglik(beta, eta) + n * sum_j p_lambda(|beta_j|)

over the penalized coordinates (unpenalized coordinates bypass the penalty
entirely):

* ``cgd_fit``: coordinate descent on beta with exact scalar thresholding,
  an Armijo step-size rule, and one Gauss-Seidel pass of bracketed 1-d
  searches over the variance components per outer iteration. Works for any
  p, including p >> n.
* ``newton_lqa_fit``: full Newton steps on a local quadratic approximation
  of the penalty, alternating with Newton steps on the variance components.
  Requires p < n.

Internally the loss is normalized per observation, which puts the penalty
and the likelihood curvature on the same scale; the reported objective
trace is on the Q scale above.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import SIGMA2_FLOOR, ModelParameters
from .exceptions import (
    DegenerateDataError,
    InternalConsistencyError,
    NumericalDomainError,
    UnboundedVarianceError,
)
from .likelihood import fisher_info_beta, grad_eta, hessian_eta
from .penalties import PenaltySpec, penalty_value

_BRACKET_CAP = 1e12
_MAX_BACKTRACKS = 50


@dataclass(frozen=True)
class EtaSearch:
    """Settings for the 1-d variance-component minimizer."""

    bracket_factor: float = 10.0
    tolerance: float = 1e-8
    max_evaluations: int = 100


@dataclass(frozen=True)
class SolverConfig:
    """Tuning constants for both optimizers."""

    c_min: float = 1e-6
    c_max: float = 1e8
    armijo_delta: float = 0.1
    armijo_rho: float = 0.001
    armijo_gamma: float = 0.0
    armijo_alpha0: float = 1.0
    max_outer_iterations: int = 200
    objective_tolerance: float = 1e-6
    zero_clamp: float = 1e-8
    eta_search: EtaSearch = field(default_factory=EtaSearch)

    def __post_init__(self):
        if not 0.0 < self.armijo_delta < 1.0:
            raise NumericalDomainError("armijo_delta must lie in (0, 1)")
        if not 0.0 < self.armijo_rho < 0.5:
            raise NumericalDomainError("armijo_rho must lie in (0, 0.5)")
        if self.c_min > self.c_max:
            raise NumericalDomainError("c_min must not exceed c_max")
        if self.objective_tolerance <= 0 or self.zero_clamp <= 0 or self.eta_search.tolerance <= 0:
            raise NumericalDomainError("tolerances must be positive")


@dataclass(frozen=True)
class FitResult:
    """Outcome of one penalized fit."""

    params: ModelParameters
    active_set: tuple
    objective_trace: np.ndarray
    neg_loglik: float
    converged: bool
    iterations: int
    penalty: PenaltySpec
    warnings: tuple = ()


def _active_set(beta):
    return tuple(int(j) for j in np.flatnonzero(beta != 0.0))


def _penalty_sum(penalty, beta, penalized_mask):
    fam, lam, a, q = penalty.kernel_args()
    total = 0.0
    for j in range(beta.shape[0]):
        if penalized_mask[j]:
            total += _kernels.penalty_value(fam, lam, a, q, abs(beta[j]))
    return total


def _nll_or_raise(data, Z, starts, psi, sigma2, r):
    value, bad = _kernels.nll_quad(Z, starts, psi, sigma2, r)
    if bad >= 0:
        from .exceptions import NonPositiveDefiniteError

        raise NonPositiveDefiniteError(data.group_labels[bad])
    return value


def penalized_objective(data, spec, penalty, params):
    """Q(beta, eta) = -loglik + n * sum of penalties over penalized coordinates."""
    y, X, _, Z, starts = data.stacked
    r = y - X @ params.beta
    psi = spec.psi_diag(params.theta2)
    nll = _nll_or_raise(data, Z, starts, psi, params.sigma2, r)
    return float(nll + data.n * _penalty_sum(penalty, params.beta, data.penalized_mask))


def _scalar_min(f, lower, x0, search):
    """Bracketed golden-section minimizer on [lower, hi] with boundary snap.

    Expands the upper bracket geometrically while f keeps decreasing;
    raises UnboundedVarianceError past 1e12. The returned point never has a
    larger f value than x0, and collapses to the exact lower bound when the
    bound is competitive.
    """
    factor = search.bracket_factor
    tol = search.tolerance
    budget = search.max_evaluations

    evals = 0

    def ev(x):
        nonlocal evals
        evals += 1
        v = f(x)
        return v if np.isfinite(v) else np.inf

    x0 = max(float(x0), lower)
    f0 = ev(x0)
    hi = max(x0, lower, 1e-6) * factor
    f_hi = ev(hi)
    while True:
        cand = hi * factor
        if cand > _BRACKET_CAP:
            raise UnboundedVarianceError(
                f"variance-component bracket expanded past {_BRACKET_CAP:g} without finding a minimum"
            )
        f_cand = ev(cand)
        if f_cand >= f_hi:
            hi, f_hi = cand, f_cand
            break
        hi, f_hi = cand, f_cand

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lower, hi
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = ev(x1), ev(x2)
    while (b - a) > tol and evals < budget:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = ev(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = ev(x2)
    xstar, fstar = (x1, f1) if f1 <= f2 else (x2, f2)

    if xstar - lower <= tol:
        f_low = ev(lower)
        if f_low <= fstar:
            xstar, fstar = lower, f_low
    if f0 <= fstar:
        return x0, f0
    return xstar, fstar


def _eta_pass(data, Z, starts, r, sigma2, theta2, spec, config):
    """One Gauss-Seidel pass of 1-d minimizations over (sigma2, theta2...)."""
    theta2 = np.array(theta2, dtype=float)

    def f_sigma(s2):
        psi = spec.psi_diag(theta2)
        value, bad = _kernels.nll_quad(Z, starts, psi, s2, r)
        return np.inf if bad >= 0 else value

    sigma2, _ = _scalar_min(f_sigma, SIGMA2_FLOOR, sigma2, config.eta_search)

    for k in range(spec.q_star):
        def f_theta(v, k=k):
            trial = theta2.copy()
            trial[k] = v
            psi = spec.psi_diag(trial)
            value, bad = _kernels.nll_quad(Z, starts, psi, sigma2, r)
            return np.inf if bad >= 0 else value

        theta2[k], _ = _scalar_min(f_theta, 0.0, theta2[k], config.eta_search)
    return sigma2, theta2


def update_variance_components(data, spec, beta, params, config=None):
    """One Gauss-Seidel pass of coordinate minimizations over the variance scale.

    Each component of (sigma2, theta2...) is replaced in turn by its bracketed
    1-d minimizer of the negative log-likelihood at fixed ``beta`` and fixed
    remaining components. The likelihood never increases.

    Args:
        data: MixedModelData.
        spec: VarianceSpec.
        beta: fixed coefficient vector.
        params: ModelParameters supplying the starting variance components.
        config: SolverConfig (defaults used when None).

    Returns:
        ModelParameters with ``beta`` and the updated components.
    """
    config = config or SolverConfig()
    beta = np.asarray(beta, dtype=float)
    y, X, _, Z, starts = data.stacked
    r = y - X @ beta
    sigma2, theta2 = _eta_pass(data, Z, starts, r, params.sigma2, params.theta2, spec, config)
    return ModelParameters(beta=beta, sigma2=sigma2, theta2=theta2)


def armijo_step(objective, beta_j, d_j, h_j, grad_j, penalty, config):
    """Backtracking step size for a single-coordinate move.

    Picks the largest alpha0 * delta^r, r = 0, 1, ..., 50, satisfying

        objective(beta_j + alpha d_j) <= objective(beta_j) + alpha rho Delta_j

    with Delta_j = grad_j d_j + gamma d_j^2 h_j + p(|beta_j + d_j|) - p(|beta_j|).

    Args:
        objective: callable mapping a candidate value of coordinate j to the
            objective (only differences matter).
        beta_j: current coordinate value.
        d_j: proposed direction, must be nonzero.
        h_j: curvature estimate used in the gamma term.
        grad_j: loss gradient at coordinate j.
        penalty: PenaltySpec, or None for an unpenalized coordinate.
        config: SolverConfig supplying the Armijo constants.

    Returns:
        The accepted step size, or None when the direction signals
        stationarity (Delta_j >= 0) or all 50 backtracks fail.
    """
    if d_j == 0.0:
        raise NumericalDomainError("armijo_step requires a nonzero direction")
    if penalty is not None:
        pen_old = penalty_value(penalty, abs(beta_j))
        pen_new = penalty_value(penalty, abs(beta_j + d_j))
    else:
        pen_old = pen_new = 0.0
    delta_j = grad_j * d_j + config.armijo_gamma * d_j * d_j * h_j + pen_new - pen_old
    if delta_j >= 0.0:
        return None
    q0 = objective(beta_j)
    alpha = config.armijo_alpha0
    for _ in range(_MAX_BACKTRACKS + 1):
        if objective(beta_j + alpha * d_j) <= q0 + alpha * config.armijo_rho * delta_j:
            return alpha
        alpha *= config.armijo_delta
    return None


def cgd_fit(data, spec, penalty, init, config=None):
    """Coordinate descent on beta alternating with variance-component updates.

    Per outer iteration: one ascending sweep over the coordinates (curvature
    taken from the Fisher diagonal at the current variance components,
    clipped to [c_min, c_max]; each subproblem solved exactly by scalar
    thresholding with an Armijo-controlled step), then one Gauss-Seidel pass
    over (sigma2, theta2...). Stops once the relative objective decrease
    stays below ``objective_tolerance`` for two consecutive iterations with
    an unchanged active set.
    """
    config = config or SolverConfig()
    from .likelihood import _validate

    _validate(data, init, spec)
    y, X, XT, Z, starts = data.stacked
    n = y.shape[0]
    inv_n = 1.0 / n
    penalized = data.penalized_mask
    fam, lam, a, lq = penalty.kernel_args()

    beta = init.beta.copy()
    sigma2 = init.sigma2
    theta2 = init.theta2.copy()

    r = y - X @ beta
    psi = spec.psi_diag(theta2)
    nll = _nll_or_raise(data, Z, starts, psi, sigma2, r)
    trace = [nll + n * _penalty_sum(penalty, beta, penalized)]

    active_prev = _active_set(beta)
    quiet_iters = 0
    converged = False
    iterations = 0

    for _ in range(config.max_outer_iterations):
        iterations += 1
        psi = spec.psi_diag(theta2)
        BT = np.vstack((r[None, :], XT))
        OUT, bad = _kernels.vinv_apply_t(Z, starts, psi, sigma2, BT)
        if bad >= 0:
            from .exceptions import NonPositiveDefiniteError

            raise NonPositiveDefiniteError(data.group_labels[bad])
        u = OUT[0].copy()
        WXT = OUT[1:]
        h_exact = np.einsum("jn,jn->j", XT, WXT) * inv_n
        h = np.clip(h_exact, config.c_min, config.c_max)

        _kernels.beta_sweep(
            XT, WXT, r, u, beta, h, h_exact, penalized,
            fam, lam, a, lq, inv_n,
            config.armijo_delta, config.armijo_rho, config.armijo_gamma,
            config.armijo_alpha0, _MAX_BACKTRACKS, config.zero_clamp,
        )

        sigma2, theta2 = _eta_pass(data, Z, starts, r, sigma2, theta2, spec, config)
        if sigma2 <= 1.5 * SIGMA2_FLOOR:
            # the fit interpolates and the likelihood is unbounded below
            raise DegenerateDataError(
                "error variance collapsed to its floor; the penalized likelihood "
                "has no interior minimizer at this lambda"
            )

        psi = spec.psi_diag(theta2)
        nll = _nll_or_raise(data, Z, starts, psi, sigma2, r)
        objective = nll + n * _penalty_sum(penalty, beta, penalized)
        if objective > trace[-1] + 1e-10:
            raise InternalConsistencyError(
                f"objective increased from {trace[-1]!r} to {objective!r}"
            )
        rel_decrease = (trace[-1] - objective) / max(1.0, abs(trace[-1]))
        trace.append(objective)

        active = _active_set(beta)
        if rel_decrease < config.objective_tolerance and active == active_prev:
            quiet_iters += 1
        else:
            quiet_iters = 0
        active_prev = active
        if quiet_iters >= 2:
            converged = True
            break

    params = ModelParameters(beta=beta, sigma2=sigma2, theta2=theta2)
    return FitResult(
        params=params,
        active_set=_active_set(beta),
        objective_trace=np.asarray(trace),
        neg_loglik=float(nll),
        converged=converged,
        iterations=iterations,
        penalty=penalty,
    )


def newton_lqa_fit(data, spec, penalty, init, config=None):
    """Newton iterations on the locally quadratic approximated objective.

    Coefficients below ``zero_clamp`` are clamped to exact zeros before each
    weight evaluation and stay out of the working set. The beta step solves
    (H + W) delta = -(grad + W beta) on the working set with
    W = diag(p'(|beta_j|)/|beta_j|); the eta step is a Newton step on the
    variance components, replaced by a coordinate pass whenever the eta
    Hessian is not positive definite or the step is infeasible. Steps are
    halved until the objective does not increase. Requires p < n.
    """
    config = config or SolverConfig()
    from .likelihood import _validate

    _validate(data, init, spec)
    if data.p >= data.n:
        raise NumericalDomainError(f"newton_lqa_fit requires p < n, got p={data.p}, n={data.n}")

    y, X, XT, Z, starts = data.stacked
    n = y.shape[0]
    inv_n = 1.0 / n
    penalized = data.penalized_mask.astype(bool)
    fam, lam, a, lq = penalty.kernel_args()
    warnings = []

    beta = init.beta.copy()
    sigma2 = init.sigma2
    theta2 = init.theta2.copy()

    def objective_at(b, s2, t2):
        psi = spec.psi_diag(t2)
        value, bad = _kernels.nll_quad(Z, starts, psi, s2, y - X @ b)
        if bad >= 0:
            return np.inf
        return value + n * _penalty_sum(penalty, b, data.penalized_mask)

    beta[penalized & (np.abs(beta) < config.zero_clamp)] = 0.0
    current = objective_at(beta, sigma2, theta2)
    if not np.isfinite(current):
        from .exceptions import NonPositiveDefiniteError

        raise NonPositiveDefiniteError("<init>", "covariance not positive definite at the initial point")
    trace = [current]
    active_prev = _active_set(beta)
    quiet_iters = 0
    converged = False
    iterations = 0

    for _ in range(config.max_outer_iterations):
        iterations += 1
        params = ModelParameters(beta=beta, sigma2=sigma2, theta2=theta2)

        # beta step on the working set
        work = np.flatnonzero(~penalized | (beta != 0.0))
        if work.size:
            F = fisher_info_beta(data, params, spec) * inv_n
            from .likelihood import grad_beta as _grad_beta

            g = _grad_beta(data, params, spec) * inv_n
            H = F[np.ix_(work, work)]
            w = np.zeros(work.size)
            for i, j in enumerate(work):
                if penalized[j]:
                    t = abs(beta[j])
                    w[i] = _kernels.penalty_deriv(fam, lam, a, lq, t) / t
            M = H + np.diag(w)
            rhs = g[work] + w * beta[work]
            try:
                step = -np.linalg.solve(M, rhs)
            except np.linalg.LinAlgError:
                M = M + 1e-8 * np.eye(work.size)
                step = -np.linalg.solve(M, rhs)
                if "ridge_stabilized_beta" not in warnings:
                    warnings.append("ridge_stabilized_beta")
            alpha = 1.0
            for _ in range(30):
                cand = beta.copy()
                cand[work] += alpha * step
                cand[penalized & (np.abs(cand) < config.zero_clamp)] = 0.0
                value = objective_at(cand, sigma2, theta2)
                if value <= current:
                    beta, current = cand, value
                    break
                alpha *= 0.5

        # eta step: Newton when the Hessian cooperates, coordinate pass otherwise
        params = ModelParameters(beta=beta, sigma2=sigma2, theta2=theta2)
        eta = np.concatenate([[sigma2], theta2])
        use_pass = True
        He = hessian_eta(data, params, spec) * inv_n
        try:
            np.linalg.cholesky(He)
            ge = grad_eta(data, params, spec) * inv_n
            step = -np.linalg.solve(He, ge)
            alpha = 1.0
            for _ in range(20):
                cand = eta + alpha * step
                if cand[0] >= SIGMA2_FLOOR and np.all(cand[1:] >= 0.0):
                    value = objective_at(beta, cand[0], cand[1:])
                    if value <= current:
                        sigma2, theta2 = float(cand[0]), cand[1:].copy()
                        current = value
                        use_pass = False
                        break
                alpha *= 0.5
        except np.linalg.LinAlgError:
            pass
        if use_pass:
            r = y - X @ beta
            sigma2, theta2 = _eta_pass(data, Z, starts, r, sigma2, theta2, spec, config)
            current = objective_at(beta, sigma2, theta2)

        if current > trace[-1] + 1e-10:
            raise InternalConsistencyError(
                f"objective increased from {trace[-1]!r} to {current!r}"
            )
        rel_decrease = (trace[-1] - current) / max(1.0, abs(trace[-1]))
        trace.append(current)
        active = _active_set(beta)
        if rel_decrease < config.objective_tolerance and active == active_prev:
            quiet_iters += 1
        else:
            quiet_iters = 0
        active_prev = active
        if quiet_iters >= 2:
            converged = True
            break

    params = ModelParameters(beta=beta, sigma2=sigma2, theta2=theta2)
    psi = spec.psi_diag(theta2)
    nll = _nll_or_raise(data, Z, starts, psi, sigma2, y - X @ beta)
    return FitResult(
        params=params,
        active_set=_active_set(beta),
        objective_trace=np.asarray(trace),
        neg_loglik=float(nll),
        converged=converged,
        iterations=iterations,
        penalty=penalty,
        warnings=tuple(warnings),
    )


def _lasso_cd(XT, y, penalized, lam, beta, max_sweeps=200, tol=1e-9):
    """Coordinate descent for the plain L1 problem (identity covariance)."""
    n = y.shape[0]
    inv_n = 1.0 / n
    r = y - beta @ XT
    u = r.copy()
    h_exact = np.einsum("jn,jn->j", XT, XT) * inv_n
    h = np.maximum(h_exact, 1e-12)
    for _ in range(max_sweeps):
        before = beta.copy()
        _kernels.beta_sweep(
            XT, XT, r, u, beta, h, h_exact, penalized,
            _kernels.FAMILY_L1, lam, 3.7, 1.0, inv_n,
            0.1, 0.001, 0.0, 1.0, _MAX_BACKTRACKS, 1e-12,
        )
        if np.max(np.abs(beta - before)) <= tol * (1.0 + np.max(np.abs(beta))):
            break
    return beta, r


def lasso_init(data, spec, folds=10, seed=0, config=None):
    """Initial parameters from a cross-validated plain-regression L1 fit.

    The mixed structure is ignored (V = sigma2 * I): beta is the L1 solution
    at the fold-averaged-error-minimizing lambda on a 50-point log grid from
    lambda_max = max_j |x_j' y| / n down to 1e-3 * lambda_max, with the
    unpenalized columns always free. The variance components start from
    sigma2 = var(residuals), theta2 = sigma2 / 2 and take one coordinate
    minimization pass. Deterministic for a given seed.
    """
    config = config or SolverConfig()
    y, X, XT, Z, starts = data.stacked
    n, p = X.shape
    if not np.any(y != 0.0):
        raise DegenerateDataError("the response is identically zero")
    if n < folds:
        raise NumericalDomainError(f"need at least {folds} observations for {folds}-fold CV, got {n}")
    penalized = data.penalized_mask
    pen_idx = np.flatnonzero(penalized)

    beta = np.zeros(p)
    if pen_idx.size:
        lam_max = float(np.max(np.abs(XT[pen_idx] @ y)) / n)
        if lam_max <= 0.0:
            lam_max = 1.0
        grid = np.geomspace(lam_max, 1e-3 * lam_max, 50)

        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0x1A550])))
        perm = rng.permutation(n)
        fold_slices = np.array_split(perm, folds)
        sse = np.zeros(grid.shape[0])
        for val_rows in fold_slices:
            mask = np.ones(n, dtype=bool)
            mask[val_rows] = False
            XT_tr = np.ascontiguousarray(XT[:, mask])
            y_tr = y[mask]
            X_val = X[val_rows]
            y_val = y[val_rows]
            b = np.zeros(p)
            for li, lam in enumerate(grid):
                b, _ = _lasso_cd(XT_tr, y_tr, penalized, float(lam), b, tol=1e-8)
                err = y_val - X_val @ b
                sse[li] += err @ err
        best = int(np.argmin(sse))
        b = np.zeros(p)
        for lam in grid[: best + 1]:
            b, _ = _lasso_cd(XT, y, penalized, float(lam), b, tol=1e-9)
        beta = b
    else:
        beta, _ = _lasso_cd(XT, y, penalized, 0.0, beta, tol=1e-10)

    resid = y - X @ beta
    sigma2 = max(float(np.var(resid)), 1e-8)
    theta2 = np.full(spec.q_star, sigma2 / 2.0)
    params = ModelParameters(beta=beta, sigma2=sigma2, theta2=theta2)
    return update_variance_components(data, spec, beta, params, config)


def restricted_gls_fit(data, spec, config=None, max_iterations=100):
    """Likelihood fit with every penalized coordinate pinned to zero.

    Alternates the exact generalized least squares solve on the unpenalized
    columns with variance-component passes until the likelihood stabilizes.
    Used to anchor the regularization grid and as the total-shrinkage
    reference fit.
    """
    config = config or SolverConfig()
    y, X, XT, Z, starts = data.stacked
    n = y.shape[0]
    cols = np.asarray(sorted(data.unpenalized), dtype=int)
    beta = np.zeros(data.p)
    sigma2 = max(float(np.var(y)), 1e-8)
    theta2 = np.full(spec.q_star, sigma2 / 2.0)
    prev = np.inf
    for _ in range(max_iterations):
        if cols.size:
            params = ModelParameters(beta=beta, sigma2=sigma2, theta2=theta2)
            from .likelihood import vinv_apply_t as _vinv

            XcT = np.ascontiguousarray(XT[cols])
            WXcT = _vinv(data, params, spec, XcT)
            Wy = _vinv(data, params, spec, y[None, :])[0]
            A = XcT @ WXcT.T
            b = XcT @ Wy
            beta = np.zeros(data.p)
            beta[cols] = np.linalg.solve(A, b)
        r = y - X @ beta
        sigma2, theta2 = _eta_pass(data, Z, starts, r, sigma2, theta2, spec, config)
        psi = spec.psi_diag(theta2)
        nll = _nll_or_raise(data, Z, starts, psi, sigma2, r)
        if abs(prev - nll) <= 1e-10 * max(1.0, abs(nll)):
            break
        prev = nll
    return ModelParameters(beta=beta, sigma2=sigma2, theta2=theta2)

"""Post-fit covariance estimation and random-effect prediction."""

from dataclasses import dataclass

import numpy as np

from .data import SIGMA2_FLOOR
from .exceptions import GroupMismatchError, NumericalDomainError
from .likelihood import (
    fisher_info_beta,
    group_covariance,
    group_score_vectors,
    hessian_eta,
)
from .penalties import HARD_ZERO, lqa_weight

#: variance components at or below this distance from their bound count as boundary
_BOUNDARY_EPS = 1e-8


@dataclass(frozen=True)
class InferenceReport:
    """Covariances, standard errors, and random-effect predictions for a fit."""

    active_set: tuple
    cov_beta_active: np.ndarray
    se_beta_active: np.ndarray
    cov_eta: np.ndarray
    eta_unavailable: tuple
    predicted_effects: np.ndarray
    conditional_fitted: tuple
    prediction_error: float
    warnings: tuple = ()


def sandwich_cov_beta(data, spec, fit, penalty):
    """Sandwich covariance of the active coefficients.

    B^{-1} M B^{-1} with B the active-set likelihood Hessian plus the
    sample-scaled local quadratic penalty curvature, and M the empirical
    covariance of the per-group score vectors times the group count (the
    groups are the independent units).

    Returns (cov, warnings) where warnings flags a ridge-stabilized solve.
    """
    active = np.asarray(fit.active_set, dtype=int)
    if active.size == 0:
        raise NumericalDomainError("sandwich covariance needs a nonempty active set")
    params = fit.params
    H = fisher_info_beta(data, params, spec)[np.ix_(active, active)]
    w = np.zeros(active.size)
    for i, j in enumerate(active):
        if data.penalized_mask[j] and abs(params.beta[j]) >= HARD_ZERO:
            w[i] = lqa_weight(penalty, params.beta[j])
    B = H + data.n * np.diag(w)

    scores = group_score_vectors(data, params, spec, columns=active)
    centered = scores - scores.mean(axis=0, keepdims=True)
    ngroups = data.n_groups
    if ngroups > 1:
        M = centered.T @ centered * (ngroups / (ngroups - 1.0))
    else:
        M = centered.T @ centered

    warnings = ()
    try:
        Binv = np.linalg.inv(B)
    except np.linalg.LinAlgError:
        Binv = np.linalg.inv(B + 1e-8 * np.eye(active.size))
        warnings = ("ridge_stabilized_sandwich",)
    cov = Binv @ M @ Binv
    cov = 0.5 * (cov + cov.T)
    return cov, warnings


def cov_eta(data, spec, fit):
    """Inverse observed information of the variance components.

    Components sitting on their boundary (theta2 at 0, sigma2 at its floor)
    get no extrapolated standard error: their rows and columns are NaN and
    their indices are reported. Returns (cov, unavailable_indices).
    """
    params = fit.params
    eta = params.eta
    d = eta.shape[0]
    lower = np.concatenate([[SIGMA2_FLOOR], np.zeros(d - 1)])
    interior = np.flatnonzero(eta - lower > _BOUNDARY_EPS)
    unavailable = tuple(int(k) for k in range(d) if k not in set(interior.tolist()))
    cov = np.full((d, d), np.nan)
    if interior.size:
        H = hessian_eta(data, params, spec)[np.ix_(interior, interior)]
        block = np.linalg.inv(H)
        block = 0.5 * (block + block.T)
        cov[np.ix_(interior, interior)] = block
    return cov, unavailable


def predict_random_effects(data, spec, fit):
    """Posterior modes of the group effects: Psi Z_i' V_i^{-1} (y_i - X_i beta).

    Under the fitted Gaussian model the posterior of b_i given y_i is normal,
    so the mode coincides with the best linear unbiased predictor.
    """
    params = fit.params
    psi = spec.psi_diag(params.theta2)
    out = np.zeros((data.n_groups, data.q))
    for i, block in enumerate(data.groups):
        if not np.any(psi > 0.0):
            continue
        V = group_covariance(block, params, spec)
        r = block.y - block.X @ params.beta
        out[i] = psi * (block.Z.T @ np.linalg.solve(V, r))
    return out


def prediction_error(data_eval, fit, predicted_effects):
    """Mean squared conditional residual (1/n) sum_i |y_i - X_i b - Z_i b_i|^2.

    The evaluation data must carry the fitted model's groups, matched by
    label, order, and design dimensions.
    """
    predicted_effects = np.asarray(predicted_effects, dtype=float)
    if predicted_effects.shape != (data_eval.n_groups, data_eval.q):
        raise GroupMismatchError(
            "<shape>", f"predicted effects have shape {predicted_effects.shape}, "
            f"expected {(data_eval.n_groups, data_eval.q)}"
        )
    if fit.params.beta.shape[0] != data_eval.p:
        raise GroupMismatchError("<columns>", "fit and evaluation data disagree on the fixed-effect columns")
    sse = 0.0
    for i, block in enumerate(data_eval.groups):
        resid = block.y - block.X @ fit.params.beta - block.Z @ predicted_effects[i]
        sse += resid @ resid
    return float(sse / data_eval.n)


def conditional_fitted_values(data, fit, predicted_effects):
    """Per-group X_i beta + Z_i b_i."""
    return tuple(
        block.X @ fit.params.beta + block.Z @ predicted_effects[i]
        for i, block in enumerate(data.groups)
    )


def build_report(data, spec, fit, penalty):
    """Assemble the full post-fit report for a converged fit."""
    cov_b, warn = sandwich_cov_beta(data, spec, fit, penalty)
    se = np.sqrt(np.maximum(np.diag(cov_b), 0.0))
    cov_e, unavailable = cov_eta(data, spec, fit)
    effects = predict_random_effects(data, spec, fit)
    fitted = conditional_fitted_values(data, fit, effects)
    pe = prediction_error(data, fit, effects)
    return InferenceReport(
        active_set=fit.active_set,
        cov_beta_active=cov_b,
        se_beta_active=se,
        cov_eta=cov_e,
        eta_unavailable=unavailable,
        predicted_effects=effects,
        conditional_fitted=fitted,
        prediction_error=pe,
        warnings=warn,
    )

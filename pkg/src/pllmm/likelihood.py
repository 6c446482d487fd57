"""Marginal Gaussian negative log-likelihood and its analytic derivatives.

The marginal covariance of group i is V_i = Z_i Psi Z_i' + sigma2 * I, with
Psi determined by the variance structure. All operations are pure functions
of their arguments; each small V_i is factorized on its own (the blocks are
tiny, so a stacked factorization would only waste work).
"""

import numpy as np

from . import _kernels
from .data import VarianceStructure
from .exceptions import NonPositiveDefiniteError, NumericalDomainError


def _validate(data, params, spec):
    if spec.q != data.q:
        raise NumericalDomainError(f"variance spec is for q={spec.q}, data has q={data.q}")
    if params.beta.shape[0] != data.p:
        raise NumericalDomainError(f"beta has length {params.beta.shape[0]}, data has p={data.p}")
    if params.theta2.shape[0] != spec.q_star:
        raise NumericalDomainError(
            f"theta2 has length {params.theta2.shape[0]}, structure needs {spec.q_star}"
        )


def _raise_if_bad(bad_group, data):
    if bad_group >= 0:
        raise NonPositiveDefiniteError(data.group_labels[bad_group])


def residuals(data, beta):
    """Stacked y - X beta."""
    y, X, _, _, _ = data.stacked
    return y - X @ beta


def group_covariance(block, params, spec):
    """Marginal covariance V_i = Z_i Psi Z_i' + sigma2 * I for one group."""
    if params.theta2.shape[0] != spec.q_star:
        raise NumericalDomainError(
            f"theta2 has length {params.theta2.shape[0]}, structure needs {spec.q_star}"
        )
    psi = spec.psi_diag(params.theta2)
    V = (block.Z * psi) @ block.Z.T + params.sigma2 * np.eye(block.n_obs)
    if not np.all(np.isfinite(V)):
        raise NumericalDomainError("group covariance has non-finite entries")
    return V


def neg_log_likelihood(data, params, spec):
    """0.5 * sum_i [n_i log(2 pi) + log|V_i| + r_i' V_i^{-1} r_i]."""
    _validate(data, params, spec)
    y, X, _, Z, starts = data.stacked
    r = y - X @ params.beta
    psi = spec.psi_diag(params.theta2)
    value, bad = _kernels.nll_quad(Z, starts, psi, params.sigma2, r)
    _raise_if_bad(bad, data)
    return float(value)


def vinv_apply_t(data, params, spec, BT):
    """Apply the block-diagonal V^{-1} to the rows of BT (shape (k, n))."""
    _, _, _, Z, starts = data.stacked
    psi = spec.psi_diag(params.theta2)
    out, bad = _kernels.vinv_apply_t(Z, starts, psi, params.sigma2, np.ascontiguousarray(BT))
    _raise_if_bad(bad, data)
    return out


def grad_beta(data, params, spec):
    """Gradient of the negative log-likelihood in beta: -X' V^{-1} r."""
    _validate(data, params, spec)
    _, _, XT, _, _ = data.stacked
    r = residuals(data, params.beta)
    u = vinv_apply_t(data, params, spec, r[None, :])[0]
    return -(XT @ u)


def fisher_info_beta(data, params, spec):
    """Fisher information of beta: X' V^{-1} X (the exact beta-Hessian)."""
    _validate(data, params, spec)
    _, _, XT, _, _ = data.stacked
    WXT = vinv_apply_t(data, params, spec, XT)
    F = XT @ WXT.T
    return 0.5 * (F + F.T)


def _dv_matrices(block, spec):
    """Derivative of V_i in each variance component (sigma2 first)."""
    mats = [np.eye(block.n_obs)]
    if spec.structure is VarianceStructure.ISOTROPIC:
        mats.append(block.Z @ block.Z.T)
    else:
        for k in range(spec.q):
            zk = block.Z[:, k]
            mats.append(np.outer(zk, zk))
    return mats


def grad_eta(data, params, spec):
    """Gradient of the negative log-likelihood in (sigma2, theta2...).

    Uses the variance-scale score
    0.5 * [tr(V^{-1} dV_k) - r' V^{-1} dV_k V^{-1} r] summed over groups.
    """
    _validate(data, params, spec)
    d = spec.q_star + 1
    grad = np.zeros(d)
    for gi, block in enumerate(data.groups):
        V = group_covariance(block, params, spec)
        r = block.y - block.X @ params.beta
        try:
            Vinv = np.linalg.inv(V)
        except np.linalg.LinAlgError as exc:
            raise NonPositiveDefiniteError(data.group_labels[gi]) from exc
        u = Vinv @ r
        for k, M in enumerate(_dv_matrices(block, spec)):
            grad[k] += 0.5 * (np.trace(Vinv @ M) - u @ M @ u)
    return grad


def hessian_eta(data, params, spec):
    """Observed Hessian of the negative log-likelihood in the variance components.

    For V linear in eta the (k, l) entry is
    -0.5 * tr(V^{-1} dV_k V^{-1} dV_l) + u' dV_k V^{-1} dV_l u with u = V^{-1} r.
    """
    _validate(data, params, spec)
    d = spec.q_star + 1
    H = np.zeros((d, d))
    for block in data.groups:
        V = group_covariance(block, params, spec)
        r = block.y - block.X @ params.beta
        Vinv = np.linalg.inv(V)
        u = Vinv @ r
        mats = _dv_matrices(block, spec)
        T = [Vinv @ M for M in mats]
        Mu = [M @ u for M in mats]
        for k in range(d):
            for l in range(k, d):
                val = -0.5 * np.trace(T[k] @ T[l]) + Mu[k] @ Vinv @ Mu[l]
                H[k, l] += val
                if l != k:
                    H[l, k] += val
    return H


def group_score_vectors(data, params, spec, columns=None):
    """Per-group contributions to grad_beta, one row per group.

    Row i is -X_i' V_i^{-1} r_i restricted to ``columns`` (all columns when
    None). Groups are the independent units behind the sandwich covariance.
    """
    _validate(data, params, spec)
    cols = np.arange(data.p) if columns is None else np.asarray(columns, dtype=int)
    scores = np.zeros((data.n_groups, cols.shape[0]))
    psi = spec.psi_diag(params.theta2)
    for i, block in enumerate(data.groups):
        V = (block.Z * psi) @ block.Z.T + params.sigma2 * np.eye(block.n_obs)
        r = block.y - block.X @ params.beta
        try:
            u = np.linalg.solve(V, r)
        except np.linalg.LinAlgError as exc:
            raise NonPositiveDefiniteError(data.group_labels[i]) from exc
        scores[i] = -(block.X[:, cols].T @ u)
    return scores

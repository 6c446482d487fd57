"""Monte Carlo study: grouped data generation, replicated fits, summaries.

Replicates are generated from a counter-based generator keyed by
(seed, replicate_index, stream), so they are reproducible individually and
safe to run in parallel; aggregation sorts by replicate index and is
independent of completion order.
"""

import concurrent.futures
from dataclasses import dataclass, field

import numpy as np

from .data import MixedModelData, VarianceSpec, VarianceStructure
from .exceptions import NumericalDomainError, PllmmError, ScenarioError
from .inference import predict_random_effects, prediction_error
from .penalties import SCAD_DEFAULT_A, PenaltyFamily, PenaltySpec
from .selection import fit_path
from .solver import SolverConfig, lasso_init

_STREAM_X = 0
_STREAM_B = 1
_STREAM_EPS = 2
_STREAM_CV = 3

_DEFAULT_BETA = (1.0, 2.0, 4.0, 3.0, 3.0)

_ar1_chol_cache = {}


def _rng(seed, replicate, stream):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(replicate), int(stream)])))


def _ar1_cholesky(dim, rho):
    key = (dim, float(rho))
    if key not in _ar1_chol_cache:
        idx = np.arange(dim)
        C = rho ** np.abs(idx[:, None] - idx[None, :])
        _ar1_chol_cache[key] = np.linalg.cholesky(C)
    return _ar1_chol_cache[key]


@dataclass(frozen=True)
class SimulationScenario:
    """All knobs of the simulation design."""

    n_groups: int = 25
    group_size: int = 6
    p: int = 10
    s: int = 5
    beta0: tuple = None
    rho: float = 0.0
    theta2: float = 0.56
    sigma2: float = 0.25
    q: int = 2
    penalty_family: str = "scad"
    scad_a: float = SCAD_DEFAULT_A
    replicates: int = 100
    seed: int = 0
    n_lambda: int = 30
    grid_ratio: float = 1e-3
    folds: int = 10

    def __post_init__(self):
        if self.s > self.p:
            raise NumericalDomainError(f"active size s={self.s} exceeds p={self.p}")
        if self.q > self.p:
            raise NumericalDomainError(f"random-effect count q={self.q} exceeds p={self.p}")
        if self.beta0 is None:
            if self.s != len(_DEFAULT_BETA):
                raise NumericalDomainError(
                    f"the default coefficient vector has {len(_DEFAULT_BETA)} active entries; "
                    f"pass beta0 explicitly for s={self.s}"
                )
            beta0 = _DEFAULT_BETA + (0.0,) * (self.p - self.s)
        else:
            beta0 = tuple(float(b) for b in self.beta0)
            if len(beta0) != self.p:
                raise NumericalDomainError(f"beta0 has length {len(beta0)}, expected p={self.p}")
            if sum(b != 0.0 for b in beta0) != self.s:
                raise NumericalDomainError("beta0 must have exactly s nonzero entries")
        object.__setattr__(self, "beta0", beta0)
        if self.replicates < 1:
            raise NumericalDomainError("at least one replicate is required")
        PenaltyFamily(self.penalty_family)

    @property
    def n(self):
        return self.n_groups * self.group_size

    @property
    def true_support(self):
        return tuple(j for j, b in enumerate(self.beta0) if b != 0.0)

    @property
    def variance_spec(self):
        return VarianceSpec(structure=VarianceStructure.ISOTROPIC, q=self.q)

    def penalty(self, family=None):
        fam = PenaltyFamily(family or self.penalty_family)
        return PenaltySpec(family=fam, lam=0.0, scad_a=self.scad_a)


@dataclass(frozen=True)
class GroundTruth:
    beta0: np.ndarray
    support: tuple
    random_effects: np.ndarray
    theta2: float
    sigma2: float


def generate_dataset(scenario, replicate_index):
    """One replicate's data: intercept column, AR(1)-correlated covariates,
    random effects on the first q columns, Gaussian noise.

    Deterministic given (scenario.seed, replicate_index). Returns
    (MixedModelData, GroundTruth); the first two columns are unpenalized.
    """
    n, p, q = scenario.n, scenario.p, scenario.q
    rng_x = _rng(scenario.seed, replicate_index, _STREAM_X)
    X = np.empty((n, p))
    X[:, 0] = 1.0
    G = rng_x.standard_normal((n, p - 1))
    if scenario.rho != 0.0:
        G = G @ _ar1_cholesky(p - 1, scenario.rho).T
    X[:, 1:] = G
    Z = X[:, :q]

    rng_b = _rng(scenario.seed, replicate_index, _STREAM_B)
    b = rng_b.standard_normal((scenario.n_groups, q)) * np.sqrt(scenario.theta2)
    rng_e = _rng(scenario.seed, replicate_index, _STREAM_EPS)
    eps = rng_e.standard_normal(n) * np.sqrt(scenario.sigma2)

    group_ids = np.repeat(np.arange(scenario.n_groups), scenario.group_size)
    beta0 = np.asarray(scenario.beta0)
    y = X @ beta0 + np.sum(Z * b[group_ids], axis=1) + eps
    data = MixedModelData.from_arrays(y, X, Z, group_ids, unpenalized={0, 1})
    truth = GroundTruth(
        beta0=beta0,
        support=scenario.true_support,
        random_effects=b,
        theta2=scenario.theta2,
        sigma2=scenario.sigma2,
    )
    return data, truth


@dataclass(frozen=True)
class ReplicateRecord:
    """Selected-model outcomes for one replicate."""

    replicate: int
    beta_hat: np.ndarray
    sigma2_hat: float
    theta2_hat: float
    active_size: int
    true_positives: int
    exact_recovery: bool
    prediction_error: float
    selected_lambda: float
    converged: bool


def _child_seed(seed, replicate, stream):
    return int(np.random.SeedSequence([int(seed), int(replicate), int(stream)]).generate_state(1)[0])


def run_replicate(scenario, replicate_index, config=None, penalty_family=None):
    """Generate, initialize, fit the path, and score one replicate."""
    config = config or SolverConfig()
    data, truth = generate_dataset(scenario, replicate_index)
    spec = scenario.variance_spec
    init = lasso_init(
        data, spec, folds=scenario.folds,
        seed=_child_seed(scenario.seed, replicate_index, _STREAM_CV), config=config,
    )
    path = fit_path(
        data, spec, scenario.penalty(penalty_family), config=config,
        n_points=scenario.n_lambda, ratio=scenario.grid_ratio, init=init,
    )
    fit = path.selected_fit
    effects = predict_random_effects(data, spec, fit)
    pe = prediction_error(data, fit, effects)
    beta_hat = fit.params.beta
    active = set(fit.active_set)
    support = set(truth.support)
    return ReplicateRecord(
        replicate=replicate_index,
        beta_hat=beta_hat,
        sigma2_hat=fit.params.sigma2,
        theta2_hat=float(fit.params.theta2[0]),
        active_size=len(active),
        true_positives=len(active & support),
        exact_recovery=active == support,
        prediction_error=pe,
        selected_lambda=float(path.grid[path.selected_index]),
        converged=fit.converged,
    )


def _replicate_task(scenario, replicate_index, penalty_family):
    try:
        return "ok", run_replicate(scenario, replicate_index, penalty_family=penalty_family)
    except PllmmError as exc:
        return "fail", f"replicate {replicate_index}: {exc}"


def _run_replicates(scenario, threads=1, penalty_family=None):
    tasks = list(range(scenario.replicates))
    results = []
    if threads and threads > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_replicate_task, [scenario] * len(tasks), tasks,
                                    [penalty_family] * len(tasks)))
    else:
        results = [_replicate_task(scenario, k, penalty_family) for k in tasks]
    records = [payload for status, payload in results if status == "ok"]
    failures = tuple(payload for status, payload in results if status == "fail")
    records.sort(key=lambda rec: rec.replicate)
    return records, failures


@dataclass(frozen=True)
class ScenarioSummary:
    """Replicate aggregates in the layout of the study tables.

    beta_active_* run over the true support in index order;
    beta_inactive_* average the per-coordinate statistics over the
    coordinates outside the true support. SDs use the sample convention
    (ddof=1) and are zero, with ``degenerate_sd`` set, for a single
    replicate.
    """

    scenario: SimulationScenario
    completed: int
    failures: tuple
    active_size_mean: float
    active_size_sd: float
    tp_mean: float
    tp_sd: float
    pe_mean: float
    pe_sd: float
    beta_active_mean: np.ndarray
    beta_active_sd: np.ndarray
    beta_active_mse: np.ndarray
    beta_inactive_mean: float
    beta_inactive_sd: float
    beta_inactive_mse: float
    sigma2_mean: float
    sigma2_sd: float
    sigma2_mse: float
    theta2_mean: float
    theta2_sd: float
    theta2_mse: float
    recovery_rate: float
    degenerate_sd: bool
    records: tuple = field(repr=False, default=())


def _sd(values):
    values = np.asarray(values, dtype=float)
    if values.shape[0] < 2:
        return 0.0
    return float(np.std(values, ddof=1))


def summarize(scenario, records, failures):
    if not records:
        raise ScenarioError("no replicate succeeded")
    B = np.vstack([rec.beta_hat for rec in records])
    support = np.asarray(scenario.true_support, dtype=int)
    inactive = np.asarray([j for j in range(scenario.p) if j not in set(scenario.true_support)], dtype=int)
    beta0 = np.asarray(scenario.beta0)

    col_mean = B.mean(axis=0)
    col_sd = np.array([_sd(B[:, j]) for j in range(scenario.p)])
    col_mse = ((B - beta0) ** 2).mean(axis=0)

    sizes = np.array([rec.active_size for rec in records], dtype=float)
    tps = np.array([rec.true_positives for rec in records], dtype=float)
    pes = np.array([rec.prediction_error for rec in records], dtype=float)
    s2 = np.array([rec.sigma2_hat for rec in records], dtype=float)
    t2 = np.array([rec.theta2_hat for rec in records], dtype=float)

    return ScenarioSummary(
        scenario=scenario,
        completed=len(records),
        failures=failures,
        active_size_mean=float(sizes.mean()),
        active_size_sd=_sd(sizes),
        tp_mean=float(tps.mean()),
        tp_sd=_sd(tps),
        pe_mean=float(pes.mean()),
        pe_sd=_sd(pes),
        beta_active_mean=col_mean[support],
        beta_active_sd=col_sd[support],
        beta_active_mse=col_mse[support],
        beta_inactive_mean=float(col_mean[inactive].mean()) if inactive.size else float("nan"),
        beta_inactive_sd=float(col_sd[inactive].mean()) if inactive.size else float("nan"),
        beta_inactive_mse=float(col_mse[inactive].mean()) if inactive.size else float("nan"),
        sigma2_mean=float(s2.mean()),
        sigma2_sd=_sd(s2),
        sigma2_mse=float(((s2 - scenario.sigma2) ** 2).mean()),
        theta2_mean=float(t2.mean()),
        theta2_sd=_sd(t2),
        theta2_mse=float(((t2 - scenario.theta2) ** 2).mean()),
        recovery_rate=float(np.mean([rec.exact_recovery for rec in records])),
        degenerate_sd=len(records) < 2,
        records=tuple(records),
    )


def run_scenario(scenario, threads=1, penalty_family=None):
    """Replicated generate / initialize / path-fit / score, then aggregate.

    A replicate failure is recorded and excluded; more than 10% failures
    abort with ScenarioError.
    """
    records, failures = _run_replicates(scenario, threads=threads, penalty_family=penalty_family)
    if len(failures) > 0.10 * scenario.replicates:
        raise ScenarioError(
            f"{len(failures)} of {scenario.replicates} replicates failed: {failures[0]}"
        )
    return summarize(scenario, records, failures)


@dataclass(frozen=True)
class PenaltyComparison:
    """SCAD and L1 on bit-identical data, with per-replicate paired differences."""

    scad: ScenarioSummary
    l1: ScenarioSummary
    paired_replicates: tuple
    diff_active_size: np.ndarray
    diff_tp: np.ndarray
    diff_pe: np.ndarray
    diff_support_sqerr: np.ndarray

    @property
    def mean_active_size_gap(self):
        """Mean of |S|_l1 - |S|_scad over paired replicates."""
        return float(self.diff_active_size.mean())


def compare_penalties(scenario, threads=1):
    """Run SCAD and L1 on identical datasets and pair the outcomes.

    Differences are L1 minus SCAD, over replicates where both succeeded;
    the squared-error difference sums over the true support.
    """
    scad_summary = run_scenario(scenario, threads=threads, penalty_family="scad")
    l1_summary = run_scenario(scenario, threads=threads, penalty_family="l1")
    scad_by_rep = {rec.replicate: rec for rec in scad_summary.records}
    l1_by_rep = {rec.replicate: rec for rec in l1_summary.records}
    common = sorted(set(scad_by_rep) & set(l1_by_rep))
    support = np.asarray(scenario.true_support, dtype=int)
    beta0 = np.asarray(scenario.beta0)[support]

    def sqerr(rec):
        return float(((rec.beta_hat[support] - beta0) ** 2).sum())

    return PenaltyComparison(
        scad=scad_summary,
        l1=l1_summary,
        paired_replicates=tuple(common),
        diff_active_size=np.array([l1_by_rep[k].active_size - scad_by_rep[k].active_size for k in common], dtype=float),
        diff_tp=np.array([l1_by_rep[k].true_positives - scad_by_rep[k].true_positives for k in common], dtype=float),
        diff_pe=np.array([l1_by_rep[k].prediction_error - scad_by_rep[k].prediction_error for k in common]),
        diff_support_sqerr=np.array([sqerr(l1_by_rep[k]) - sqerr(scad_by_rep[k]) for k in common]),
    )


def summary_to_kv(summary):
    """Flatten a ScenarioSummary into the documented key-value schema."""
    sc = summary.scenario
    return {
        "schema": "pllmm.scenario_summary.v1",
        "penalty": sc.penalty_family,
        "p": sc.p,
        "s": sc.s,
        "rho": sc.rho,
        "groups": sc.n_groups,
        "group_size": sc.group_size,
        "theta2_true": sc.theta2,
        "sigma2_true": sc.sigma2,
        "replicates": sc.replicates,
        "seed": sc.seed,
        "completed": summary.completed,
        "failed": len(summary.failures),
        "degenerate_sd": summary.degenerate_sd,
        "mean.active_size": summary.active_size_mean,
        "sd.active_size": summary.active_size_sd,
        "mean.tp": summary.tp_mean,
        "sd.tp": summary.tp_sd,
        "mean.pe": summary.pe_mean,
        "sd.pe": summary.pe_sd,
        "mean.beta_active": summary.beta_active_mean,
        "sd.beta_active": summary.beta_active_sd,
        "mse.beta_active": summary.beta_active_mse,
        "mean.beta_inactive": summary.beta_inactive_mean,
        "sd.beta_inactive": summary.beta_inactive_sd,
        "mse.beta_inactive": summary.beta_inactive_mse,
        "mean.sigma2": summary.sigma2_mean,
        "sd.sigma2": summary.sigma2_sd,
        "mse.sigma2": summary.sigma2_mse,
        "mean.theta2": summary.theta2_mean,
        "sd.theta2": summary.theta2_sd,
        "mse.theta2": summary.theta2_mse,
        "recovery_rate": summary.recovery_rate,
        "pooling": "beta_inactive stats average per-coordinate statistics over coordinates outside the true support",
        "pe_definition": "conditional in-sample mean squared residual after subtracting predicted random effects",
    }


def format_summary_table(summary):
    """Fixed-width table with the study's column layout (rows Mean/SD/MSE)."""
    s = summary.scenario.s
    headers = ["", "|S|", "TP", "PE"] + [f"b{j + 1}" for j in range(s)] + ["bN", "sigma2", "theta2"]
    mean_row = (
        ["Mean", f"{summary.active_size_mean:.2f}", f"{summary.tp_mean:.2f}", f"{summary.pe_mean:.2f}"]
        + [f"{v:.2f}" for v in summary.beta_active_mean]
        + [f"{summary.beta_inactive_mean:.2f}", f"{summary.sigma2_mean:.2f}", f"{summary.theta2_mean:.2f}"]
    )
    sd_row = (
        ["SD", f"{summary.active_size_sd:.2f}", f"{summary.tp_sd:.2f}", f"{summary.pe_sd:.2f}"]
        + [f"{v:.2f}" for v in summary.beta_active_sd]
        + [f"{summary.beta_inactive_sd:.2f}", f"{summary.sigma2_sd:.2f}", f"{summary.theta2_sd:.2f}"]
    )
    mse_row = (
        ["MSE", "", "", ""]
        + [f"{v:.4f}" for v in summary.beta_active_mse]
        + [f"{summary.beta_inactive_mse:.4f}", f"{summary.sigma2_mse:.4f}", f"{summary.theta2_mse:.4f}"]
    )
    widths = [max(len(row[i]) for row in (headers, mean_row, sd_row, mse_row)) for i in range(len(headers))]
    lines = []
    for row in (headers, mean_row, sd_row, mse_row):
        lines.append("  ".join(cell.rjust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines)

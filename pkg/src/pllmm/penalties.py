"""Penalty families: values, derivatives, LQA weights, scalar thresholding.

Supported families and their values on t = |coefficient| >= 0:

* l1:    lam * t
* l2:    lam * t^2
* lq:    lam * t^q for an exponent q in (0, 2)
* hard:  lam^2 - (t - lam)^2 for t < lam, else lam^2
* scad:  lam-slope up to lam, quadratic blend to the flat level
         (a + 1) * lam^2 / 2 reached at a*lam (a > 2, default 3.7)

l2 and lq with q > 1 shrink but never produce exact zeros; they are
included for completeness.
"""

import enum
from dataclasses import dataclass

from . import _kernels
from .exceptions import BelowThresholdError, NumericalDomainError

#: coefficients with magnitude below this are treated as exact zeros by LQA
HARD_ZERO = 1e-8

SCAD_DEFAULT_A = 3.7


class PenaltyFamily(enum.Enum):
    L1 = "l1"
    L2 = "l2"
    LQ = "lq"
    HARD = "hard"
    SCAD = "scad"


_FAMILY_CODES = {
    PenaltyFamily.L1: _kernels.FAMILY_L1,
    PenaltyFamily.L2: _kernels.FAMILY_L2,
    PenaltyFamily.LQ: _kernels.FAMILY_LQ,
    PenaltyFamily.HARD: _kernels.FAMILY_HARD,
    PenaltyFamily.SCAD: _kernels.FAMILY_SCAD,
}


@dataclass(frozen=True)
class PenaltySpec:
    """A penalty family with its tuning parameters."""

    family: PenaltyFamily
    lam: float
    scad_a: float = SCAD_DEFAULT_A
    lq_exponent: float = 1.0

    def __post_init__(self):
        if not isinstance(self.family, PenaltyFamily):
            object.__setattr__(self, "family", PenaltyFamily(self.family))
        lam = float(self.lam)
        if not lam >= 0.0:
            raise NumericalDomainError(f"lambda must be >= 0, got {lam}")
        object.__setattr__(self, "lam", lam)
        if self.family is PenaltyFamily.SCAD and not self.scad_a > 2.0:
            raise NumericalDomainError(f"SCAD requires a > 2, got {self.scad_a}")
        if self.family is PenaltyFamily.LQ and not 0.0 < self.lq_exponent < 2.0:
            raise NumericalDomainError(f"Lq requires an exponent in (0, 2), got {self.lq_exponent}")

    @property
    def code(self):
        return _FAMILY_CODES[self.family]

    def with_lambda(self, lam):
        return PenaltySpec(family=self.family, lam=lam, scad_a=self.scad_a, lq_exponent=self.lq_exponent)

    def kernel_args(self):
        """(family_code, lam, scad_a, lq_exponent) as plain floats for the kernels."""
        return self.code, self.lam, float(self.scad_a), float(self.lq_exponent)


def penalty_value(spec, t):
    """Penalty value at t >= 0."""
    t = float(t)
    if t < 0.0:
        raise NumericalDomainError(f"penalty_value requires t >= 0, got {t}")
    fam, lam, a, q = spec.kernel_args()
    return float(_kernels.penalty_value(fam, lam, a, q, t))


def penalty_derivative(spec, t):
    """Derivative of the penalty at t > 0 (the right derivative at kinks)."""
    t = float(t)
    if t <= 0.0:
        raise NumericalDomainError(f"penalty_derivative requires t > 0, got {t}")
    fam, lam, a, q = spec.kernel_args()
    return float(_kernels.penalty_deriv(fam, lam, a, q, t))


def penalty_derivative_at_zero(spec):
    """Right derivative at 0+, the zero-retention threshold of the family."""
    fam, lam, a, q = spec.kernel_args()
    if spec.family is PenaltyFamily.L1 or spec.family is PenaltyFamily.SCAD:
        return lam
    if spec.family is PenaltyFamily.HARD:
        return 2.0 * lam
    if spec.family is PenaltyFamily.L2:
        return 0.0
    # lq: infinite slope at zero for q < 1, zero slope for q > 1
    if q < 1.0:
        return float("inf")
    if q > 1.0:
        return 0.0
    return lam


def lqa_weight(spec, beta_j):
    """Local quadratic approximation weight p'(|b|)/|b| at a nonzero coefficient.

    Raises BelowThresholdError when |beta_j| < HARD_ZERO; the caller must
    clamp such a coefficient to exactly zero instead of weighting it.
    """
    t = abs(float(beta_j))
    if t < HARD_ZERO:
        raise BelowThresholdError(
            f"|beta_j| = {t} is below the hard-zero threshold {HARD_ZERO}; clamp the coefficient to 0"
        )
    fam, lam, a, q = spec.kernel_args()
    return float(_kernels.penalty_deriv(fam, lam, a, q, t)) / t


def scalar_threshold(spec, z, h):
    """Exact global minimizer over g of 0.5*h*(z - g)^2 + penalty(|g|).

    Continuous in z for l1/l2/lq/scad; for the hard family the minimizer
    jumps between 0 and the plateau branch when the two candidate values
    tie, so it is discontinuous in z at that boundary.
    """
    h = float(h)
    if not h > 0.0:
        raise NumericalDomainError(f"scalar_threshold requires h > 0, got {h}")
    z = float(z)
    if not (z == z and abs(z) != float("inf")):
        raise NumericalDomainError(f"scalar_threshold requires finite z, got {z}")
    fam, lam, a, q = spec.kernel_args()
    return float(_kernels.threshold(fam, lam, a, q, z, h))

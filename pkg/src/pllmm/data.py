"""Grouped mixed-model data containers and parameter vectors.

All containers are immutable after construction (arrays are copied and
marked read-only) and therefore safe to share across threads.
"""

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .exceptions import NumericalDomainError

SIGMA2_FLOOR = 1e-10


def _frozen_array(values, dtype=float, ndim=None, name="array"):
    arr = np.array(values, dtype=dtype, order="C")
    if ndim is not None and arr.ndim != ndim:
        raise NumericalDomainError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericalDomainError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GroupBlock:
    """Response and design matrices for a single group.

    Attributes:
        y: response vector, shape (n_i,).
        X: fixed-effect design, shape (n_i, p).
        Z: random-effect design, shape (n_i, q).
    """

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", _frozen_array(self.y, ndim=1, name="y"))
        object.__setattr__(self, "X", _frozen_array(self.X, ndim=2, name="X"))
        object.__setattr__(self, "Z", _frozen_array(self.Z, ndim=2, name="Z"))
        if self.y.shape[0] < 1:
            raise NumericalDomainError("a group must contain at least one observation")
        if self.X.shape[0] != self.y.shape[0] or self.Z.shape[0] != self.y.shape[0]:
            raise NumericalDomainError(
                f"inconsistent row counts in group: y has {self.y.shape[0]}, "
                f"X has {self.X.shape[0]}, Z has {self.Z.shape[0]}"
            )

    @property
    def n_obs(self):
        return self.y.shape[0]


@dataclass(frozen=True)
class MixedModelData:
    """A grouped data set: blocks, penalization bookkeeping, group labels."""

    groups: tuple
    unpenalized: frozenset = frozenset()
    group_labels: tuple = None

    def __post_init__(self):
        groups = tuple(self.groups)
        if not groups:
            raise NumericalDomainError("at least one group is required")
        object.__setattr__(self, "groups", groups)
        p = groups[0].X.shape[1]
        q = groups[0].Z.shape[1]
        for g in groups:
            if g.X.shape[1] != p or g.Z.shape[1] != q:
                raise NumericalDomainError("all groups must share the same column dimensions")
        unpen = frozenset(int(j) for j in self.unpenalized)
        if any(j < 0 or j >= p for j in unpen):
            raise NumericalDomainError(f"unpenalized indices must lie in [0, {p}), got {sorted(unpen)}")
        object.__setattr__(self, "unpenalized", unpen)
        if self.group_labels is None:
            labels = tuple(str(i) for i in range(len(groups)))
        else:
            labels = tuple(str(l) for l in self.group_labels)
        if len(labels) != len(groups):
            raise NumericalDomainError("group_labels must match the number of groups")
        if len(set(labels)) != len(labels):
            raise NumericalDomainError("group labels must be unique")
        object.__setattr__(self, "group_labels", labels)

    @property
    def n_groups(self):
        return len(self.groups)

    @property
    def n(self):
        return sum(g.n_obs for g in self.groups)

    @property
    def p(self):
        return self.groups[0].X.shape[1]

    @property
    def q(self):
        return self.groups[0].Z.shape[1]

    @cached_property
    def stacked(self):
        """Stacked arrays (y, X, XT, Z, starts) shared by the kernels."""
        y = np.concatenate([g.y for g in self.groups])
        X = np.ascontiguousarray(np.vstack([g.X for g in self.groups]))
        XT = np.ascontiguousarray(X.T)
        Z = np.ascontiguousarray(np.vstack([g.Z for g in self.groups]))
        sizes = [g.n_obs for g in self.groups]
        starts = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        for arr in (y, X, XT, Z, starts):
            arr.setflags(write=False)
        return y, X, XT, Z, starts

    @cached_property
    def penalized_mask(self):
        mask = np.ones(self.p, dtype=np.uint8)
        for j in self.unpenalized:
            mask[j] = 0
        mask.setflags(write=False)
        return mask

    @classmethod
    def from_arrays(cls, y, X, Z, group_ids, unpenalized=(), group_labels=None):
        """Build grouped data from stacked arrays and per-row group ids.

        Rows are gathered per distinct group id in order of first appearance;
        labels default to the stringified ids.
        """
        y = np.asarray(y, dtype=float)
        X = np.asarray(X, dtype=float)
        Z = np.asarray(Z, dtype=float)
        ids = np.asarray(group_ids)
        order = {}
        for gid in ids:
            key = gid.item() if hasattr(gid, "item") else gid
            if key not in order:
                order[key] = len(order)
        blocks = []
        labels = []
        for key in order:
            rows = np.flatnonzero(ids == key)
            blocks.append(GroupBlock(y=y[rows], X=X[rows], Z=Z[rows]))
            labels.append(str(key))
        if group_labels is not None:
            labels = list(group_labels)
        return cls(groups=tuple(blocks), unpenalized=frozenset(unpenalized), group_labels=tuple(labels))


class VarianceStructure(enum.Enum):
    ISOTROPIC = "isotropic"
    DIAGONAL = "diagonal"


@dataclass(frozen=True)
class VarianceSpec:
    """Structure of the random-effect covariance.

    Isotropic means theta2 * I_q (one parameter); Diagonal means
    Diag(theta2_1, ..., theta2_q) (q parameters).
    """

    structure: VarianceStructure
    q: int

    def __post_init__(self):
        if not isinstance(self.structure, VarianceStructure):
            object.__setattr__(self, "structure", VarianceStructure(self.structure))
        if self.q < 1:
            raise NumericalDomainError("random-effect dimension must be >= 1")

    @property
    def q_star(self):
        return 1 if self.structure is VarianceStructure.ISOTROPIC else self.q

    def psi_diag(self, theta2):
        """Diagonal of Psi as a length-q vector."""
        theta2 = np.asarray(theta2, dtype=float)
        if self.structure is VarianceStructure.ISOTROPIC:
            return np.full(self.q, float(theta2[0]))
        return theta2.copy()


@dataclass(frozen=True)
class ModelParameters:
    """Fixed-effect coefficients plus variance components on the variance scale.

    sigma2 must exceed the hard floor 1e-10; theta2 entries may legally sit
    at the zero boundary.
    """

    beta: np.ndarray
    sigma2: float
    theta2: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        object.__setattr__(self, "beta", _frozen_array(self.beta, ndim=1, name="beta"))
        object.__setattr__(self, "theta2", _frozen_array(self.theta2, ndim=1, name="theta2"))
        sigma2 = float(self.sigma2)
        if not np.isfinite(sigma2) or sigma2 < SIGMA2_FLOOR:
            raise NumericalDomainError(f"sigma2 must be finite and >= {SIGMA2_FLOOR}, got {sigma2}")
        if np.any(self.theta2 < 0):
            raise NumericalDomainError("theta2 entries must be nonnegative")
        object.__setattr__(self, "sigma2", sigma2)

    @property
    def eta(self):
        """Variance components stacked as (sigma2, theta2...)."""
        return np.concatenate([[self.sigma2], self.theta2])

    def with_beta(self, beta):
        return ModelParameters(beta=beta, sigma2=self.sigma2, theta2=self.theta2)

    def with_eta(self, sigma2, theta2):
        return ModelParameters(beta=self.beta, sigma2=sigma2, theta2=theta2)

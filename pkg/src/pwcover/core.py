"""Domain types, cost matrices and marginals shared by solvers and selectors."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .errors import InvalidInputError

#: Absolute tolerance used for mass-equality checks.
MASS_TOL = 1e-9


class Role(str, enum.Enum):
    APP = "app"
    DEV = "dev"
    CAND = "cand"


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """An ordered set of ``d``-dimensional feature vectors.

    Point ``i`` has the stable id ``i``; ids are therefore always unique and
    contiguous.
    """

    points: np.ndarray
    role: Role = Role.APP

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1) if pts.size else pts.reshape(0, 1)
        if pts.ndim != 2:
            raise InvalidInputError(f"points must be a 2-D array, got shape {pts.shape}")
        if pts.shape[1] < 1:
            raise InvalidInputError("points must have dimension d >= 1")
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("points contain NaN or Inf")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "role", Role(self.role))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def ids(self) -> np.ndarray:
        return np.arange(len(self))

    def subset(self, indices: Iterable[int], role: Role | None = None) -> "Dataset":
        idx = np.asarray(list(indices), dtype=np.intp)
        return Dataset(self.points[idx].reshape(len(idx), self.dim), role or self.role)

    def concat(self, other: "Dataset", role: Role | None = None) -> "Dataset":
        if other.dim != self.dim:
            raise InvalidInputError(f"dimension mismatch: {self.dim} vs {other.dim}")
        return Dataset(np.vstack([self.points, other.points]), role or self.role)


def as_dataset(data, role: Role = Role.APP) -> Dataset:
    return data if isinstance(data, Dataset) else Dataset(data, role)


@dataclass(frozen=True)
class CostMatrix:
    """Pairwise transport costs between a source and a target point set."""

    entries: np.ndarray

    def __post_init__(self):
        C = np.array(self.entries, dtype=np.float64, copy=True)
        if C.ndim != 2:
            raise InvalidInputError(f"cost matrix must be 2-D, got shape {C.shape}")
        if not np.all(np.isfinite(C)):
            raise InvalidInputError("cost matrix contains NaN or Inf")
        if np.any(C < 0):
            raise InvalidInputError("cost matrix has negative entries")
        object.__setattr__(self, "entries", _frozen(C))

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


def as_cost_array(cost) -> np.ndarray:
    """Return the cost entries as a float64 array, validating finiteness."""
    if isinstance(cost, CostMatrix):
        return cost.entries
    C = np.asarray(cost, dtype=np.float64)
    if C.ndim != 2:
        raise InvalidInputError(f"cost matrix must be 2-D, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise InvalidInputError("cost matrix contains NaN or Inf")
    return C


def _sq_euclidean(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    # Expansion ||x||^2 + ||y||^2 - 2<x, y> loses precision for nearby points,
    # so the difference form is used; inputs are desk-scale.
    diff = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


#: Pluggable cost callbacks; only squared Euclidean ships.
COST_FUNCTIONS: dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "sqeuclidean": _sq_euclidean,
}


def squared_euclidean_cost(source, target, metric: str = "sqeuclidean") -> CostMatrix:
    """Cost matrix ``C[i, j] = ||source[i] - target[j]||^2``.

    Parameters
    ----------
    source, target : Dataset or array-like of shape (n, d) / (m, d)
    metric : str
        Key into :data:`COST_FUNCTIONS`.

    Raises
    ------
    InvalidInputError
        If the two point sets have different dimensions.
    """
    src = as_dataset(source)
    tgt = as_dataset(target)
    if src.dim != tgt.dim:
        raise InvalidInputError(f"dimension mismatch: source d={src.dim}, target d={tgt.dim}")
    try:
        fn = COST_FUNCTIONS[metric]
    except KeyError:
        raise InvalidInputError(f"unknown cost metric {metric!r}") from None
    return CostMatrix(fn(src.points, tgt.points))


@dataclass(frozen=True)
class MarginalSpec:
    """Source mass ``a`` (sums to one) and target capacities ``b``."""

    a: np.ndarray
    b: np.ndarray
    b_floor: float = 0.0

    def __post_init__(self):
        a = np.array(self.a, dtype=np.float64, copy=True).ravel()
        b = np.array(self.b, dtype=np.float64, copy=True).ravel()
        if a.size == 0 or b.size == 0:
            raise InvalidInputError("marginals must be non-empty")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise InvalidInputError("marginals contain NaN or Inf")
        if np.any(a < 0) or np.any(b < 0):
            raise InvalidInputError("marginals must be nonnegative")
        if abs(a.sum() - 1.0) > 1e-12 * max(1, a.size):
            raise InvalidInputError(f"source mass must sum to 1, got {a.sum()!r}")
        object.__setattr__(self, "a", _frozen(a))
        object.__setattr__(self, "b", _frozen(b))

    @property
    def n(self) -> int:
        return self.a.size

    @property
    def m(self) -> int:
        return self.b.size

    def with_b(self, b) -> "MarginalSpec":
        return MarginalSpec(self.a, b, self.b_floor)


def default_b_floor(n_dev: int) -> float:
    return 1e-6 / n_dev


def build_marginals(n_app: int, n_dev: int, n_cand: int, S: Iterable[int] = (),
                    b_floor: float | None = None) -> MarginalSpec:
    """Uniform source mass and the selection-dependent target capacities.

    Target columns are ordered candidates first, then development points.
    Selected candidates and development points get ``1 / n_dev``; unselected
    candidates get ``b_floor`` so that their dual values stay defined.
    """
    if n_app <= 0 or n_dev <= 0:
        raise InvalidInputError("n_app and n_dev must be positive")
    if n_cand < 0:
        raise InvalidInputError("n_cand must be nonnegative")
    if b_floor is None:
        b_floor = default_b_floor(n_dev)
    if not b_floor > 0:
        raise InvalidInputError("b_floor must be positive")
    sel = np.zeros(n_cand, dtype=bool)
    for j in S:
        if not 0 <= j < n_cand:
            raise InvalidInputError(f"selected index {j} outside 0..{n_cand - 1}")
        sel[j] = True
    a = np.full(n_app, 1.0 / n_app)
    b = np.concatenate([np.where(sel, 1.0 / n_dev, b_floor), np.full(n_dev, 1.0 / n_dev)])
    return MarginalSpec(a, b, float(b_floor))


@dataclass(frozen=True)
class TransportPlan:
    plan: np.ndarray

    def row_sums(self) -> np.ndarray:
        return self.plan.sum(axis=1)

    def col_sums(self) -> np.ndarray:
        return self.plan.sum(axis=0)


@dataclass(frozen=True)
class DualSolution:
    f: np.ndarray
    g: np.ndarray
    ranging: dict[int, tuple[float, float]] = field(default_factory=dict)

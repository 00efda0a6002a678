"""Uniform time grids, per-component fractional orders and sampled vector paths.

These are the data types every operator and solver in the package works on.
A path stores one value per grid node and a per-node flag; flagged nodes hold
neighbour-copied filler where the underlying function is singular (typically
an interval endpoint) and must not be read by consumers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError


class Side(enum.Enum):
    """History direction of a fractional operator."""

    LEFT = "left"
    RIGHT = "right"


class OperatorFamily(enum.Enum):
    """Discrete operator families available on a :class:`SampledPath`."""

    RL_INTEGRAL = "riemann_liouville_integral"
    RL_DERIVATIVE = "riemann_liouville_derivative"
    CAPUTO_DERIVATIVE = "caputo_derivative"


@dataclass(frozen=True)
class OperatorKind:
    side: Side
    family: OperatorFamily


@dataclass(frozen=True)
class MultiOrder:
    """A vector of fractional orders, one per state component, each in (0, 1)."""

    orders: tuple[float, ...]

    def __post_init__(self):
        if len(self.orders) < 1:
            raise DomainError("at least one order is required")
        for a in self.orders:
            if not (0.0 < a < 1.0) or not np.isfinite(a):
                raise DomainError(f"orders must lie in (0, 1), got {a}")

    def __len__(self) -> int:
        return len(self.orders)

    @property
    def min_order(self) -> float:
        return min(self.orders)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.orders, dtype=float)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = a + k*h, k = 0..n_steps, with h = (b-a)/n_steps."""

    a: float
    b: float
    n_steps: int

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)) or self.b <= self.a:
            raise DomainError(f"need finite b > a, got [{self.a}, {self.b}]")
        if self.n_steps < 2:
            raise DomainError("n_steps must be at least 2")

    @property
    def h(self) -> float:
        return (self.b - self.a) / self.n_steps

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    def nodes(self) -> np.ndarray:
        return self.a + self.h * np.arange(self.n_nodes)

    def index_of(self, t: float) -> int:
        """Nearest node index for a time in [a, b]."""
        k = int(round((t - self.a) / self.h))
        return min(max(k, 0), self.n_steps)


@dataclass
class SampledPath:
    """Values of a vector function on a :class:`TimeGrid`.

    ``values`` has shape (dim, n_nodes).  ``flags[k]`` marks node k as a
    neighbour-copied filler at a singularity of the underlying function.
    """

    grid: TimeGrid
    values: np.ndarray
    flags: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[1] != self.grid.n_nodes:
            raise DimensionError(
                f"expected {self.grid.n_nodes} columns, got {self.values.shape[1]}"
            )
        if not np.all(np.isfinite(self.values)):
            raise DimensionError("path values must be finite")
        if self.flags is None:
            self.flags = np.zeros(self.grid.n_nodes, dtype=bool)
        else:
            self.flags = np.asarray(self.flags, dtype=bool).copy()
            if self.flags.shape != (self.grid.n_nodes,):
                raise DimensionError("flags must have one entry per node")

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def component(self, i: int) -> np.ndarray:
        return self.values[i]

    def unflagged(self) -> np.ndarray:
        """Boolean mask of trustworthy nodes."""
        return ~self.flags

    def copy(self) -> "SampledPath":
        return SampledPath(self.grid, self.values.copy(), self.flags.copy())

    @staticmethod
    def from_function(grid: TimeGrid, fn, dim: int | None = None) -> "SampledPath":
        """Sample ``fn(t) -> scalar or vector`` on the grid (no flags)."""
        t = grid.nodes()
        vals = np.asarray(fn(t), dtype=float)
        if vals.ndim == 1:
            vals = vals[None, :]
        if dim is not None and vals.shape[0] != dim:
            raise DimensionError(f"expected dim {dim}, got {vals.shape[0]}")
        return SampledPath(grid, vals)

    @staticmethod
    def zeros(grid: TimeGrid, dim: int) -> "SampledPath":
        return SampledPath(grid, np.zeros((dim, grid.n_nodes)))


def require_same_grid(*paths: SampledPath) -> TimeGrid:
    g = paths[0].grid
    for p in paths[1:]:
        if p.grid != g:
            raise DimensionError("paths must share one grid")
    return g

"""Forward, variational and adjoint solvers for multi-order Caputo dynamics.

The forward initial-value solver is a fractional Adams predictor-corrector
(product-rectangle predictor, product-trapezoid corrector, one correction per
step, per-component order).  The variational and adjoint problems are solved
in Volterra form with their singular kernel terms kept analytic, so terminal
and jump data enter without discretization error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConvergenceError, DimensionError, DomainError, SolverError
from .fracops import _cached, _pt_kernels, frac_integral
from .grids import MultiOrder, SampledPath, Side, TimeGrid, require_same_grid
from .specfun import gamma_fn

FIXPOINT_TOL = 1e-10
FIXPOINT_MAX_ITERS = 200
_OSCILLATION_DAMPING = 0.8


class VectorField:
    """Dynamics f(t, x, u) together with its state Jacobian.

    ``eval`` maps (t, x, u) to an n-vector; ``jacobian_x`` maps (t, x, u) to
    the (n, n) matrix of partials d f_i / d x_j.  When no Jacobian is given,
    central finite differences with step 1e-6*(1+|x|) are used.
    """

    def __init__(
        self,
        eval: Callable[[float, np.ndarray, np.ndarray], np.ndarray],
        jacobian_x: Callable[[float, np.ndarray, np.ndarray], np.ndarray] | None = None,
        dim: int | None = None,
    ):
        self._eval = eval
        self._jac = jacobian_x
        self.dim = dim

    def eval(self, t: float, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        out = np.asarray(self._eval(t, x, u), dtype=float)
        if self.dim is not None and out.shape[0] != self.dim:
            raise DimensionError(f"field returned dim {out.shape[0]}, expected {self.dim}")
        return out

    def jacobian_x(self, t: float, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        if self._jac is not None:
            return np.asarray(self._jac(t, x, u), dtype=float)
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        jac = np.empty((n, n))
        for j in range(n):
            step = 1e-6 * (1.0 + abs(x[j]))
            xp = x.copy()
            xm = x.copy()
            xp[j] += step
            xm[j] -= step
            jac[:, j] = (self.eval(t, xp, u) - self.eval(t, xm, u)) / (2.0 * step)
        return jac

    def jacobian_along(
        self, t: np.ndarray, x: np.ndarray, u: np.ndarray
    ) -> np.ndarray:
        """Jacobian stack of shape (n, n, len(t)) along a sampled trajectory."""
        n = x.shape[0]
        out = np.empty((n, n, t.shape[0]))
        for k in range(t.shape[0]):
            out[:, :, k] = self.jacobian_x(float(t[k]), x[:, k], u[:, k])
        return out


@dataclass(frozen=True)
class TerminalData:
    """Prescribed value of the weighted terminal integral of the adjoint."""

    weighted_terminal: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "weighted_terminal", np.asarray(self.weighted_terminal, dtype=float)
        )
        if not np.all(np.isfinite(self.weighted_terminal)):
            raise DomainError("terminal data must be finite")


@dataclass(frozen=True)
class VariationalInit:
    """Weighted initial value of the variational trajectory at time tau."""

    tau: float
    jump: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "jump", np.asarray(self.jump, dtype=float))
        if not np.all(np.isfinite(self.jump)):
            raise DomainError("jump must be finite")


def _adams_predictor_kernel(alpha: float, n_steps: int) -> np.ndarray:
    """Product-rectangle kernel kb[k] = k^a - (k-1)^a, k = 1..N (kb[0] unused)."""

    def build():
        k = np.arange(n_steps + 1, dtype=float)
        out = np.zeros(n_steps + 1)
        out[1:] = k[1:] ** alpha - k[:-1] ** alpha
        return out

    return _cached(alpha, n_steps, "adams_predictor", build)


def solve_caputo_ivp(
    field: VectorField,
    control: SampledPath,
    x0: np.ndarray,
    orders: MultiOrder,
    grid: TimeGrid,
) -> SampledPath:
    """Solve cD^(a_i) x_i = f_i(t, x, u) with x(a) = x0 on the grid.

    Uses the Volterra form x_i = x0_i + I^(a_i)[f_i] stepped by the fractional
    Adams predictor-corrector with one correction per step.
    """
    if control.grid != grid:
        raise DimensionError("control must be sampled on the solver grid")
    x0 = np.asarray(x0, dtype=float)
    n = len(orders)
    if x0.shape != (n,):
        raise DimensionError(f"x0 must have dim {n}")
    N = grid.n_steps
    h = grid.h
    t = grid.nodes()
    alphas = orders.as_array()

    pred_k = [_adams_predictor_kernel(a, N) for a in alphas]
    corr_k = [_pt_kernels(a, N) for a in alphas]
    pred_pref = np.array([h**a / gamma_fn(a + 1.0) for a in alphas])
    corr_pref = np.array([h**a / gamma_fn(a + 2.0) for a in alphas])

    x = np.empty((n, N + 1))
    fh = np.empty((n, N + 1))
    x[:, 0] = x0
    fh[:, 0] = field.eval(t[0], x0, control.values[:, 0])
    if not np.all(np.isfinite(fh[:, 0])):
        raise SolverError("non-finite dynamics at step 0")

    for m in range(1, N + 1):
        u_m = control.values[:, m]
        xp = np.empty(n)
        for i in range(n):
            kb = pred_k[i]
            hist = np.dot(fh[i, :m], kb[m:0:-1])
            xp[i] = x0[i] + pred_pref[i] * hist
        fp = field.eval(t[m], xp, u_m)
        if not np.all(np.isfinite(fp)):
            raise SolverError(f"non-finite dynamics at step {m}")
        for i in range(n):
            c, a0 = corr_k[i]
            inner = np.dot(fh[i, 1:m], c[m - 1:0:-1]) if m >= 2 else 0.0
            x[i, m] = x0[i] + corr_pref[i] * (a0[m] * fh[i, 0] + inner + fp[i])
        fh[:, m] = field.eval(t[m], x[:, m], u_m)
        if not np.all(np.isfinite(fh[:, m])):
            raise SolverError(f"non-finite dynamics at step {m}")
    return SampledPath(grid, x)


def _fixpoint(update, start: np.ndarray, mask: np.ndarray, what: str) -> np.ndarray:
    """Damped Picard iteration; tolerance is sup-norm 1e-10 on the masked nodes
    (relative to the iterate's scale once that exceeds one)."""
    cur = start
    prev_delta = None
    for _ in range(FIXPOINT_MAX_ITERS):
        new = update(cur)
        delta = new - cur
        scale = max(1.0, float(np.max(np.abs(new[:, mask]))) if mask.any() else 1.0)
        if prev_delta is not None and float(np.sum(delta * prev_delta)) < 0.0:
            new = cur + _OSCILLATION_DAMPING * delta
            delta = new - cur
        step = float(np.max(np.abs(delta[:, mask]))) if mask.any() else 0.0
        prev_delta = delta
        cur = new
        if step <= FIXPOINT_TOL * scale:
            return cur
    raise ConvergenceError(f"{what} fixpoint did not converge in {FIXPOINT_MAX_ITERS} iterations")


def solve_variational(
    field: VectorField,
    x_star: SampledPath,
    u_star: SampledPath,
    init: VariationalInit,
    orders: MultiOrder,
    grid: TimeGrid,
) -> SampledPath:
    """Linearized trajectory response to a needle jump at time tau.

    Solves eta = jump*(t-tau)^(abar-1)/Gamma(abar) + I^abar[(df/dx) eta] on
    [tau, b] with abar = min over the component orders, zeros before tau.  The
    node at tau is a flagged filler (the kernel blows up there).
    """
    require_same_grid(x_star, u_star)
    if x_star.grid != grid:
        raise DimensionError("x_star must live on the solver grid")
    n = len(orders)
    if init.jump.shape != (n,):
        raise DimensionError(f"jump must have dim {n}")
    if not (grid.a <= init.tau < grid.b):
        raise DomainError(f"tau must lie in [{grid.a}, {grid.b})")
    k0 = grid.index_of(init.tau)
    if k0 > grid.n_steps - 2:
        raise DomainError("tau must be at least two steps before b")

    abar = orders.min_order
    sub = TimeGrid(grid.a + k0 * grid.h, grid.b, grid.n_steps - k0)
    t_sub = sub.nodes()
    m_nodes = sub.n_nodes

    jac = field.jacobian_along(
        t_sub, x_star.values[:, k0:], u_star.values[:, k0:]
    )

    kernel = np.zeros((n, m_nodes))
    offsets = t_sub[1:] - sub.a
    kernel[:, 1:] = np.outer(init.jump, offsets ** (abar - 1.0) / gamma_fn(abar))
    kernel[:, 0] = kernel[:, 1]
    singular = bool(np.any(init.jump != 0.0))

    flags = np.zeros(m_nodes, dtype=bool)
    flags[0] = singular
    sub_orders = MultiOrder((abar,) * n)

    def update(eta: np.ndarray) -> np.ndarray:
        g = np.einsum("ijk,jk->ik", jac, eta)
        integ = frac_integral(SampledPath(sub, g, flags), sub_orders, Side.LEFT)
        return kernel + integ.values

    mask = ~flags
    eta_sub = _fixpoint(update, kernel.copy(), mask, "variational")
    if singular:
        eta_sub[:, 0] = eta_sub[:, 1]

    full = np.zeros((n, grid.n_nodes))
    full[:, k0:] = eta_sub
    full_flags = np.zeros(grid.n_nodes, dtype=bool)
    full_flags[k0] = singular
    return SampledPath(grid, full, full_flags)


def solve_adjoint(
    field: VectorField,
    lagrangian_grad_x: SampledPath,
    x_star: SampledPath,
    u_star: SampledPath,
    terminal: TerminalData,
    orders: MultiOrder,
    grid: TimeGrid,
) -> SampledPath:
    """Backward right-sided adjoint with fractional transversality data.

    Solves lambda_i = terminal_i*(b-t)^(a_i-1)/Gamma(a_i)
                      + I^(a_i)_right[dL/dx_i + sum_j lambda_j df_j/dx_i]
    to a fixed point.  The kernel term carries the transversality condition
    exactly; the node at b is a flagged filler whenever it is singular.
    """
    require_same_grid(lagrangian_grad_x, x_star, u_star)
    if x_star.grid != grid:
        raise DimensionError("paths must live on the solver grid")
    n = len(orders)
    w = terminal.weighted_terminal
    if w.shape != (n,):
        raise DimensionError(f"terminal data must have dim {n}")
    t = grid.nodes()
    alphas = orders.as_array()

    jac = field.jacobian_along(t, x_star.values, u_star.values)

    kernel = np.zeros((n, grid.n_nodes))
    for i in range(n):
        if w[i] != 0.0:
            kernel[i, :-1] = (
                w[i] * (grid.b - t[:-1]) ** (alphas[i] - 1.0) / gamma_fn(alphas[i])
            )
            kernel[i, -1] = kernel[i, -2]
    singular = bool(np.any(w != 0.0))

    g_flags = np.zeros(grid.n_nodes, dtype=bool)
    g_flags[-1] = singular
    out_flag_last = singular

    def update(lam: np.ndarray) -> np.ndarray:
        g = lagrangian_grad_x.values + np.einsum("jk,jik->ik", lam, jac)
        new = kernel.copy()
        flag_last = singular
        for i in range(n):
            integ = frac_integral(
                SampledPath(grid, g[i : i + 1], g_flags),
                MultiOrder((alphas[i],)),
                Side.RIGHT,
            )
            new[i] += integ.values[0]
            flag_last = flag_last or bool(integ.flags[-1])
        nonlocal out_flag_last
        out_flag_last = flag_last
        if flag_last:
            new[:, -1] = new[:, -2]
        return new

    flags = np.zeros(grid.n_nodes, dtype=bool)
    flags[-1] = singular
    mask = ~flags
    lam = _fixpoint(update, kernel.copy(), mask, "adjoint")
    out_flags = np.zeros(grid.n_nodes, dtype=bool)
    out_flags[-1] = out_flag_last
    return SampledPath(grid, lam, out_flags)

"""Hamiltonian machinery and the forward-backward sweep.

The sweep alternates state simulation, adjoint simulation and pointwise
Hamiltonian maximization over the control box, with a relaxed control update.
A candidate maximizer only replaces the current control value where it
strictly improves the Hamiltonian, which keeps control-independent problems
converged in a single iteration.

Also here: the maximality-defect evaluator, needle-variation experiments
(continuity bound, objective quotient and variational gap), and Monte Carlo
estimation of the problem's Lipschitz/bound constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import DimensionError, DomainError
from .fde_solvers import TerminalData, VariationalInit, solve_adjoint, solve_caputo_ivp, solve_variational
from .grids import MultiOrder, SampledPath, TimeGrid
from .problems import ControlSet, ProblemSpec
from .specfun import gamma_fn, mittag_leffler

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_SWITCH_FRACTION = 0.05  # control jump (relative to box width) that marks a switch node


@dataclass(frozen=True)
class SweepConfig:
    """Controls of the forward-backward sweep."""

    relaxation: float = 0.5
    control_tol: float = 1e-6
    max_iters: int = 500
    hamiltonian_grid_points: int = 64
    refine_iters: int = 40
    initial_control: np.ndarray | None = None  # defaults to the box midpoint

    def __post_init__(self):
        if not (0.0 < self.relaxation <= 1.0):
            raise DomainError("relaxation must lie in (0, 1]")
        if self.control_tol <= 0 or self.max_iters <= 0:
            raise DomainError("control_tol and max_iters must be positive")
        if self.hamiltonian_grid_points < 2 or self.refine_iters < 1:
            raise DomainError("need at least 2 grid points and 1 refinement step")


@dataclass
class PmpSolution:
    """A converged (or best-effort) extremal triple with diagnostics."""

    x_star: SampledPath
    u_star: SampledPath
    lam: SampledPath
    objective: float
    max_residual: float
    sweep_iterations: int
    converged: bool

    def __post_init__(self):
        if self.max_residual < 0:
            raise DomainError("max_residual must be non-negative")


@dataclass(frozen=True)
class NeedleVariation:
    """Constant control v on the grid-aligned window [t_tau, t_tau + theta)."""

    tau_index: int
    v: np.ndarray
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        if self.theta <= 0:
            raise DomainError("theta must be positive")


@dataclass(frozen=True)
class ConstantsEstimate:
    """Sampled Lipschitz constant and bounds of the problem data."""

    lipschitz_K: float
    bound_M: float
    deriv_bound_N: float


@dataclass(frozen=True)
class NeedleOutcome:
    sup_dist: float
    delta_j: float
    eta_gap: float


# --------------------------------------------------------------------------
# Hamiltonian and its maximization
# --------------------------------------------------------------------------


def hamiltonian(problem: ProblemSpec, t, x, u, lam):
    """H(t, x, u, lambda) = L(t, x, u) + lambda . f(t, x, u)."""
    L = problem.lagrangian_eval(t, x, u)
    f = problem.f_eval(t, x, u)
    lam = np.asarray(lam, dtype=float)
    return L + np.sum(lam * f, axis=0)


def _h_nodes(problem, t_arr, x_arr, u, lam_arr) -> np.ndarray:
    return np.atleast_1d(hamiltonian(problem, t_arr, x_arr, u, lam_arr))


def _maximize_on_nodes(
    problem: ProblemSpec,
    t_arr: np.ndarray,
    x_arr: np.ndarray,
    lam_arr: np.ndarray,
    omega: ControlSet,
    cfg: SweepConfig,
) -> np.ndarray:
    """Coordinate-wise argmax of H over the box at every node at once.

    Per dimension: coarse grid scan, then golden-section refinement around
    the best cell.  Exact ties resolve toward the smallest control value.
    """
    K = t_arr.shape[0]
    u = np.broadcast_to(omega.midpoint()[:, None], (omega.dim, K)).copy()
    G = cfg.hamiltonian_grid_points
    for d in range(omega.dim):
        lo_d, hi_d = omega.lower[d], omega.upper[d]
        if hi_d == lo_d:
            u[d] = lo_d
            continue

        def h_with(vals: np.ndarray) -> np.ndarray:
            trial = u.copy()
            trial[d] = vals
            return _h_nodes(problem, t_arr, x_arr, trial, lam_arr)

        grid_pts = np.linspace(lo_d, hi_d, G)
        h_all = np.empty((G, K))
        for gi, gv in enumerate(grid_pts):
            h_all[gi] = h_with(np.full(K, gv))
        best = np.argmax(h_all, axis=0)  # first max = smallest coordinate
        lo = grid_pts[np.maximum(best - 1, 0)]
        hi = grid_pts[np.minimum(best + 1, G - 1)]
        lo0, hi0 = lo.copy(), hi.copy()
        for _ in range(cfg.refine_iters):
            span = hi - lo
            c = hi - _INV_PHI * span
            e = lo + _INV_PHI * span
            keep_left = h_with(c) >= h_with(e)
            hi = np.where(keep_left, e, hi)
            lo = np.where(keep_left, lo, c)
        cands = np.stack([lo0, 0.5 * (lo + hi), hi0, grid_pts[best]])
        h_cands = np.stack([h_with(row) for row in cands])
        order = np.argsort(cands, axis=0, kind="stable")
        cands_sorted = np.take_along_axis(cands, order, axis=0)
        h_sorted = np.take_along_axis(h_cands, order, axis=0)
        pick = np.argmax(h_sorted, axis=0)  # first max = smallest value on ties
        u[d] = np.take_along_axis(cands_sorted, pick[None, :], axis=0)[0]
    return u


def maximize_hamiltonian(
    problem: ProblemSpec,
    t: float,
    x: np.ndarray,
    lam: np.ndarray,
    omega: ControlSet,
    cfg: SweepConfig | None = None,
) -> np.ndarray:
    """Argmax of H over the control box at one point."""
    cfg = cfg or SweepConfig()
    out = _maximize_on_nodes(
        problem,
        np.atleast_1d(float(t)),
        np.asarray(x, dtype=float)[:, None],
        np.asarray(lam, dtype=float)[:, None],
        omega,
        cfg,
    )
    return out[:, 0]


# --------------------------------------------------------------------------
# Sweep
# --------------------------------------------------------------------------


def _simulate(problem: ProblemSpec, u_vals: np.ndarray, grid: TimeGrid) -> SampledPath:
    field = problem.vector_field()
    return solve_caputo_ivp(
        field, SampledPath(grid, u_vals.copy()), problem.x_a, problem.orders, grid
    )


def _adjoint_for(problem: ProblemSpec, x: SampledPath, u_vals: np.ndarray, grid: TimeGrid) -> SampledPath:
    t = grid.nodes()
    field = problem.vector_field()
    terminal = TerminalData(problem.phi_grad_x(x.values[:, -1]))
    lx = problem.lagrangian_grad_x(t, x.values, u_vals)
    return solve_adjoint(
        field,
        SampledPath(grid, lx),
        x,
        SampledPath(grid, u_vals.copy()),
        terminal,
        problem.orders,
        grid,
    )


def objective_value(problem: ProblemSpec, x: SampledPath, u: SampledPath) -> float:
    """phi(b, x(b)) plus composite-trapezoid quadrature of the running cost."""
    t = x.grid.nodes()
    L = np.atleast_1d(problem.lagrangian_eval(t, x.values, u.values))
    h = x.grid.h
    integral = h * (L.sum() - 0.5 * (L[0] + L[-1]))
    return float(problem.phi_eval(x.values[:, -1]) + integral)


def forward_backward_sweep(
    problem: ProblemSpec, grid: TimeGrid, cfg: SweepConfig | None = None
) -> PmpSolution:
    """Iterate state / adjoint / pointwise maximization to a control fixpoint.

    Non-convergence within ``cfg.max_iters`` returns the last iterate with
    ``converged=False``; inner solver failures propagate as exceptions.
    """
    cfg = cfg or SweepConfig()
    t = grid.nodes()
    if cfg.initial_control is not None:
        u0 = np.asarray(cfg.initial_control, dtype=float)
        if u0.shape != (problem.m,):
            raise DimensionError(f"initial_control must have dim {problem.m}")
        u0 = problem.omega.clip(u0)
    else:
        u0 = problem.omega.midpoint()
    u = np.broadcast_to(u0[:, None], (problem.m, grid.n_nodes)).copy()

    converged = False
    iterations = 0
    for it in range(1, cfg.max_iters + 1):
        iterations = it
        x = _simulate(problem, u, grid)
        lam = _adjoint_for(problem, x, u, grid)
        u_arg = _maximize_on_nodes(problem, t, x.values, lam.values, problem.omega, cfg)
        h_cur = _h_nodes(problem, t, x.values, u, lam.values)
        h_arg = _h_nodes(problem, t, x.values, u_arg, lam.values)
        accept = h_arg > h_cur  # only move on strict improvement
        u_target = np.where(accept[None, :], u_arg, u)
        u_new = (1.0 - cfg.relaxation) * u + cfg.relaxation * u_target
        change = float(np.max(np.abs(u_new - u)))
        u = u_new
        if change < cfg.control_tol:
            converged = True
            break

    x = _simulate(problem, u, grid)
    lam = _adjoint_for(problem, x, u, grid)
    u_path = SampledPath(grid, u)
    sol = PmpSolution(
        x_star=x,
        u_star=u_path,
        lam=lam,
        objective=objective_value(problem, x, u_path),
        max_residual=0.0,
        sweep_iterations=iterations,
        converged=converged,
    )
    sol.max_residual = pmp_residual(problem, sol, cfg.hamiltonian_grid_points)
    return sol


# --------------------------------------------------------------------------
# Maximality defect
# --------------------------------------------------------------------------


def switch_nodes(u: SampledPath, omega: ControlSet) -> np.ndarray:
    """Nodes adjacent to a control jump larger than 5% of the box width."""
    width = omega.width()
    mask = np.zeros(u.grid.n_nodes, dtype=bool)
    du = np.abs(np.diff(u.values, axis=1))
    thresh = _SWITCH_FRACTION * np.maximum(width, 1e-300)[:, None]
    jump = np.any(du > thresh, axis=0)
    mask[1:] |= jump
    mask[:-1] |= jump
    return mask


def pmp_residual(
    problem: ProblemSpec, sol: PmpSolution, probe_points_per_dim: int
) -> float:
    """Largest positive Hamiltonian gap max_w H(t,x*,w,lam) - H(t,x*,u*,lam)
    over trustworthy nodes and a uniform probe grid in the control box.

    Flagged nodes and nodes adjacent to control switches are excluded; a
    single probe point per dimension means probing the control itself.
    """
    grid = sol.x_star.grid
    t = grid.nodes()
    ok = sol.x_star.unflagged() & sol.u_star.unflagged() & sol.lam.unflagged()
    ok &= ~switch_nodes(sol.u_star, problem.omega)
    if probe_points_per_dim < 1:
        raise DomainError("need at least one probe point per dimension")
    if probe_points_per_dim == 1 or not ok.any():
        return 0.0
    h_u = _h_nodes(problem, t, sol.x_star.values, sol.u_star.values, sol.lam.values)
    axes = [
        np.linspace(problem.omega.lower[d], problem.omega.upper[d], probe_points_per_dim)
        for d in range(problem.m)
    ]
    worst = 0.0
    for combo in product(*axes):
        w = np.asarray(combo, dtype=float)
        h_w = _h_nodes(problem, t, sol.x_star.values, w, sol.lam.values)
        gap = np.max((h_w - h_u)[ok])
        worst = max(worst, float(gap))
    return max(worst, 0.0)


# --------------------------------------------------------------------------
# Needle experiments
# --------------------------------------------------------------------------


def _needle_quadrature_weights(grid: TimeGrid, i0: int, i1: int) -> np.ndarray:
    """Trapezoid weights outside [t_i0, t_i1), left rectangles inside."""
    h = grid.h
    w = np.zeros(grid.n_nodes)
    if i0 > 0:
        w[0 : i0 + 1] += h
        w[0] -= 0.5 * h
        w[i0] -= 0.5 * h
    w[i0:i1] += h
    if i1 < grid.n_steps:
        w[i1:] += h
        w[i1] -= 0.5 * h
        w[-1] -= 0.5 * h
    return w


def _needle_objective(problem, x: SampledPath, u_vals: np.ndarray, w: np.ndarray) -> float:
    t = x.grid.nodes()
    L = np.atleast_1d(problem.lagrangian_eval(t, x.values, u_vals))
    return float(problem.phi_eval(x.values[:, -1]) + np.dot(w, L))


def needle_experiment(
    problem: ProblemSpec, sol: PmpSolution, var: NeedleVariation
) -> NeedleOutcome:
    """Perturb the control by a needle, simulate, and compare with theory.

    Returns the sup distance of the perturbed state from x*, the objective
    quotient (J_perturbed - J*)/theta, and the sup gap between the scaled
    state difference and the variational trajectory on [tau + theta, b].
    """
    grid = sol.x_star.grid
    h = grid.h
    t = grid.nodes()
    if not (0 <= var.tau_index < grid.n_steps):
        raise DomainError("tau_index must address a node in [a, b)")
    if var.v.shape != (problem.m,):
        raise DimensionError(f"v must have dim {problem.m}")
    if np.any(var.v < problem.omega.lower - 1e-12) or np.any(
        var.v > problem.omega.upper + 1e-12
    ):
        raise DomainError("v must lie in the control box")
    steps = var.theta / h
    if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
        raise DomainError("theta must be a positive multiple of the step size")
    i0 = var.tau_index
    i1 = i0 + int(round(steps))
    if i1 > grid.n_steps:
        raise DomainError("needle window must end by b")

    u_theta = sol.u_star.values.copy()
    u_theta[:, i0:i1] = var.v[:, None]
    x_theta = _simulate(problem, u_theta, grid)

    diff = x_theta.values - sol.x_star.values
    sup_dist = float(np.max(np.linalg.norm(diff, axis=0)))

    w = _needle_quadrature_weights(grid, i0, i1)
    j_theta = _needle_objective(problem, x_theta, u_theta, w)
    j_star = _needle_objective(problem, sol.x_star, sol.u_star.values, w)
    delta_j = (j_theta - j_star) / var.theta

    tau = t[i0]
    jump = problem.f_eval(tau, sol.x_star.values[:, i0], var.v) - problem.f_eval(
        tau, sol.x_star.values[:, i0], sol.u_star.values[:, i0]
    )
    eta = solve_variational(
        problem.vector_field(),
        sol.x_star,
        sol.u_star,
        VariationalInit(tau, jump),
        problem.orders,
        grid,
    )
    sel = (np.arange(grid.n_nodes) >= i1) & eta.unflagged()
    gap = np.linalg.norm(diff / var.theta - eta.values, axis=0)
    eta_gap = float(np.max(gap[sel])) if sel.any() else 0.0
    return NeedleOutcome(sup_dist=sup_dist, delta_j=delta_j, eta_gap=eta_gap)


def continuity_bound(
    consts: ConstantsEstimate, orders: MultiOrder, a: float, b: float, theta: float
) -> float:
    """Needle-distance bound M theta^abar / Gamma(abar+1) * E_abar(K (b-a)^abar)."""
    abar = orders.min_order
    return (
        consts.bound_M
        * theta**abar
        / gamma_fn(abar + 1.0)
        * mittag_leffler(abar, consts.lipschitz_K * (b - a) ** abar)
    )


# --------------------------------------------------------------------------
# Constants estimation
# --------------------------------------------------------------------------


def _corner_set(lower: np.ndarray, upper: np.ndarray, cap: int = 64) -> np.ndarray:
    dims = lower.shape[0]
    if 2**dims > cap:
        return np.stack([lower, upper])
    rows = [np.asarray(c) for c in product(*zip(lower, upper))]
    return np.stack(rows)


def estimate_constants(
    problem: ProblemSpec, grid: TimeGrid, sample_count: int, seed: int = 0
) -> ConstantsEstimate:
    """Monte Carlo estimates of the Lipschitz constant K in x, the data bound
    M on |L| and |f|, and the derivative bound N on |dL/dx| and |df/dx|.

    The state box is the componentwise range of the midpoint-control
    trajectory inflated by 50%; control corners are always sampled so that
    dominant boundary terms register in M.  Deterministic for a fixed seed.
    """
    if sample_count < 100:
        raise DomainError("sample_count must be at least 100")
    rng = np.random.default_rng(seed)
    x_mid = _simulate(problem, np.broadcast_to(
        problem.omega.midpoint()[:, None], (problem.m, grid.n_nodes)).copy(), grid)
    lo = x_mid.values.min(axis=1)
    hi = x_mid.values.max(axis=1)
    center = 0.5 * (lo + hi)
    half = 0.75 * (hi - lo) + 0.5
    box_lo, box_hi = center - half, center + half

    S = sample_count
    ts = rng.uniform(grid.a, grid.b, S)
    xs = rng.uniform(box_lo[:, None], box_hi[:, None], (problem.n, S))
    ys = rng.uniform(box_lo[:, None], box_hi[:, None], (problem.n, S))
    us = rng.uniform(problem.omega.lower[:, None], problem.omega.upper[:, None], (problem.m, S))

    fx = problem.f_eval(ts, xs, us)
    fy = problem.f_eval(ts, ys, us)
    lx = np.atleast_1d(problem.lagrangian_eval(ts, xs, us))
    ly = np.atleast_1d(problem.lagrangian_eval(ts, ys, us))
    dxy = np.linalg.norm(xs - ys, axis=0)
    okd = dxy > 1e-12
    lip = 0.0
    if okd.any():
        lip_f = np.linalg.norm(fx - fy, axis=0)[okd] / dxy[okd]
        lip_l = np.abs(lx - ly)[okd] / dxy[okd]
        lip = float(max(lip_f.max(), lip_l.max()))

    bound = float(max(np.abs(lx).max(), np.linalg.norm(fx, axis=0).max()))
    u_corners = _corner_set(problem.omega.lower, problem.omega.upper)
    x_corners = _corner_set(box_lo, box_hi)
    for tc in (grid.a, grid.b):
        for uc in u_corners:
            for xc in x_corners:
                fv = problem.f_eval(tc, xc, uc)
                lv = problem.lagrangian_eval(tc, xc, uc)
                bound = max(bound, float(abs(lv)), float(np.linalg.norm(fv)))

    jac = problem.f_jacobian(ts, xs, us)
    lgrad = problem.lagrangian_grad_x(ts, xs, us)
    deriv = float(np.linalg.norm(lgrad, axis=0).max())
    for k in range(S):
        deriv = max(deriv, float(np.linalg.norm(jac[:, :, k], 2)))

    return ConstantsEstimate(lipschitz_K=lip, bound_M=bound, deriv_bound_N=deriv)


# --------------------------------------------------------------------------
# Reference-control window for the shipped two-order example
# --------------------------------------------------------------------------


def closed_form_control_report(problem: ProblemSpec, sol: PmpSolution) -> dict | None:
    """Compare the numeric argmax of the ``paper_example`` problem with the
    closed-form extremal candidate atanh(Gamma(2/3) (5-t)^(1/3)).

    The formula is only defined where its argument is below one, and only
    comparable where the numeric control is interior to the box; the report
    states that window explicitly.  Returns None for other problems.
    """
    if problem.name != "paper_example":
        return None
    grid = sol.x_star.grid
    t = grid.nodes()
    g23 = gamma_fn(2.0 / 3.0)
    arg = g23 * np.maximum(problem.b - t, 0.0) ** (1.0 / 3.0)
    window = arg < 1.0
    t_min = problem.b - g23 ** (-3.0)
    margin = 1e-6 * problem.omega.width()
    interior = np.all(
        (sol.u_star.values > (problem.omega.lower + margin)[:, None])
        & (sol.u_star.values < (problem.omega.upper - margin)[:, None]),
        axis=0,
    )
    overlap = window & interior & sol.u_star.unflagged()
    agreement = None
    if overlap.any():
        ref = np.arctanh(arg[overlap])
        agreement = float(np.max(np.abs(sol.u_star.values[0][overlap] - ref)))
    return {
        "formula": "atanh(gamma(2/3)*(5-t)^(1/3))",
        "window_t_min": float(t_min),
        "window_t_max": float(problem.b),
        "window_nodes": int(np.count_nonzero(window)),
        "interior_overlap_nodes": int(np.count_nonzero(overlap)),
        "agreement_sup": agreement,
    }

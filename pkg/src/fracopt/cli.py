"""Command-line front end: solve, verify, lemma experiments, convergence
studies and static plots.

Exit codes: 0 success, 1 input error, 2 verification/convergence failure,
3 internal solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConvergenceError,
    DimensionError,
    DomainError,
    ExpressionError,
    FracoptError,
    SolverError,
)
from .fde_solvers import TerminalData, VectorField, solve_adjoint, solve_caputo_ivp
from .fracops import caputo_derivative, rl_derivative
from .grids import MultiOrder, SampledPath, Side, TimeGrid
from .pmp import (
    NeedleVariation,
    PmpSolution,
    SweepConfig,
    closed_form_control_report,
    continuity_bound,
    estimate_constants,
    forward_backward_sweep,
    hamiltonian,
    needle_experiment,
    pmp_residual,
    switch_nodes,
)
from .problems import ProblemSpec, SolverSettings, builtin_problem, load_problem_config
from .specfun import gamma_fn, mittag_leffler
from .trajectory_io import (
    Trajectory,
    TrajectoryError,
    check_dims,
    read_trajectory_csv,
    write_trajectory_csv,
)
from .svgplot import Panel, Series, render_panels

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CHECK = 2
EXIT_SOLVER = 3

VERIFY_TOL = 1e-2
VERIFY_PROBE_POINTS = 256
# discrete right-RL derivatives of singular adjoints are only trustworthy
# away from b; the verification window stops 5% short of it
VERIFY_EDGE_FRACTION = 0.05

# recommended sweep settings for the shipped problems
_BUILTIN_SETTINGS = {
    "paper_example": SolverSettings(n_steps=512, relaxation=1.0),
    "lq_smoke": SolverSettings(n_steps=512, relaxation=0.5),
    "zero_control": SolverSettings(n_steps=256, relaxation=0.5),
}


@dataclass
class RunReport:
    """Structured summary of one CLI run."""

    problem: str
    n_steps: int
    sweep_iterations: int = 0
    converged: bool = False
    objective: float = float("nan")
    max_residual: float = float("nan")
    wall_time_s: float = 0.0
    outputs: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "n_steps": self.n_steps,
            "sweep_iterations": self.sweep_iterations,
            "converged": self.converged,
            "objective": self.objective,
            "max_residual": self.max_residual,
            "wall_time_s": self.wall_time_s,
            "outputs": self.outputs,
            **self.extra,
        }


def _resolve_problem(args) -> tuple[ProblemSpec, SolverSettings]:
    if getattr(args, "config", None):
        problem, settings = load_problem_config(args.config)
    elif getattr(args, "problem", None):
        problem = builtin_problem(args.problem)
        settings = _BUILTIN_SETTINGS.get(problem.name, SolverSettings())
        settings = SolverSettings(**vars(settings))
    else:
        raise DomainError("either --problem <builtin name> or --config <file> is required")
    if getattr(args, "n_steps", None) is not None:
        settings.n_steps = args.n_steps
    if getattr(args, "relaxation", None) is not None:
        settings.relaxation = args.relaxation
    if getattr(args, "tol", None) is not None:
        settings.control_tol = args.tol
    if getattr(args, "max_iters", None) is not None:
        settings.max_iters = args.max_iters
    return problem, settings


def _sweep_config(settings: SolverSettings) -> SweepConfig:
    return SweepConfig(
        relaxation=settings.relaxation,
        control_tol=settings.control_tol,
        max_iters=settings.max_iters,
    )


def _hamiltonian_along(problem: ProblemSpec, sol: PmpSolution) -> np.ndarray:
    t = sol.x_star.grid.nodes()
    return np.atleast_1d(
        hamiltonian(problem, t, sol.x_star.values, sol.u_star.values, sol.lam.values)
    )


def cmd_solve(args) -> int:
    problem, settings = _resolve_problem(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = TimeGrid(problem.a, problem.b, settings.n_steps)
    t0 = time.perf_counter()
    sol = forward_backward_sweep(problem, grid, _sweep_config(settings))
    wall = time.perf_counter() - t0

    csv_path = out_dir / "trajectory.csv"
    write_trajectory_csv(
        csv_path, sol.x_star, sol.u_star, sol.lam, _hamiltonian_along(problem, sol)
    )
    report = RunReport(
        problem=problem.name,
        n_steps=settings.n_steps,
        sweep_iterations=sol.sweep_iterations,
        converged=sol.converged,
        objective=sol.objective,
        max_residual=sol.max_residual,
        wall_time_s=wall,
        outputs={"trajectory_csv": str(csv_path)},
    )
    window = closed_form_control_report(problem, sol)
    if window is not None:
        report.extra["closed_form_control"] = window
    report_path = out_dir / "report.json"
    report.outputs["report_json"] = str(report_path)
    report_path.write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    print(f"problem          {problem.name}")
    print(f"n_steps          {settings.n_steps}")
    print(f"iterations       {sol.sweep_iterations}")
    print(f"converged        {sol.converged}")
    print(f"objective        {sol.objective:.12g}")
    print(f"max_residual     {sol.max_residual:.3e}")
    print(f"wall_time_s      {wall:.3f}")
    if window is not None:
        print(
            "closed-form control window: "
            f"t in ({window['window_t_min']:.6f}, {window['window_t_max']:.6f}), "
            f"{window['interior_overlap_nodes']} interior argmax nodes overlap, "
            f"agreement_sup = {window['agreement_sup']}"
        )
    print(f"trajectory       {csv_path}")
    print(f"report           {report_path}")
    return EXIT_OK if sol.converged else EXIT_CHECK


def _verify_residuals(problem: ProblemSpec, traj: Trajectory) -> dict[str, float]:
    """Residuals of the three extremal conditions on a supplied triple.

    Maximality probes the Hamiltonian over the control box.  The adjoint
    equation is checked through the discrete right-sided derivative; that
    check cannot see the homogeneous kernel mode (b-t)^(alpha-1), whose
    amplitude is exactly what the transversality condition pins down, so the
    transversality residual compares the supplied adjoint against a re-solve
    with terminal data taken from the supplied state.
    """
    grid = traj.grid
    t = grid.nodes()
    sol = PmpSolution(
        x_star=traj.x,
        u_star=traj.u,
        lam=traj.lam,
        objective=0.0,
        max_residual=0.0,
        sweep_iterations=0,
        converged=True,
    )
    maximality = pmp_residual(problem, sol, VERIFY_PROBE_POINTS)

    dlam = rl_derivative(traj.lam, problem.orders, Side.RIGHT)
    jac = problem.f_jacobian(t, traj.x.values, traj.u.values)
    lx = problem.lagrangian_grad_x(t, traj.x.values, traj.u.values)
    dhdx = lx + np.einsum("jk,jik->ik", traj.lam.values, jac)
    ok = (
        dlam.unflagged()
        & traj.lam.unflagged()
        & ~switch_nodes(traj.u, problem.omega)
        & (t <= grid.b - VERIFY_EDGE_FRACTION * (grid.b - grid.a))
    )
    adjoint = float(np.max(np.abs(dlam.values - dhdx)[:, ok])) if ok.any() else 0.0

    terminal = TerminalData(problem.phi_grad_x(traj.x.values[:, -1]))
    lam_ref = solve_adjoint(
        problem.vector_field(),
        SampledPath(grid, lx),
        traj.x,
        traj.u,
        terminal,
        problem.orders,
        grid,
    )
    sel = traj.lam.unflagged() & lam_ref.unflagged() & (
        t <= grid.b - VERIFY_EDGE_FRACTION * (grid.b - grid.a)
    )
    transversality = (
        float(np.max(np.abs(traj.lam.values - lam_ref.values)[:, sel])) if sel.any() else 0.0
    )
    return {
        "maximality": float(maximality),
        "adjoint": adjoint,
        "transversality": transversality,
    }


def cmd_verify(args) -> int:
    problem, _ = _resolve_problem(args)
    traj = read_trajectory_csv(args.trajectory)
    check_dims(traj, problem.n, problem.m)
    residuals = _verify_residuals(problem, traj)
    worst = max(residuals.values())
    for name, value in residuals.items():
        status = "ok" if value <= VERIFY_TOL else "FAIL"
        print(f"{name:15s} {value:.6e}  [{status}]")
    print(f"tolerance       {VERIFY_TOL:.0e}")
    return EXIT_OK if worst <= VERIFY_TOL else EXIT_CHECK


def cmd_check_lemmas(args) -> int:
    problem, settings = _resolve_problem(args)
    grid = TimeGrid(problem.a, problem.b, settings.n_steps)
    sol = forward_backward_sweep(problem, grid, _sweep_config(settings))
    if not sol.converged:
        print("sweep did not converge; lemma checks need a converged extremal")
        return EXIT_CHECK
    consts = estimate_constants(problem, grid, args.samples, seed=args.seed)

    if args.tau is not None:
        tau_index = grid.index_of(args.tau)
    else:
        tau_index = grid.n_steps // 2
    if args.v is not None:
        v = np.asarray([float(s) for s in args.v.split(",")], dtype=float)
    else:
        v = problem.omega.upper.copy()
    steps = sorted({int(s) for s in args.theta_steps.split(",")}, reverse=True)
    if any(s < 1 for s in steps):
        raise DomainError("theta steps must be positive integers")

    print(f"tau = {grid.nodes()[tau_index]:.6g} (node {tau_index}), v = {v.tolist()}")
    print(f"constants: K={consts.lipschitz_K:.6g} M={consts.bound_M:.6g} N={consts.deriv_bound_N:.6g}")
    print(f"{'theta':>12s} {'sup_dist':>12s} {'bound':>12s} {'eta_gap':>12s} {'delta_j':>12s}")
    all_bounded = True
    gaps = []
    for s in steps:
        theta = s * grid.h
        out = needle_experiment(problem, sol, NeedleVariation(tau_index, v, theta))
        bound = continuity_bound(consts, problem.orders, problem.a, problem.b, theta)
        all_bounded &= out.sup_dist <= bound
        gaps.append(out.eta_gap)
        print(
            f"{theta:12.6g} {out.sup_dist:12.6g} {bound:12.6g} "
            f"{out.eta_gap:12.6g} {out.delta_j:12.6g}"
        )
    decreasing = all(gaps[i + 1] <= 1.1 * gaps[i] for i in range(len(gaps) - 1))
    print(f"sup_dist within bound: {all_bounded}; eta_gap decreasing: {decreasing}")
    return EXIT_OK if (all_bounded and decreasing) else EXIT_CHECK


def _ivp_order_study(alpha: float, n_list: list[int]) -> tuple[list[float], float]:
    field_ = VectorField(lambda t, x, u: -x, lambda t, x, u: -np.eye(1), dim=1)
    errs = []
    for n in n_list:
        grid = TimeGrid(0.0, 1.0, n)
        sol = solve_caputo_ivp(
            field_, SampledPath.zeros(grid, 1), np.array([1.0]), MultiOrder((alpha,)), grid
        )
        exact = np.array([mittag_leffler(alpha, -tt**alpha) for tt in grid.nodes()])
        errs.append(float(np.max(np.abs(sol.values[0] - exact))))
    slope = -float(np.polyfit(np.log(n_list), np.log(errs), 1)[0])
    return errs, slope


def _l1_order_study(alpha: float, n_list: list[int]) -> tuple[list[float], float]:
    errs = []
    for n in n_list:
        grid = TimeGrid(0.0, 1.0, n)
        path = SampledPath.from_function(grid, lambda t: t**1.7)
        deriv = caputo_derivative(path, MultiOrder((alpha,)), Side.LEFT)
        exact = gamma_fn(2.7) / gamma_fn(2.7 - alpha) * grid.nodes() ** (1.7 - alpha)
        # the power's derivative is singular at the start; measure on the
        # interior where the scheme's nominal order applies
        sel = deriv.unflagged() & (grid.nodes() >= 0.1)
        errs.append(float(np.max(np.abs(deriv.values[0] - exact)[sel])))
    slope = -float(np.polyfit(np.log(n_list), np.log(errs), 1)[0])
    return errs, slope


def cmd_convergence(args) -> int:
    if getattr(args, "config", None) or getattr(args, "problem", None):
        problem, _ = _resolve_problem(args)
        alphas = sorted(set(problem.orders.orders))
        label = problem.name
    else:
        alphas = [0.6, 0.3]
        label = "canonical"
    n_list = [int(s) for s in args.n_list.split(",")]
    if len(n_list) < 2:
        raise DomainError("need at least two grid sizes")

    print(f"suites for {label}, N in {n_list}")
    ok = True
    for alpha in alphas:
        errs, slope = _ivp_order_study(alpha, n_list)
        need = 0.9 * alpha
        good = slope >= need
        ok &= good
        print(
            f"forward IVP  alpha={alpha:.4g}: errors "
            + " ".join(f"{e:.3e}" for e in errs)
            + f"  order {slope:.3f} (need >= {need:.3f}) [{'ok' if good else 'FAIL'}]"
        )
        errs, slope = _l1_order_study(alpha, n_list)
        need = 0.9 * (2.0 - alpha)
        good = slope >= need
        ok &= good
        print(
            f"L1 operator  alpha={alpha:.4g}: errors "
            + " ".join(f"{e:.3e}" for e in errs)
            + f"  order {slope:.3f} (need >= {need:.3f}) [{'ok' if good else 'FAIL'}]"
        )
    return EXIT_OK if ok else EXIT_CHECK


def cmd_plot(args) -> int:
    traj = read_trajectory_csv(args.trajectory)
    t = traj.grid.nodes()
    panels = [
        Panel(
            "states",
            [
                Series(f"x{i+1}", t, traj.x.values[i], traj.x.flags)
                for i in range(traj.n)
            ],
        ),
        Panel(
            "controls",
            [
                Series(f"u{j+1}", t, traj.u.values[j], traj.u.flags)
                for j in range(traj.m)
            ],
        ),
        Panel(
            "adjoints",
            [
                Series(f"lambda{i+1}", t, traj.lam.values[i], traj.lam.flags)
                for i in range(traj.n)
            ],
        ),
        Panel("hamiltonian", [Series("H", t, traj.hamiltonian, traj.lam.flags)]),
    ]
    render_panels(panels, args.out_svg)
    print(f"wrote {args.out_svg}")
    return EXIT_OK


def _add_problem_args(p: argparse.ArgumentParser):
    p.add_argument("--problem", help="built-in problem name")
    p.add_argument("--config", help="problem configuration file")
    p.add_argument("--n-steps", type=int, default=None, help="grid steps N")
    p.add_argument("--relaxation", type=float, default=None, help="sweep relaxation in (0,1]")
    p.add_argument("--tol", type=float, default=None, help="sweep control tolerance")
    p.add_argument("--max-iters", type=int, default=None, help="sweep iteration cap")
    p.add_argument("--seed", type=int, default=0, help="seed for sampled constants")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fracopt",
        description="Solve and verify multi-order Caputo fractional optimal control problems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run the forward-backward sweep")
    _add_problem_args(p_solve)
    p_solve.add_argument("--out-dir", default="out", help="output directory")
    p_solve.set_defaults(fn=cmd_solve)

    p_verify = sub.add_parser("verify", help="re-check the extremal conditions on a trajectory CSV")
    _add_problem_args(p_verify)
    p_verify.add_argument("trajectory", help="trajectory.csv produced by solve")
    p_verify.set_defaults(fn=cmd_verify)

    p_lem = sub.add_parser("check-lemmas", help="needle-variation continuity/differentiability checks")
    _add_problem_args(p_lem)
    p_lem.add_argument("--tau", type=float, default=None, help="needle start time (default: midpoint)")
    p_lem.add_argument("--v", default=None, help="needle control value, comma separated")
    p_lem.add_argument("--theta-steps", default="8,4,2,1", help="needle widths in grid steps")
    p_lem.add_argument("--samples", type=int, default=400, help="samples for constant estimation")
    p_lem.set_defaults(fn=cmd_check_lemmas)

    p_conv = sub.add_parser("convergence", help="empirical order studies against analytic solutions")
    _add_problem_args(p_conv)
    p_conv.add_argument("--n-list", default="128,256,512,1024", help="grids to test")
    p_conv.set_defaults(fn=cmd_convergence)

    p_plot = sub.add_parser("plot", help="render a trajectory CSV as an SVG")
    p_plot.add_argument("trajectory", help="trajectory.csv")
    p_plot.add_argument("out_svg", help="output SVG path")
    p_plot.set_defaults(fn=cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConvergenceError, SolverError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (TrajectoryError, ExpressionError, DimensionError, DomainError, FracoptError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

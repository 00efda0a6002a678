"""Trajectory CSV schema: t,x1..xn,u1..um,lambda1..lambdan,H.

Numbers are printed with 17 significant digits so repeated runs are
byte-identical and the round trip through ``read_trajectory_csv`` is
lossless.  Rows at flagged (singular filler) nodes carry one extra trailing
field ``S``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, FracoptError
from .grids import SampledPath, TimeGrid


class TrajectoryError(FracoptError):
    """Unreadable or inconsistent trajectory file."""


@dataclass
class Trajectory:
    grid: TimeGrid
    x: SampledPath
    u: SampledPath
    lam: SampledPath
    hamiltonian: np.ndarray

    @property
    def n(self) -> int:
        return self.x.dim

    @property
    def m(self) -> int:
        return self.u.dim


def header_fields(n: int, m: int) -> list[str]:
    return (
        ["t"]
        + [f"x{i}" for i in range(1, n + 1)]
        + [f"u{j}" for j in range(1, m + 1)]
        + [f"lambda{i}" for i in range(1, n + 1)]
        + ["H"]
    )


def write_trajectory_csv(
    path: str | Path,
    x: SampledPath,
    u: SampledPath,
    lam: SampledPath,
    hamiltonian: np.ndarray,
) -> None:
    grid = x.grid
    t = grid.nodes()
    flags = x.flags | u.flags | lam.flags
    lines = [",".join(header_fields(x.dim, u.dim))]
    for k in range(grid.n_nodes):
        vals = (
            [t[k]]
            + [x.values[i, k] for i in range(x.dim)]
            + [u.values[j, k] for j in range(u.dim)]
            + [lam.values[i, k] for i in range(lam.dim)]
            + [hamiltonian[k]]
        )
        row = ",".join(f"{v:.17g}" for v in vals)
        if flags[k]:
            row += ",S"
        lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


_HEADER_RE = re.compile(r"^t(,x\d+)+(,u\d+)+(,lambda\d+)+,H$")


def read_trajectory_csv(path: str | Path) -> Trajectory:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise TrajectoryError(f"cannot read trajectory: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2:
        raise TrajectoryError("trajectory file has no data rows")
    header = lines[0]
    if not _HEADER_RE.match(header):
        raise TrajectoryError(f"unrecognized header '{header}'")
    fields = header.split(",")
    n = sum(1 for f in fields if f.startswith("x"))
    m = sum(1 for f in fields if f.startswith("u") and f != "u")
    ncols = len(fields)
    if fields != header_fields(n, m):
        raise TrajectoryError("header columns out of order")

    rows = []
    flags = []
    for ridx, ln in enumerate(lines[1:], start=1):
        parts = ln.split(",")
        flagged = False
        if len(parts) == ncols + 1 and parts[-1] == "S":
            flagged = True
            parts = parts[:-1]
        if len(parts) != ncols:
            raise TrajectoryError(f"row {ridx}: expected {ncols} fields, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise TrajectoryError(f"row {ridx}: {exc}") from exc
        if not all(np.isfinite(v) for v in vals):
            raise TrajectoryError(f"row {ridx}: non-finite value")
        rows.append(vals)
        flags.append(flagged)

    data = np.asarray(rows, dtype=float).T
    flags_arr = np.asarray(flags, dtype=bool)
    t = data[0]
    n_steps = len(t) - 1
    if n_steps < 2:
        raise TrajectoryError("need at least three rows")
    h = (t[-1] - t[0]) / n_steps
    if h <= 0 or np.max(np.abs(np.diff(t) - h)) > 1e-9 * max(1.0, abs(h)):
        raise TrajectoryError("time column is not a uniform increasing grid")
    grid = TimeGrid(float(t[0]), float(t[-1]), n_steps)
    xs = data[1 : 1 + n]
    us = data[1 + n : 1 + n + m]
    ls = data[1 + n + m : 1 + 2 * n + m]
    ham = data[1 + 2 * n + m]
    return Trajectory(
        grid=grid,
        x=SampledPath(grid, xs, flags_arr),
        u=SampledPath(grid, us, flags_arr),
        lam=SampledPath(grid, ls, flags_arr),
        hamiltonian=ham,
    )


def check_dims(traj: Trajectory, n: int, m: int) -> None:
    if traj.n != n or traj.m != m:
        raise DimensionError(
            f"trajectory has (n={traj.n}, m={traj.m}), problem needs (n={n}, m={m})"
        )

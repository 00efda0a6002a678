import json
from pathlib import Path

import numpy as np
import pytest

from fracopt import gamma_fn
from fracopt.cli import main
from fracopt.trajectory_io import read_trajectory_csv

CONFIG = """
[problem]
name = "custom"
a = 0.0
b = 1.0
orders = [0.6]
x_a = [0.0]

[control]
lower = [-2.0]
upper = [2.0]

[dynamics]
f1 = "u1"

[cost]
lagrangian = "-(u1^2)"
terminal = "x1"

[solver]
n_steps = 128
relaxation = 0.5
control_tol = 1e-6
max_iters = 200
"""


@pytest.fixture(scope="module")
def lq_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("lq")
    code = main(["solve", "--problem", "lq_smoke", "--out-dir", str(out)])
    assert code == 0
    return out


class TestSolve:
    def test_zero_control_one_iteration(self, tmp_path, capsys):
        code = main(["solve", "--problem", "zero_control", "--out-dir", str(tmp_path)])
        captured = capsys.readouterr().out
        assert code == 0
        assert "iterations       1" in captured
        assert (tmp_path / "trajectory.csv").exists()
        assert (tmp_path / "report.json").exists()

    def test_lq_outputs(self, lq_run):
        report = json.loads((lq_run / "report.json").read_text())
        assert report["problem"] == "lq_smoke"
        assert report["converged"] is True
        assert report["max_residual"] <= 1e-3
        for path in report["outputs"].values():
            assert Path(path).exists()

    def test_paper_example_csv_matches_adjoint_law(self, tmp_path):
        code = main(
            ["solve", "--problem", "paper_example", "--n-steps", "1024", "--out-dir", str(tmp_path)]
        )
        assert code == 0
        lines = (tmp_path / "trajectory.csv").read_text().splitlines()
        assert lines[0] == "t,x1,x2,u1,lambda1,lambda2,H"
        assert len(lines) == 1 + 1025
        assert lines[-1].endswith(",S")
        traj = read_trajectory_csv(tmp_path / "trajectory.csv")
        t = traj.grid.nodes()
        sel = (t <= 4.9) & traj.lam.unflagged()
        exact = (5.0 - t[sel]) ** (-0.5) / gamma_fn(0.5)
        assert np.max(np.abs(traj.lam.values[1][sel] - exact)) < 1e-2

    def test_solve_from_config(self, tmp_path):
        cfg = tmp_path / "prob.toml"
        cfg.write_text(CONFIG)
        code = main(["solve", "--config", str(cfg), "--out-dir", str(tmp_path / "out")])
        assert code == 0
        traj = read_trajectory_csv(tmp_path / "out" / "trajectory.csv")
        assert traj.grid.n_steps == 128

    def test_malformed_config_exit_one(self, tmp_path, capsys):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("[problem\nname = 'x'")
        code = main(["solve", "--config", str(cfg), "--out-dir", str(tmp_path / "out")])
        assert code == 1
        assert "byte offset" in capsys.readouterr().err

    def test_missing_problem_argument(self, tmp_path, capsys):
        code = main(["solve", "--out-dir", str(tmp_path)])
        assert code == 1

    def test_determinism(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        assert main(["solve", "--problem", "zero_control", "--out-dir", str(a)]) == 0
        assert main(["solve", "--problem", "zero_control", "--out-dir", str(b)]) == 0
        assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()

    def test_non_convergence_exits_two(self, tmp_path):
        code = main(
            [
                "solve",
                "--problem",
                "lq_smoke",
                "--max-iters",
                "2",
                "--tol",
                "1e-12",
                "--relaxation",
                "0.5",
                "--out-dir",
                str(tmp_path),
            ]
        )
        assert code == 2
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["converged"] is False


class TestVerify:
    def test_round_trip(self, lq_run, capsys):
        code = main(["verify", "--problem", "lq_smoke", str(lq_run / "trajectory.csv")])
        out = capsys.readouterr().out
        assert code == 0
        assert "maximality" in out and "adjoint" in out and "transversality" in out

    def test_round_trip_two_order_problem(self, tmp_path):
        out = tmp_path / "paper"
        assert main(["solve", "--problem", "paper_example", "--out-dir", str(out)]) == 0
        assert main(["verify", "--problem", "paper_example", str(out / "trajectory.csv")]) == 0

    def test_zeroed_control_fails_maximality(self, lq_run, tmp_path):
        lines = (lq_run / "trajectory.csv").read_text().splitlines()
        fields = lines[0].split(",")
        iu = fields.index("u1")
        doctored = [lines[0]]
        for ln in lines[1:]:
            parts = ln.split(",")
            parts[iu] = "0"
            doctored.append(",".join(parts))
        bad = tmp_path / "zeroed.csv"
        bad.write_text("\n".join(doctored) + "\n")
        assert main(["verify", "--problem", "lq_smoke", str(bad)]) == 2

    def test_scaled_adjoint_fails_transversality(self, lq_run, tmp_path):
        lines = (lq_run / "trajectory.csv").read_text().splitlines()
        fields = lines[0].split(",")
        il = fields.index("lambda1")
        doctored = [lines[0]]
        for ln in lines[1:]:
            parts = ln.split(",")
            parts[il] = repr(float(parts[il]) * 1.5)
            doctored.append(",".join(parts))
        bad = tmp_path / "scaled.csv"
        bad.write_text("\n".join(doctored) + "\n")
        assert main(["verify", "--problem", "lq_smoke", str(bad)]) == 2

    def test_empty_csv(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        assert main(["verify", "--problem", "lq_smoke", str(empty)]) == 1

    def test_dimension_mismatch(self, lq_run):
        assert main(["verify", "--problem", "paper_example", str(lq_run / "trajectory.csv")]) == 1


class TestCheckLemmas:
    def test_lq_passes(self, capsys):
        code = main(["check-lemmas", "--problem", "lq_smoke", "--n-steps", "256"])
        out = capsys.readouterr().out
        assert code == 0
        assert "sup_dist within bound: True" in out
        assert "eta_gap decreasing: True" in out

    def test_custom_needle_point(self, capsys):
        code = main(
            [
                "check-lemmas",
                "--problem",
                "lq_smoke",
                "--n-steps",
                "256",
                "--tau",
                "0.25",
                "--v",
                "-10.0",
                "--theta-steps",
                "4,2,1",
            ]
        )
        assert code == 0
        assert "tau = 0.25" in capsys.readouterr().out


class TestConvergence:
    def test_canonical_suites(self, capsys):
        code = main(["convergence", "--n-list", "128,256"])
        out = capsys.readouterr().out
        assert code == 0
        assert "forward IVP" in out and "L1 operator" in out

    def test_problem_orders(self, capsys):
        code = main(["convergence", "--problem", "lq_smoke", "--n-list", "128,256"])
        assert code == 0
        assert "alpha=0.7" in capsys.readouterr().out


class TestPlot:
    def test_renders_four_panels(self, lq_run, tmp_path):
        svg = tmp_path / "traj.svg"
        assert main(["plot", str(lq_run / "trajectory.csv"), str(svg)]) == 0
        content = svg.read_text()
        assert content.count("<g transform") == 4
        for title in ("states", "controls", "adjoints", "hamiltonian"):
            assert title in content
        assert svg.stat().st_size > 0

    def test_missing_csv(self, tmp_path):
        assert main(["plot", str(tmp_path / "nope.csv"), str(tmp_path / "x.svg")]) == 1

    def test_nan_csv_reports_row(self, tmp_path, capsys):
        bad = tmp_path / "nan.csv"
        bad.write_text(
            "t,x1,u1,lambda1,H\n"
            "0,0,0,0,0\n"
            "0.5,nan,0,0,0\n"
            "1,0,0,0,0\n"
        )
        assert main(["plot", str(bad), str(tmp_path / "x.svg")]) == 1
        assert "row 2" in capsys.readouterr().err

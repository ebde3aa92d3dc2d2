import numpy as np
import pytest

from hytrain.errors import SchemaError, SolverError
from hytrain.solve import (
    SolutionTrajectory,
    SolveReport,
    optimize,
    require_optimal,
    solve_program,
)
from hytrain.socp import build
from hytrain.validate import audit_tightness


class TestSolveOutcome:
    def test_flat_reaches_optimal_at_requested_tol(self, flat_result):
        rep = flat_result.report
        assert rep.status == "optimal"
        assert rep.solver_status == "Solved"
        assert rep.tol_used == 1e-10
        assert rep.passes == 2
        assert rep.iterations > 0
        assert np.isfinite(rep.objective) and rep.objective > 0.0
        assert flat_result.trajectory is not None
        assert flat_result.x is not None

    def test_report_dict_keys(self, flat_result):
        d = flat_result.report.to_dict()
        assert set(d) == {
            "status", "solver_status", "objective", "solver_objective",
            "gap_rel", "iterations", "passes", "tol_used",
        }
        # wall time would break byte-identical run artifacts
        assert "solve_time" not in d

    def test_single_pass_when_refine_disabled(self, toy_instance):
        res = optimize(toy_instance, refine=False)
        assert res.report.status == "optimal"
        assert res.report.passes == 1

    def test_refinement_sharpens_battery_cone(self, toy_instance):
        # the second pass exists to tighten relaxations, not to cut cost: the
        # unrefined point may book a slack loss cone (cheap but unphysical)
        single = optimize(toy_instance, refine=False)
        double = optimize(toy_instance)
        assert double.report.passes == 2
        s_slack = audit_tightness(single.trajectory, toy_instance).family(
            "battery_loss_cone").max_applicable_slack
        d_slack = audit_tightness(double.trajectory, toy_instance).family(
            "battery_loss_cone").max_applicable_slack
        assert d_slack <= s_slack
        assert d_slack <= 1e-3
        assert double.report.objective == pytest.approx(
            single.report.objective, rel=1e-3
        )

    def test_deterministic_repeat(self, toy_instance):
        a = optimize(toy_instance)
        b = optimize(toy_instance)
        assert a.report.objective == pytest.approx(b.report.objective, rel=1e-10)
        assert np.array_equal(a.x, b.x)

    def test_iteration_starvation_walks_ladder(self, toy_instance):
        prog = build(toy_instance)
        report, x = solve_program(prog, tol=1e-10, max_iter=2)
        assert report.status == "numerical-failure"
        assert report.tol_used == 1e-7
        assert x is None

    def test_booked_time_equals_target(self, toy_result, toy_instance):
        booked = toy_result.trajectory.total_time
        assert booked == pytest.approx(toy_instance.journey.target_time, rel=1e-8)


class TestRequireOptimal:
    def ok_report(self, **kw) -> SolveReport:
        base = dict(
            status="optimal", solver_status="Solved", objective=1.0,
            solver_objective=1.0, gap_rel=0.0, iterations=5, solve_time=0.1,
        )
        base.update(kw)
        return SolveReport(**base)

    def test_passes_on_optimal(self):
        require_optimal(self.ok_report())

    def test_raises_with_status_detail(self):
        with pytest.raises(SolverError, match="infeasible"):
            require_optimal(self.ok_report(status="infeasible", solver_status="PrimalInfeasible"))


class TestCsvRoundTrip:
    def test_arrays_survive(self, toy_result, tmp_path):
        traj = toy_result.trajectory
        path = str(tmp_path / "sol.csv")
        traj.to_csv(path)
        back = SolutionTrajectory.from_csv(path)
        assert back.n == traj.n
        for name in (
            "s", "ds", "dwell", "speed", "inv_speed", "speed_sq_end", "soc_end",
            "temp_end", "time_end", "force_motor", "force_brake", "force_fc",
            "force_batt", "force_cool", "force_dis", "force_chr",
            "soc_loss", "cool_rate",
        ):
            a, b = getattr(traj, name), getattr(back, name)
            assert np.allclose(a, b, rtol=1e-11, atol=1e-9), name
        assert np.array_equal(back.is_stop, traj.is_stop)
        assert back.initial_soc == pytest.approx(traj.initial_soc, rel=1e-12)
        assert back.objective == pytest.approx(traj.objective, rel=1e-11)

    def test_same_trajectory_writes_identical_bytes(self, toy_result, tmp_path):
        p1, p2 = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
        toy_result.trajectory.to_csv(p1)
        toy_result.trajectory.to_csv(p2)
        with open(p1, "rb") as f1, open(p2, "rb") as f2:
            assert f1.read() == f2.read()


class TestCsvRejection:
    @pytest.fixture()
    def lines(self, toy_result, tmp_path):
        path = tmp_path / "good.csv"
        toy_result.trajectory.to_csv(str(path))
        return path.read_text().splitlines()

    def write(self, tmp_path, lines) -> str:
        path = tmp_path / "bad.csv"
        path.write_text("\n".join(lines) + "\n")
        return str(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(SchemaError, match="cannot read"):
            SolutionTrajectory.from_csv(str(tmp_path / "nope.csv"))

    def test_missing_schema_header(self, tmp_path, lines):
        path = self.write(tmp_path, ["speed,soc"] + lines[1:])
        with pytest.raises(SchemaError, match="missing schema header"):
            SolutionTrajectory.from_csv(path)

    def test_unknown_schema(self, tmp_path, lines):
        path = self.write(tmp_path, ["# schema=hytrain-solution-v99"] + lines[1:])
        with pytest.raises(SchemaError, match="unsupported schema"):
            SolutionTrajectory.from_csv(path)

    def test_malformed_initial_header(self, tmp_path, lines):
        path = self.write(tmp_path, [lines[0], "# initial garbage"] + lines[2:])
        with pytest.raises(SchemaError, match="initial-state"):
            SolutionTrajectory.from_csv(path)

    def test_column_set_mismatch(self, tmp_path, lines):
        cols = lines[2].split(",")
        mangled = ",".join(["wrong"] + cols[1:])
        path = self.write(tmp_path, lines[:2] + [mangled] + lines[3:])
        with pytest.raises(SchemaError, match="column set"):
            SolutionTrajectory.from_csv(path)

    def test_ragged_data_row(self, tmp_path, lines):
        truncated = ",".join(lines[3].split(",")[:5])
        path = self.write(tmp_path, lines[:3] + [truncated] + lines[4:])
        with pytest.raises(SchemaError, match="data row has 5 fields"):
            SolutionTrajectory.from_csv(path)

    def test_non_numeric_field(self, tmp_path, lines):
        toks = lines[3].split(",")
        toks[7] = "fast"
        path = self.write(tmp_path, lines[:3] + [",".join(toks)] + lines[4:])
        with pytest.raises(SchemaError, match="non-numeric"):
            SolutionTrajectory.from_csv(path)

    def test_no_data_rows(self, tmp_path, lines):
        path = self.write(tmp_path, lines[:3] + [lines[-1]])
        with pytest.raises(SchemaError, match="no data rows"):
            SolutionTrajectory.from_csv(path)

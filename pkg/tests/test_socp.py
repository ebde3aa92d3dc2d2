import dataclasses

import numpy as np
import pytest

from hytrain.errors import ConfigError, InfeasibleError
from hytrain.socp import (
    BuildOptions,
    VariableLayout,
    build,
    evaluate_objective,
    mccormick_cooling_rows,
    reach_speed_sq_caps,
)

from conftest import TOY_GRID, TOY_JOURNEY, build_instance


class TestVariableLayout:
    def test_total_columns_single_interval(self):
        # 3 states x 2 nodes + (5 controls + 8 auxiliaries) x 1 interval
        assert VariableLayout(1).total == 19

    def test_block_offsets_are_contiguous(self):
        lay = VariableLayout(4)
        seen = np.zeros(lay.total, dtype=bool)
        for name in ("speed_sq", "soc", "temp", "force_motor", "force_brake",
                     "force_fc", "force_batt", "force_cool", "speed", "inv_speed",
                     "soc_loss", "cool_rate", "d_soc", "d_temp", "force_dis",
                     "force_chr"):
            start, count = lay.block(name)
            assert not seen[start : start + count].any()
            seen[start : start + count] = True
        assert seen.all()

    def test_idx_and_values_round_trip(self):
        lay = VariableLayout(3)
        x = np.arange(float(lay.total))
        for name in ("speed_sq", "force_fc", "inv_speed"):
            start, count = lay.block(name)
            got = lay.values(name, x)
            assert got.shape == (count,)
            for i in range(count):
                assert lay.idx(name, i) == start + i
                assert got[i] == x[start + i]

    def test_state_blocks_have_node_count(self):
        lay = VariableLayout(7)
        assert lay.block("speed_sq")[1] == 8
        assert lay.block("force_motor")[1] == 7

    def test_index_out_of_range(self):
        lay = VariableLayout(2)
        with pytest.raises(IndexError):
            lay.idx("force_fc", 2)
        with pytest.raises(IndexError):
            lay.idx("speed_sq", 3)

    def test_zero_intervals_rejected(self):
        with pytest.raises(ConfigError):
            VariableLayout(0)


class TestMcCormickPlanes:
    BOX_T = (293.0, 313.0)
    BOX_L = (0.04, 2.0)
    H = 40.0

    def planes(self):
        return mccormick_cooling_rows(self.BOX_T, self.BOX_L, self.H)

    def test_two_lower_planes_at_opposite_corners(self):
        rows = self.planes()
        assert len(rows) == 2
        corners = {r.corner for r in rows}
        assert corners == {(self.BOX_T[0], self.BOX_L[0]), (self.BOX_T[1], self.BOX_L[1])}

    def test_planes_minorize_bilinear_on_box(self):
        # every plane must stay at or below h*T*lambda across the whole box,
        # otherwise capping the cooling credit by the plane would be invalid
        rows = self.planes()
        temps = np.linspace(*self.BOX_T, 23)
        lams = np.linspace(*self.BOX_L, 23)
        tg, lg = np.meshgrid(temps, lams)
        bilinear = self.H * tg * lg
        for r in rows:
            plane = r.coef_inv_speed * lg + r.coef_temp * tg + r.rhs
            assert np.all(plane <= bilinear + 1e-9)

    def test_planes_touch_at_their_corner(self):
        for r in self.planes():
            t, lam = r.corner
            plane = r.coef_inv_speed * lam + r.coef_temp * t + r.rhs
            assert plane == pytest.approx(self.H * t * lam, rel=1e-12)

    def test_planes_exact_on_box_edges(self):
        # the (lo, lo) plane is exact wherever T or lambda sits at its lower
        # bound; the (hi, hi) plane wherever one sits at its upper bound
        lo, hi = self.planes() if self.planes()[0].corner[0] == self.BOX_T[0] else self.planes()[::-1]
        t = 301.7
        assert lo.coef_inv_speed * self.BOX_L[0] + lo.coef_temp * t + lo.rhs == pytest.approx(
            self.H * t * self.BOX_L[0], rel=1e-12
        )
        assert hi.coef_inv_speed * self.BOX_L[1] + hi.coef_temp * t + hi.rhs == pytest.approx(
            self.H * t * self.BOX_L[1], rel=1e-12
        )

    def test_degenerate_box_single_plane_is_exact(self):
        rows = mccormick_cooling_rows((300.0, 300.0), (0.1, 0.5), 25.0)
        for r in rows:
            for lam in (0.1, 0.3, 0.5):
                plane = r.coef_inv_speed * lam + r.coef_temp * 300.0 + r.rhs
                assert plane == pytest.approx(25.0 * 300.0 * lam, rel=1e-12)


class TestReachCaps:
    def test_caps_bound_solved_trajectory(self, flat_instance, flat_result):
        caps = reach_speed_sq_caps(flat_instance)
        z = flat_result.prog.layout.values("speed_sq", flat_result.x)
        assert caps.shape == z.shape
        assert np.all(z <= caps + 1e-5)

    def test_terminal_stop_cap(self, flat_instance):
        caps = reach_speed_sq_caps(flat_instance)
        assert caps[-1] <= flat_instance.journey.stop_speed_sq + 1e-12

    def test_start_cap_is_initial_state(self, flat_instance):
        caps = reach_speed_sq_caps(flat_instance)
        assert caps[0] == pytest.approx(flat_instance.journey.initial_speed_sq)

    def test_caps_respect_speed_limits(self, hilly_instance):
        caps = reach_speed_sq_caps(hilly_instance)
        limits = hilly_instance.grid.limits()
        for k in range(1, hilly_instance.grid.n):
            allowed = min(limits[k - 1], limits[k]) ** 2
            assert caps[k] <= allowed + 1e-9

    def test_caps_floor_at_crawl(self, flat_instance):
        caps = reach_speed_sq_caps(flat_instance)
        assert np.all(caps >= flat_instance.journey.min_speed**2 - 1e-15)


class TestBuild:
    def test_stop_interval_books_dwell(self, toy_instance, toy_result):
        grid = toy_instance.grid
        stop = grid.stop_mask()
        assert stop.any()
        traj = toy_result.trajectory
        for i in np.flatnonzero(stop):
            booked = traj.ds[i] * traj.inv_speed[i]
            assert booked == pytest.approx(grid.dwells()[i], rel=1e-5)

    def test_feasibility_screen_rejects_tiny_time(self):
        inst = build_instance(
            "track_toy.csv", "components_toy.json",
            dict(TOY_JOURNEY, target_time=1.0), dict(TOY_GRID),
        )
        with pytest.raises(InfeasibleError, match="minimum time estimate"):
            build(inst)

    def test_screen_can_be_disabled(self):
        inst = build_instance(
            "track_toy.csv", "components_toy.json",
            dict(TOY_JOURNEY, target_time=1.0), dict(TOY_GRID),
        )
        inst = dataclasses.replace(
            inst, options=BuildOptions(feasibility_screen=False)
        )
        prog = build(inst)
        assert prog.layout.n == inst.grid.n

    def test_objective_evaluator_matches_report(self, flat_result):
        val = evaluate_objective(flat_result.prog, flat_result.x)
        assert val == pytest.approx(flat_result.report.objective, rel=1e-9)

    def test_layout_matches_grid(self, flat_instance, flat_result):
        assert flat_result.prog.layout.n == flat_instance.grid.n

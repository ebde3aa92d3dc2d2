import math
import os

import numpy as np
import pytest

from hytrain.errors import TrackFormatError
from hytrain.track import (
    JourneySpec,
    SpatialGrid,
    TrackProfile,
    build_grid,
    gradient_at,
    load_track,
    min_time_estimate,
)

from conftest import CONFIGS


def write(tmp_path, text: str) -> str:
    path = tmp_path / "track.csv"
    path.write_text(text)
    return str(path)


GOOD = """\
length_m = 1000
davis_a = 2500
davis_b = 40
davis_c = 6
#gradients pos_m,theta_rad
0, 0
500, 0.004
#limits pos_m,vmax_mps
0, 20
#stations pos_m,dwell_s
1000, 30
"""


class TestLoadTrack:
    def test_parses_fields(self, tmp_path):
        track = load_track(write(tmp_path, GOOD))
        assert track.length == 1000.0
        assert (track.davis_a, track.davis_b, track.davis_c) == (2500.0, 40.0, 6.0)
        assert track.gradients == ((0.0, 0.0), (500.0, 0.004))
        assert track.speed_limits == ((0.0, 20.0),)
        assert track.stations == ((1000.0, 30.0),)

    def test_shipped_fixture(self):
        track = load_track(os.path.join(CONFIGS, "track_flat.csv"))
        assert track.length == 10000.0
        assert track.stations == ((10000.0, 30.0),)

    def test_comment_lines_skipped(self, tmp_path):
        track = load_track(write(tmp_path, "## banner\n" + GOOD))
        assert track.length == 1000.0

    def test_unknown_key(self, tmp_path):
        with pytest.raises(TrackFormatError, match="unknown key"):
            load_track(write(tmp_path, "bogus = 1\n" + GOOD))

    def test_duplicate_key(self, tmp_path):
        with pytest.raises(TrackFormatError, match="duplicate"):
            load_track(write(tmp_path, "length_m = 5\n" + GOOD))

    def test_unknown_section_header(self, tmp_path):
        with pytest.raises(TrackFormatError, match="unknown section"):
            load_track(write(tmp_path, GOOD + "#tunnels pos_m,len_m\n1, 2\n"))

    def test_non_numeric_field(self, tmp_path):
        with pytest.raises(TrackFormatError, match="non-numeric"):
            load_track(write(tmp_path, GOOD + "abc, def\n"))

    def test_missing_required_key(self, tmp_path):
        text = GOOD.replace("davis_b = 40\n", "")
        with pytest.raises(TrackFormatError, match="davis_b"):
            load_track(write(tmp_path, text))

    def test_missing_file(self, tmp_path):
        with pytest.raises(TrackFormatError, match="cannot read"):
            load_track(str(tmp_path / "absent.csv"))


class TestJourneySpec:
    def test_min_speed_defaults_to_crawl(self):
        j = JourneySpec(
            target_time=100.0, initial_speed_sq=0.25, initial_soc=0.5,
            initial_temp=293.0, stop_speed_sq=0.25,
        )
        assert j.min_speed == pytest.approx(0.5)

    @pytest.mark.parametrize(
        "kw",
        [
            dict(target_time=0.0),
            dict(initial_soc=0.0),
            dict(initial_soc=1.0),
            dict(initial_temp=-1.0),
            dict(stop_speed_sq=0.0),
        ],
    )
    def test_rejects_bad_fields(self, kw):
        base = dict(
            target_time=100.0, initial_speed_sq=0.01, initial_soc=0.5,
            initial_temp=293.0,
        )
        base.update(kw)
        with pytest.raises(TrackFormatError):
            JourneySpec(**base)


class TestBuildGrid:
    def test_uniform_without_refinement(self):
        track = TrackProfile(
            length=1000.0, davis_a=2500.0, davis_b=40.0, davis_c=6.0,
            gradients=((0.0, 0.002),), speed_limits=((0.0, 20.0),),
            stations=((1000.0, 30.0),),
        )
        grid = build_grid(track, 100.0, refine_near_stations=False)
        assert grid.n == 11
        widths = grid.widths()
        assert np.allclose(widths[:-1], 100.0)
        assert grid.running_length() == pytest.approx(1000.0)
        # stop interval width is dwell * crawl speed so that time = dwell
        assert widths[-1] == pytest.approx(30.0 * math.sqrt(grid.stop_speed_sq))
        assert list(grid.stop_mask()) == [False] * 10 + [True]
        assert grid.ends_at_stop()

    def test_toy_approach_ladder(self):
        track = load_track(os.path.join(CONFIGS, "track_toy.csv"))
        grid = build_grid(
            track, 300.0, stop_speed_sq=0.25,
            approach_len=300.0, approach_step=300.0, min_step=9.375,
        )
        assert list(grid.widths()) == [
            300.0, 300.0, 300.0, 300.0, 300.0,
            150.0, 75.0, 37.5, 18.75, 9.375, 9.375, 15.0,
        ]
        assert grid.intervals[-1].is_stop and grid.intervals[-1].dwell == 30.0

    def test_gradient_and_limit_assignment(self):
        track = load_track(os.path.join(CONFIGS, "track_toy.csv"))
        grid = build_grid(track, 300.0, refine_near_stations=False)
        # climb starts at 900 m: intervals beyond carry the 0.004 grade
        assert gradient_at(grid, 0) == 0.0
        assert gradient_at(grid, 4) == pytest.approx(0.004)
        assert np.all(grid.limits()[:-1] == 20.0)

    def test_gradient_at_bounds(self, toy_instance):
        with pytest.raises(IndexError):
            gradient_at(toy_instance.grid, toy_instance.grid.n)


class TestMinTimeEstimate:
    def test_hand_case_crawl_pinned_arrival(self):
        # 100 m at limit 20 whose exit node is the stop: charged at the crawl
        # speed 0.5, then the 10 s dwell.
        track = TrackProfile(
            length=100.0, davis_a=1.0, davis_b=0.0, davis_c=0.0,
            gradients=((0.0, 0.0),), speed_limits=((0.0, 20.0),),
            stations=((100.0, 10.0),),
        )
        grid = build_grid(track, 100.0, stop_speed_sq=0.25, refine_near_stations=False)
        assert min_time_estimate(grid) == pytest.approx(100.0 / 0.5 + 10.0)

    def test_toy_fixture_value(self, toy_instance):
        # 1790.625 m of running at 20 m/s, the 9.375 m approach cell at the
        # 0.5 m/s crawl, and the 30 s dwell
        expect = 1790.625 / 20.0 + 9.375 / 0.5 + 30.0
        assert min_time_estimate(toy_instance.grid) == pytest.approx(expect)
        assert expect == pytest.approx(138.28125)

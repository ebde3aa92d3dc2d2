import os

import pytest

from hytrain.components import load_components
from hytrain.socp import ProblemInstance
from hytrain.solve import optimize
from hytrain.surrogates import SurrogateSet, fit_battery, fit_fuelcell, fit_motor
from hytrain.track import JourneySpec, build_grid, load_track

CONFIGS = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "configs"))


@pytest.fixture(scope="session")
def configs_dir() -> str:
    return CONFIGS


def build_instance(
    track_name: str,
    components_name: str,
    journey_kwargs: dict,
    grid_kwargs: dict | None = None,
) -> ProblemInstance:
    """Assemble a problem from the shipped fixture files."""
    track = load_track(os.path.join(CONFIGS, track_name))
    parts = load_components(os.path.join(CONFIGS, components_name))
    journey = JourneySpec(**journey_kwargs)
    kw = dict(grid_kwargs or {})
    base_step = kw.pop("base_step", 50.0)
    grid = build_grid(track, base_step, stop_speed_sq=journey.stop_speed_sq, **kw)
    surr = SurrogateSet(
        motor=fit_motor(parts.motor_map, parts.vehicle),
        fuelcell=fit_fuelcell(parts.fuelcell_map, parts.vehicle),
        battery=fit_battery(parts.battery),
    )
    return ProblemInstance(
        track=track, grid=grid, journey=journey, components=parts, surrogates=surr
    )


FLAT_JOURNEY = dict(
    target_time=560.0, initial_speed_sq=0.01, initial_soc=0.6, initial_temp=293.0
)
HILLY_JOURNEY = dict(
    target_time=691.0, initial_speed_sq=0.01, initial_soc=0.6, initial_temp=293.0
)
HOT_JOURNEY = dict(
    target_time=535.0, initial_speed_sq=0.01, initial_soc=0.6, initial_temp=312.0
)
TOY_JOURNEY = dict(
    target_time=180.0,
    initial_speed_sq=0.25,
    initial_soc=0.6,
    initial_temp=293.0,
    stop_speed_sq=0.25,
)
TOY_GRID = dict(base_step=300.0, approach_len=300.0, approach_step=300.0, min_step=9.375)


@pytest.fixture(scope="session")
def flat_instance() -> ProblemInstance:
    return build_instance("track_flat.csv", "components_desk.json", FLAT_JOURNEY)


@pytest.fixture(scope="session")
def flat_result(flat_instance):
    res = optimize(flat_instance)
    assert res.report.status == "optimal"
    return res


@pytest.fixture(scope="session")
def hilly_instance() -> ProblemInstance:
    return build_instance("track_hilly.csv", "components_desk.json", HILLY_JOURNEY)


@pytest.fixture(scope="session")
def hilly_result(hilly_instance):
    res = optimize(hilly_instance)
    assert res.report.status == "optimal"
    return res


@pytest.fixture(scope="session")
def hot_instance() -> ProblemInstance:
    return build_instance("track_hot.csv", "components_hot.json", HOT_JOURNEY)


@pytest.fixture(scope="session")
def hot_result(hot_instance):
    res = optimize(hot_instance)
    assert res.report.status == "optimal"
    return res


@pytest.fixture(scope="session")
def toy_instance() -> ProblemInstance:
    return build_instance("track_toy.csv", "components_toy.json", TOY_JOURNEY, TOY_GRID)


@pytest.fixture(scope="session")
def toy_result(toy_instance):
    res = optimize(toy_instance)
    assert res.report.status == "optimal"
    return res

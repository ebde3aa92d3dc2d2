import json
import os

import numpy as np
import pytest

from hytrain.components import (
    BatteryParams,
    EfficiencyMap,
    VehicleParams,
    exact_battery_efficiency,
    exact_delta_soc,
    exact_fuel_force,
    exact_motor_demand,
    load_components,
    synth_fuelcell_map,
    synth_motor_map,
    terminal_voltage,
)
from hytrain.errors import ComponentError

from conftest import CONFIGS


def desk_battery(**kw) -> BatteryParams:
    base = dict(
        open_circuit_voltage=600.0, resistance=0.1, capacity_ah=40.0,
        mass=400.0, heat_capacity=900.0, cooling_coeff=40.0,
        temp_ambient=293.0, temp_max=313.0,
        power_min=-2.5e5, power_max=2.5e5, soc_min=0.3, soc_max=0.9,
        cooling_force_max=2000.0,
    )
    base.update(kw)
    return BatteryParams(**base)


class TestBatteryCircuit:
    # Closed-form values for U=600 V, R=0.1 ohm, Q=40 Ah:
    # discharge current I = (U - sqrt(U^2 - 4 P R)) / (2 R)

    def test_discharge_at_validity_limit(self):
        batt = desk_battery()
        # P = U^2/(4R) = 900 kW makes the discriminant exactly zero: I = 3000 A
        assert exact_delta_soc(batt, 9.0e5, 1.0) == pytest.approx(
            0.020833333333333332, rel=1e-12
        )
        assert terminal_voltage(batt, 9.0e5) == pytest.approx(300.0, rel=1e-12)
        assert exact_battery_efficiency(batt, 9.0e5) == pytest.approx(0.5, rel=1e-12)

    def test_charge_values(self):
        batt = desk_battery()
        # I = (600 - sqrt(600^2 + 4e4)) / 0.2 with sqrt(400000) = 632.4555...
        assert exact_delta_soc(batt, -1.0e5, 1.0) == pytest.approx(
            -0.0011269281956137473, rel=1e-12
        )
        assert exact_battery_efficiency(batt, -1.0e5) == pytest.approx(
            0.973665961010276, rel=1e-12
        )

    def test_beyond_validity_limit_raises(self):
        batt = desk_battery()
        with pytest.raises(ComponentError, match="validity limit"):
            exact_delta_soc(batt, 9.1e5, 1.0)

    def test_zero_resistance_is_linear(self):
        batt = desk_battery(resistance=0.0)
        # I = P/U exactly, so one second at 144 kW moves 240/144000 of charge
        assert exact_delta_soc(batt, 1.44e5, 1.0) == pytest.approx(
            240.0 / 144000.0, rel=1e-12
        )
        assert exact_battery_efficiency(batt, 2.0e5) == pytest.approx(1.0)

    def test_dt_scales_linearly(self):
        batt = desk_battery()
        assert exact_delta_soc(batt, 1.0e5, 7.0) == pytest.approx(
            7.0 * exact_delta_soc(batt, 1.0e5, 1.0), rel=1e-12
        )

    def test_representative_efficiencies(self):
        batt = desk_battery()
        # trapezoid mean of the exact efficiency over each half window
        assert batt.eta_discharge == pytest.approx(0.9634749588920711, rel=1e-12)
        assert batt.eta_charge == pytest.approx(0.9681297580859646, rel=1e-12)

    def test_eta_override_respected(self):
        batt = desk_battery(eta_discharge=0.95, eta_charge=0.97)
        assert (batt.eta_discharge, batt.eta_charge) == (0.95, 0.97)

    def test_rejects_bad_eta(self):
        with pytest.raises(ComponentError):
            desk_battery(eta_discharge=1.5)


class TestEfficiencyMap:
    def test_bilinear_interpolation(self):
        m = EfficiencyMap(
            axis_force=np.array([0.0, 10.0]),
            axis_speed=np.array([0.0, 2.0]),
            table=np.array([[0.8, 0.9], [0.6, 0.7]]),
        )
        assert m.lookup(0.0, 0.0) == pytest.approx(0.8)
        assert m.lookup(10.0, 2.0) == pytest.approx(0.7)
        assert m.lookup(5.0, 1.0) == pytest.approx(0.75)

    def test_clamps_outside_domain(self):
        m = EfficiencyMap(
            axis_force=np.array([0.0, 10.0]),
            axis_speed=np.array([0.0, 2.0]),
            table=np.array([[0.8, 0.9], [0.6, 0.7]]),
        )
        assert m.lookup(-5.0, -1.0) == pytest.approx(0.8)
        assert m.lookup(99.0, 99.0) == pytest.approx(0.7)

    def test_motor_demand_traction_and_regen(self):
        m = EfficiencyMap(
            axis_force=np.array([-100.0, 100.0]),
            axis_speed=np.array([0.0, 10.0]),
            table=np.full((2, 2), 0.8),
        )
        # traction divides by eta, regen multiplies
        assert exact_motor_demand(m, 80.0, 5.0) == pytest.approx(100.0)
        assert exact_motor_demand(m, -100.0, 5.0) == pytest.approx(-80.0)

    def test_fuel_force_divides_by_eta(self):
        m = EfficiencyMap(
            axis_force=np.array([0.0, 100.0]),
            axis_speed=np.array([0.0, 10.0]),
            table=np.full((2, 2), 0.5),
        )
        assert exact_fuel_force(m, 50.0, 4.0) == pytest.approx(100.0)


class TestSynthMaps:
    def test_motor_map_shape_and_range(self):
        m = synth_motor_map(0.92, 1.5e5, force_max=8.0e4, speed_max=30.0)
        assert m.table.shape == (len(m.axis_force), len(m.axis_speed))
        assert np.all(m.table > 0.0) and np.all(m.table <= 0.92 + 1e-12)
        assert np.max(m.table) == pytest.approx(0.92, abs=1e-6)

    def test_fuelcell_monotone_axes(self):
        m = synth_fuelcell_map(
            0.55, 1.4e5, power_min=5.0e3, power_max=4.0e5, speed_max=30.0
        )
        assert np.all(np.diff(m.axis_force) > 0.0)
        assert np.all(m.table > 0.0) and np.all(m.table < 1.0)

    def test_seed_determinism(self):
        a = synth_motor_map(0.92, 1.5e5, force_max=8.0e4, speed_max=30.0, seed=3)
        b = synth_motor_map(0.92, 1.5e5, force_max=8.0e4, speed_max=30.0, seed=3)
        c = synth_motor_map(0.92, 1.5e5, force_max=8.0e4, speed_max=30.0, seed=4)
        assert np.array_equal(a.table, b.table)
        assert not np.array_equal(a.table, c.table)


class TestLoadComponents:
    def test_shipped_fixture(self):
        parts = load_components(os.path.join(CONFIGS, "components_desk.json"))
        assert parts.vehicle.mass == 1.0e5
        assert parts.battery.resistance == 0.1
        assert parts.motor_map.table.shape[0] == len(parts.motor_map.axis_force)

    def test_seed_override_changes_synth_maps(self):
        path = os.path.join(CONFIGS, "components_desk.json")
        a = load_components(path, seed=1)
        b = load_components(path, seed=2)
        assert not np.array_equal(a.motor_map.table, b.motor_map.table)

    def _doc(self):
        with open(os.path.join(CONFIGS, "components_desk.json")) as fh:
            return json.load(fh)

    def _dump(self, tmp_path, doc) -> str:
        path = tmp_path / "components.json"
        path.write_text(json.dumps(doc))
        return str(path)

    def test_unknown_top_key(self, tmp_path):
        doc = self._doc()
        doc["extras"] = {}
        with pytest.raises(ComponentError, match="unknown"):
            load_components(self._dump(tmp_path, doc))

    def test_unknown_battery_key(self, tmp_path):
        doc = self._doc()
        doc["battery"]["chemistry"] = "ncm"
        with pytest.raises(ComponentError, match="chemistry"):
            load_components(self._dump(tmp_path, doc))

    def test_schema_version_enforced(self, tmp_path):
        doc = self._doc()
        doc["schema_version"] = 2
        with pytest.raises(ComponentError, match="schema_version"):
            load_components(self._dump(tmp_path, doc))

    def test_missing_section(self, tmp_path):
        doc = self._doc()
        del doc["fuelcell_map"]
        with pytest.raises(ComponentError, match="fuelcell_map"):
            load_components(self._dump(tmp_path, doc))

    def test_synthetic_cannot_mix_with_inline(self, tmp_path):
        doc = self._doc()
        doc["motor_map"]["axis_force"] = [0.0, 1.0]
        with pytest.raises(ComponentError, match="cannot be mixed"):
            load_components(self._dump(tmp_path, doc))

    def test_inline_map_tables(self, tmp_path):
        doc = self._doc()
        doc["motor_map"] = {
            "axis_force": [-100.0, 100.0],
            "axis_speed": [0.0, 10.0],
            "table": [[0.8, 0.8], [0.8, 0.8]],
        }
        parts = load_components(self._dump(tmp_path, doc))
        assert parts.motor_map.lookup(0.0, 5.0) == pytest.approx(0.8)

    def test_vehicle_validation_propagates(self, tmp_path):
        doc = self._doc()
        doc["vehicle"]["mass"] = -5.0
        with pytest.raises(ComponentError):
            load_components(self._dump(tmp_path, doc))

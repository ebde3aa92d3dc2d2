"""Exact powertrain component models and their on-disk description.

This module owns the nonlinear "ground truth" models that the convex layer
approximates and that the validator and the dynamic-programming oracle
integrate directly:

* an equivalent-circuit battery (open-circuit voltage, series resistance)
  with closed-form state-of-charge increments and terminal efficiency,
* tabulated motor-drive and fuel-cell efficiency maps with bilinear
  interpolation, plus synthetic map generators for desk-scale studies,
* parameter containers for the battery and the vehicle with validity checks.

Sign conventions: positive battery power discharges the battery; positive
motor force drives the train forward. Per-meter energy quantities (J/m) are
called "forces" throughout, because dividing a power balance by speed turns
every power into a force.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ComponentError


@dataclass(frozen=True)
class BatteryParams:
    """Equivalent-circuit battery pack parameters.

    Attributes:
        open_circuit_voltage: Open-circuit voltage in V.
        resistance: Series resistance in ohm.
        capacity_ah: Charge capacity in Ah.
        mass: Pack mass in kg.
        heat_capacity: Specific heat in J/(kg K).
        cooling_coeff: Convective coefficient between pack and ambient, W/K.
        temp_ambient: Ambient temperature in K.
        temp_max: Maximum allowed pack temperature in K.
        power_min: Most negative allowed terminal power (charging), W.
        power_max: Largest allowed terminal power (discharging), W.
        soc_min / soc_max: State-of-charge window, fractions.
        cooling_force_max: Cap on the active-cooling effort variable, J/m.
        eta_discharge / eta_charge: Representative terminal efficiencies used
            by the convex heat model. When omitted they are filled with the
            mean exact efficiency over the respective power range.
    """

    open_circuit_voltage: float
    resistance: float
    capacity_ah: float
    mass: float
    heat_capacity: float
    cooling_coeff: float
    temp_ambient: float
    temp_max: float
    power_min: float
    power_max: float
    soc_min: float
    soc_max: float
    cooling_force_max: float
    eta_discharge: float | None = None
    eta_charge: float | None = None

    def __post_init__(self) -> None:
        if self.open_circuit_voltage <= 0.0 or self.resistance < 0.0:
            raise ComponentError(
                "battery needs positive open-circuit voltage and nonnegative resistance"
            )
        if self.capacity_ah <= 0.0:
            raise ComponentError(f"battery capacity must be positive, got {self.capacity_ah}")
        if self.mass <= 0.0 or self.heat_capacity <= 0.0:
            raise ComponentError("battery mass and heat capacity must be positive")
        if self.cooling_coeff < 0.0:
            raise ComponentError(f"cooling coefficient must be nonnegative, got {self.cooling_coeff}")
        if not (0.0 <= self.soc_min < self.soc_max <= 1.0):
            raise ComponentError(
                f"need 0 <= soc_min < soc_max <= 1, got [{self.soc_min}, {self.soc_max}]"
            )
        if self.power_min > 0.0 or self.power_max < 0.0:
            raise ComponentError("battery power window must contain zero")
        if self.temp_max <= 0.0 or self.temp_ambient <= 0.0:
            raise ComponentError("temperatures must be positive (kelvin)")
        if self.cooling_force_max < 0.0:
            raise ComponentError("cooling_force_max must be nonnegative")
        if self.resistance > 0.0 and self.power_max > self.power_validity_limit + 1e-9:
            raise ComponentError(
                f"power_max {self.power_max} exceeds the model validity limit "
                f"U^2/(4R) = {self.power_validity_limit}"
            )
        if self.eta_discharge is None:
            object.__setattr__(
                self, "eta_discharge", _mean_efficiency(self, 0.0, self.power_max)
            )
        if self.eta_charge is None:
            object.__setattr__(
                self, "eta_charge", _mean_efficiency(self, self.power_min, 0.0)
            )
        for name in ("eta_discharge", "eta_charge"):
            val = getattr(self, name)
            if not (0.0 < val <= 1.0):
                raise ComponentError(f"{name} must lie in (0, 1], got {val}")

    @property
    def power_validity_limit(self) -> float:
        """Largest discharge power the equivalent circuit can deliver, U^2/(4R)."""
        if self.resistance == 0.0:
            return math.inf
        return self.open_circuit_voltage**2 / (4.0 * self.resistance)

    @property
    def thermal_capacity(self) -> float:
        """Lumped heat capacity of the pack, J/K."""
        return self.mass * self.heat_capacity


@dataclass(frozen=True)
class VehicleParams:
    """Train-level masses, auxiliaries, and powertrain ratings."""

    mass: float
    mass_equiv: float
    power_aux: float
    force_motor_min: float
    force_motor_max: float
    power_motor_min: float
    power_motor_max: float
    force_brake_min: float
    power_fc_min: float
    power_fc_max: float
    gravity: float = 9.81

    def __post_init__(self) -> None:
        if self.mass <= 0.0 or self.mass_equiv < self.mass:
            raise ComponentError(
                "vehicle mass must be positive and equivalent mass must not be smaller"
            )
        if self.power_aux < 0.0:
            raise ComponentError("auxiliary power must be nonnegative")
        if not (self.force_motor_min <= 0.0 <= self.force_motor_max):
            raise ComponentError("motor force window must contain zero")
        if not (self.power_motor_min <= 0.0 <= self.power_motor_max):
            raise ComponentError("motor power window must contain zero")
        if self.force_brake_min > 0.0:
            raise ComponentError("force_brake_min is the most negative brake force, must be <= 0")
        if not (0.0 <= self.power_fc_min <= self.power_fc_max):
            raise ComponentError("fuel cell power window must satisfy 0 <= min <= max")


def exact_delta_soc(batt: BatteryParams, power, dt):
    """State-of-charge drop over ``dt`` seconds at constant terminal power.

    Positive ``power`` (discharge) gives a positive drop; charging gives a
    negative drop. Uses the closed-form current of the equivalent circuit,
    valid for ``power <= U^2 / (4 R)``.
    """
    p = np.asarray(power, dtype=float)
    u = batt.open_circuit_voltage
    r = batt.resistance
    disc = u * u - 4.0 * p * r
    if np.any(disc < -1e-9 * u * u):
        raise ComponentError(
            f"battery power beyond validity limit U^2/(4R) = {batt.power_validity_limit:g} W"
        )
    if r == 0.0:
        current = p / u
    else:
        current = (u - np.sqrt(np.maximum(disc, 0.0))) / (2.0 * r)
    out = current / (3600.0 * batt.capacity_ah) * dt
    return float(out) if np.isscalar(power) else out


def terminal_voltage(batt: BatteryParams, power):
    """Terminal voltage at constant power, ``(U + sqrt(U^2 - 4 P R)) / 2``."""
    p = np.asarray(power, dtype=float)
    u = batt.open_circuit_voltage
    disc = u * u - 4.0 * p * batt.resistance
    if np.any(disc < -1e-9 * u * u):
        raise ComponentError(
            f"battery power beyond validity limit U^2/(4R) = {batt.power_validity_limit:g} W"
        )
    out = 0.5 * (u + np.sqrt(np.maximum(disc, 0.0)))
    return float(out) if np.isscalar(power) else out


def exact_battery_efficiency(batt: BatteryParams, power):
    """Terminal efficiency: ``U_t/U`` when discharging, ``U/U_t`` when charging."""
    p = np.asarray(power, dtype=float)
    u = batt.open_circuit_voltage
    ut = terminal_voltage(batt, p)
    out = np.where(p >= 0.0, ut / u, u / ut)
    return float(out) if np.isscalar(power) else out


def _mean_efficiency(batt: BatteryParams, p_lo: float, p_hi: float, n: int = 2001) -> float:
    # Unweighted mean of the exact efficiency over the power range. The
    # linear heat model multiplies (1 - eta) by the throughput, so a plain
    # mean balances the over-count at light load against the under-count
    # near the power limit.
    if p_hi <= p_lo:
        return 1.0
    grid = np.linspace(p_lo, p_hi, n)
    eta = exact_battery_efficiency(batt, grid)
    return float(np.trapezoid(eta, grid) / (p_hi - p_lo))


@dataclass(frozen=True, eq=False)
class EfficiencyMap:
    """Rectangular efficiency look-up table with bilinear interpolation.

    ``axis_force`` carries motor force samples in N for a motor map, or
    electrical power samples in W for a fuel-cell map. ``axis_speed`` is in
    m/s. ``table[i, j]`` is the efficiency at ``(axis_force[i], axis_speed[j])``
    and must lie in (0, 1]. Lookups clamp to the table edges.
    """

    axis_force: np.ndarray
    axis_speed: np.ndarray
    table: np.ndarray

    def __post_init__(self) -> None:
        af = np.asarray(self.axis_force, dtype=float)
        av = np.asarray(self.axis_speed, dtype=float)
        tb = np.asarray(self.table, dtype=float)
        object.__setattr__(self, "axis_force", af)
        object.__setattr__(self, "axis_speed", av)
        object.__setattr__(self, "table", tb)
        if af.ndim != 1 or av.ndim != 1 or len(af) < 2 or len(av) < 2:
            raise ComponentError("efficiency map axes must be 1-D with at least two samples")
        if np.any(np.diff(af) <= 0.0) or np.any(np.diff(av) <= 0.0):
            raise ComponentError("efficiency map axes must be strictly increasing")
        if tb.shape != (len(af), len(av)):
            raise ComponentError(
                f"table shape {tb.shape} does not match axes ({len(af)}, {len(av)})"
            )
        if np.any(tb <= 0.0) or np.any(tb > 1.0):
            raise ComponentError("efficiency values must lie in (0, 1]")

    def lookup(self, force, speed):
        """Bilinear interpolation, clamped to the table edges."""
        f = np.clip(np.asarray(force, dtype=float), self.axis_force[0], self.axis_force[-1])
        v = np.clip(np.asarray(speed, dtype=float), self.axis_speed[0], self.axis_speed[-1])
        i = np.clip(np.searchsorted(self.axis_force, f, side="right") - 1, 0, len(self.axis_force) - 2)
        j = np.clip(np.searchsorted(self.axis_speed, v, side="right") - 1, 0, len(self.axis_speed) - 2)
        t = (f - self.axis_force[i]) / (self.axis_force[i + 1] - self.axis_force[i])
        u = (v - self.axis_speed[j]) / (self.axis_speed[j + 1] - self.axis_speed[j])
        val = (
            (1.0 - t) * (1.0 - u) * self.table[i, j]
            + t * (1.0 - u) * self.table[i + 1, j]
            + (1.0 - t) * u * self.table[i, j + 1]
            + t * u * self.table[i + 1, j + 1]
        )
        return float(val) if np.isscalar(force) and np.isscalar(speed) else val


def exact_motor_demand(motor_map: EfficiencyMap, force, speed):
    """Electrical energy per meter drawn by the drive for mechanical force.

    Traction (``force >= 0``) divides by the efficiency, regeneration
    multiplies by it, which makes the exact demand convex in the force with a
    kink at zero.
    """
    f = np.asarray(force, dtype=float)
    eta = motor_map.lookup(f, speed)
    out = np.where(f >= 0.0, f / eta, f * eta)
    return float(out) if np.isscalar(force) and np.isscalar(speed) else out


def exact_fuel_force(fc_map: EfficiencyMap, force_fc, speed):
    """Hydrogen energy per meter for fuel-cell electrical force ``force_fc``.

    The map is indexed by electrical power ``force_fc * speed``.
    """
    f = np.asarray(force_fc, dtype=float)
    v = np.asarray(speed, dtype=float)
    eta = fc_map.lookup(f * v, v)
    out = f / eta
    return float(out) if np.isscalar(force_fc) and np.isscalar(speed) else out


def _insert_sorted(axis: np.ndarray, value: float) -> np.ndarray:
    if np.any(np.abs(axis - value) < 1e-9 * max(1.0, abs(value))):
        return axis
    return np.sort(np.append(axis, value))


def synth_motor_map(
    peak_eff: float,
    knee_power: float,
    *,
    force_max: float,
    speed_max: float,
    n_force: int = 41,
    n_speed: int = 13,
    speed_sensitivity: float = 0.03,
    eff_floor: float = 0.60,
    seed: int = 0,
) -> EfficiencyMap:
    """Generate a smooth synthetic motor-drive efficiency map.

    The efficiency is a concave paraboloid in electrical-power deviation from
    ``knee_power``, scaled by a mild concave speed factor. The ridge speed is
    jittered deterministically from ``seed``, and the sample axes are arranged
    to contain the exact peak so the requested ``peak_eff`` appears verbatim
    in the table. Every constant-speed slice is exactly concave in force.
    """
    if not (0.0 < eff_floor < peak_eff <= 1.0):
        raise ComponentError(f"need 0 < eff_floor < peak_eff <= 1, got {eff_floor}, {peak_eff}")
    if force_max <= 0.0 or speed_max <= 0.0 or knee_power <= 0.0:
        raise ComponentError("force_max, speed_max, knee_power must be positive")
    rng = np.random.default_rng(seed)
    v_peak = (0.55 + 0.10 * rng.random()) * speed_max
    f_peak = knee_power / v_peak
    if f_peak > force_max:
        raise ComponentError(
            f"knee_power {knee_power} not reachable within force_max {force_max} "
            f"at ridge speed {v_peak:.3f}"
        )
    axis_v = np.linspace(0.5, speed_max, n_speed)
    axis_v = _insert_sorted(axis_v, v_peak)
    axis_f = np.linspace(-force_max, force_max, n_force)
    axis_f = _insert_sorted(axis_f, f_peak)

    p_grid = axis_f[:, None] * axis_v[None, :]
    dev_max = float(np.max(np.abs(p_grid - knee_power)))
    # Half-width chosen so the worst corner of the envelope sits at eff_floor.
    span = dev_max / math.sqrt(1.0 - eff_floor / peak_eff)
    base = peak_eff * (1.0 - ((p_grid - knee_power) / span) ** 2)
    speed_factor = 1.0 - speed_sensitivity * ((axis_v - v_peak) / speed_max) ** 2
    table = base * speed_factor[None, :]
    return EfficiencyMap(axis_force=axis_f, axis_speed=axis_v, table=table)


def synth_fuelcell_map(
    peak_eff: float,
    knee_power: float,
    *,
    power_min: float,
    power_max: float,
    speed_max: float,
    n_power: int = 41,
    n_speed: int = 7,
    idle_eff: float = 0.40,
    rated_eff: float = 0.52,
    seed: int = 0,
) -> EfficiencyMap:
    """Generate a synthetic fuel-cell system efficiency curve over power.

    System efficiency peaks at a (seed-jittered) fraction of rated power,
    falls steeply toward idle where balance-of-plant parasitics dominate,
    and droops mildly toward rated power where stack losses grow. The two
    branches are quadratic and meet with zero slope at the peak. The table
    is constant across the speed axis; speed still matters downstream
    because force samples at different speeds probe different powers.
    """
    if not (0.0 < idle_eff < peak_eff <= 1.0) or not (0.0 < rated_eff < peak_eff):
        raise ComponentError(
            f"need 0 < idle_eff, rated_eff < peak_eff <= 1, "
            f"got {idle_eff}, {rated_eff}, {peak_eff}"
        )
    if not (0.0 <= power_min < power_max):
        raise ComponentError("need 0 <= power_min < power_max")
    rng = np.random.default_rng(seed)
    p_peak = knee_power * (0.95 + 0.10 * rng.random())
    if not (power_min < p_peak < power_max):
        raise ComponentError(
            f"jittered knee power {p_peak:.0f} falls outside ({power_min}, {power_max})"
        )
    axis_p = np.linspace(power_min, power_max, n_power)
    axis_p = _insert_sorted(axis_p, p_peak)
    low = axis_p < p_peak
    curve = np.empty_like(axis_p)
    curve[low] = peak_eff - (peak_eff - idle_eff) * (
        (p_peak - axis_p[low]) / (p_peak - power_min)
    ) ** 2
    curve[~low] = peak_eff - (peak_eff - rated_eff) * (
        (axis_p[~low] - p_peak) / (power_max - p_peak)
    ) ** 2
    axis_v = np.linspace(0.5, speed_max, n_speed)
    table = np.repeat(curve[:, None], len(axis_v), axis=1)
    return EfficiencyMap(axis_force=axis_p, axis_speed=axis_v, table=table)


@dataclass(frozen=True)
class ComponentSet:
    """Everything the optimizer needs to know about the powertrain."""

    battery: BatteryParams
    vehicle: VehicleParams
    motor_map: EfficiencyMap
    fuelcell_map: EfficiencyMap


def _check_keys(obj: dict, allowed: set[str], context: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ComponentError(f"{context}: unknown keys {sorted(unknown)}")


def _build_map(spec: dict, context: str, seed: int | None, synth_fn, synth_allowed: set[str]) -> EfficiencyMap:
    _check_keys(spec, {"synthetic", "axis_force", "axis_speed", "table"}, context)
    if "synthetic" in spec:
        if len(spec) != 1:
            raise ComponentError(f"{context}: 'synthetic' cannot be mixed with inline axes")
        synth = dict(spec["synthetic"])
        _check_keys(synth, synth_allowed, f"{context}.synthetic")
        if seed is not None:
            synth["seed"] = seed
        try:
            return synth_fn(**synth)
        except TypeError as exc:
            raise ComponentError(f"{context}.synthetic: {exc}") from exc
    for req in ("axis_force", "axis_speed", "table"):
        if req not in spec:
            raise ComponentError(f"{context}: missing {req!r}")
    return EfficiencyMap(
        axis_force=np.asarray(spec["axis_force"], dtype=float),
        axis_speed=np.asarray(spec["axis_speed"], dtype=float),
        table=np.asarray(spec["table"], dtype=float),
    )


_MOTOR_SYNTH_KEYS = {
    "peak_eff", "knee_power", "force_max", "speed_max", "n_force", "n_speed",
    "speed_sensitivity", "eff_floor", "seed",
}
_FC_SYNTH_KEYS = {
    "peak_eff", "knee_power", "power_min", "power_max", "speed_max", "n_power",
    "n_speed", "idle_eff", "rated_eff", "seed",
}


def load_components(path: str, *, seed: int | None = None) -> ComponentSet:
    """Load a component description file (strict JSON, unknown keys rejected).

    ``seed`` overrides the seed of any synthetic map blocks; inline tables
    ignore it.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ComponentError(f"cannot read component file {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ComponentError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ComponentError(f"{path}: top level must be an object")
    _check_keys(doc, {"schema_version", "battery", "vehicle", "motor_map", "fuelcell_map"}, path)
    if doc.get("schema_version") != 1:
        raise ComponentError(f"{path}: schema_version must be 1")
    for req in ("battery", "vehicle", "motor_map", "fuelcell_map"):
        if req not in doc:
            raise ComponentError(f"{path}: missing section {req!r}")

    batt_fields = {f.name for f in dataclasses.fields(BatteryParams)}
    _check_keys(doc["battery"], batt_fields, f"{path}: battery")
    veh_fields = {f.name for f in dataclasses.fields(VehicleParams)}
    _check_keys(doc["vehicle"], veh_fields, f"{path}: vehicle")
    try:
        battery = BatteryParams(**doc["battery"])
        vehicle = VehicleParams(**doc["vehicle"])
    except TypeError as exc:
        raise ComponentError(f"{path}: {exc}") from exc

    motor_map = _build_map(
        doc["motor_map"], f"{path}: motor_map", seed, synth_motor_map, _MOTOR_SYNTH_KEYS
    )
    fc_map = _build_map(
        doc["fuelcell_map"], f"{path}: fuelcell_map", seed, synth_fuelcell_map, _FC_SYNTH_KEYS
    )
    return ComponentSet(battery=battery, vehicle=vehicle, motor_map=motor_map, fuelcell_map=fc_map)

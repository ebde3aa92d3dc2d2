"""Solution auditing: relaxation tightness and exact forward simulation.

The cone program earns its answer through relaxations: products become cone
inequalities, the bilinear convection term becomes planes, the battery split
becomes a pair of one-sided forces. :func:`audit_tightness` measures how far
each relaxed inequality sits from equality at the returned optimum, because
the physical interpretation of the solution relies on those gaps being zero.

:func:`forward_simulate` takes the other route: it discards every optimizer
state and re-integrates the journey from the initial condition using only the
per-interval force commands, with the exact nonlinear component models
(variable battery efficiency, square-root SOC current, table-lookup drive and
fuel-cell efficiencies, full Davis drag). The divergence between the two
trajectories is the end-to-end modeling error of the convex surrogates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .components import (
    BatteryParams,
    exact_battery_efficiency,
    exact_delta_soc,
    exact_fuel_force,
)
from .errors import ConfigError, SpeedCollapseError
from .socp import ProblemInstance
from .solve import SolutionTrajectory

__all__ = [
    "FamilyAudit",
    "TightnessReport",
    "SimulationReport",
    "audit_tightness",
    "forward_simulate",
    "model_temperature",
    "stagewise_replay",
    "zero_stop_comparison",
]


# ---------------------------------------------------------------------------
# tightness audit


@dataclass
class FamilyAudit:
    """Per-interval slack record for one relaxed constraint family.

    ``rel_slack`` is the distance from equality, normalized by the family's
    natural scale, and includes solver residual in either direction (it is an
    absolute value). ``applicable`` marks the intervals where tightness is
    actually claimed; ``threshold`` is ``None`` for report-only families.
    """

    name: str
    description: str
    rel_slack: np.ndarray
    applicable: np.ndarray
    threshold: float | None

    @property
    def n_applicable(self) -> int:
        return int(np.count_nonzero(self.applicable))

    @property
    def max_applicable_slack(self) -> float:
        if self.n_applicable == 0:
            return 0.0
        return float(np.max(self.rel_slack[self.applicable]))

    @property
    def max_slack(self) -> float:
        return float(np.max(self.rel_slack)) if len(self.rel_slack) else 0.0

    @property
    def passed(self) -> bool | None:
        if self.threshold is None:
            return None
        return self.max_applicable_slack <= self.threshold

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "threshold": self.threshold,
            "n_applicable": self.n_applicable,
            "max_applicable_slack": self.max_applicable_slack,
            "max_slack": self.max_slack,
            "passed": self.passed,
        }


@dataclass
class TightnessReport:
    """Audit of every relaxed family on one solved instance."""

    families: list[FamilyAudit] = field(default_factory=list)

    def family(self, name: str) -> FamilyAudit:
        for fam in self.families:
            if fam.name == name:
                return fam
        raise KeyError(f"no audited family named {name!r}")

    @property
    def ok(self) -> bool:
        return all(f.passed is not False for f in self.families)

    def to_dict(self) -> dict:
        return {"ok": self.ok, "families": [f.to_dict() for f in self.families]}

    def format_table(self) -> str:
        lines = [
            f"{'family':<18} {'checked':>7} {'max slack':>12} {'threshold':>10} verdict",
            "-" * 62,
        ]
        for f in self.families:
            thr = f"{f.threshold:.0e}" if f.threshold is not None else "-"
            verdict = {True: "PASS", False: "FAIL", None: "report"}[f.passed]
            lines.append(
                f"{f.name:<18} {f.n_applicable:>7d} {f.max_applicable_slack:>12.3e} "
                f"{thr:>10} {verdict}"
            )
        return "\n".join(lines)


def audit_tightness(
    sol: SolutionTrajectory,
    inst: ProblemInstance,
    tol: float = 1e-5,
    *,
    tol_battery: float = 1e-3,
    interior_margin: float = 1e-6,
    force_active_frac: float = 0.01,
    temp_active_atol: float = 1e-2,
) -> TightnessReport:
    """Measure how tightly each relaxed inequality holds at the solution.

    Families and their applicability rules:

    * ``time_product`` (``v * inv_speed >= 1``) and ``kinetic_link``
      (``v^2 <= z``): claimed tight on every interval, threshold ``tol``.
    * ``demand_balance`` (supply >= drive demand plus auxiliaries): claimed
      tight only where the battery force is strictly inside its power window
      (elsewhere the optimizer may lack the incentive to close the gap),
      threshold ``tol``.
    * ``battery_loss_cone`` (``soc_loss * inv_speed >= alpha ds F^2``):
      claimed where ``|F_batt|`` exceeds ``force_active_frac`` of its bound;
      near zero force both sides vanish and the ratio is noise. Threshold
      ``tol_battery``.
    * ``cooling_credit``, ``discharge_split``, ``charge_split``: the
      incentive to close these comes from the temperature cap, so they are
      classified applicable only on intervals whose nodes touch the cap
      within ``temp_active_atol`` kelvin. They are reported, never failed:
      the cooling credit is granted through planes that understate the
      bilinear convection strictly inside the box, which is a deliberate
      conservative restriction rather than a defect.
    """
    batt = inst.components.battery
    veh = inst.components.vehicle
    sm = inst.surrogates.motor
    sb = inst.surrogates.battery
    n = sol.n
    lam = sol.inv_speed
    v = sol.speed
    z = sol.speed_sq_end
    fb = sol.force_batt
    all_iv = np.ones(n, dtype=bool)

    report = TightnessReport()

    # Product relaxation: the journey clock only lower-bounds 1/v, so dwell
    # could in principle exceed the kinematic minimum.
    report.families.append(
        FamilyAudit(
            name="time_product",
            description="interval dwell equals distance over speed",
            rel_slack=np.abs(v * lam - 1.0),
            applicable=all_iv,
            threshold=tol,
        )
    )

    # Kinetic relaxation: the interval speed may undercut the arrival
    # squared-speed state.
    report.families.append(
        FamilyAudit(
            name="kinetic_link",
            description="interval speed squared equals the arrival state",
            rel_slack=np.abs(z - v**2) / np.maximum.reduce([z, v**2, np.full(n, 1e-9)]),
            applicable=all_iv,
            threshold=tol,
        )
    )

    # Supply-demand relaxation: generation may exceed the drive plus
    # auxiliary demand. Tight where shaving the battery force is possible.
    demand = (
        sm.p00 + sm.p10 * z + sm.p01 * sol.force_motor
        + sm.p20 * z**2 + sm.p02 * sol.force_motor**2
        + veh.power_aux * lam
    )
    supply = sol.force_fc + sol.force_batt
    p_lo, p_hi = batt.power_min, batt.power_max
    margin = interior_margin * (p_hi - p_lo) * lam
    interior = (fb > p_lo * lam + margin) & (fb < p_hi * lam - margin)
    report.families.append(
        FamilyAudit(
            name="demand_balance",
            description="generated supply equals drive and auxiliary demand",
            rel_slack=np.abs(supply - demand)
            / np.maximum(np.abs(sol.force_fc) + np.abs(fb) + veh.power_aux * lam, 1.0),
            applicable=interior,
            threshold=tol,
        )
    )

    # Battery throughput-loss cone, read from the program's own loss column.
    force_bound = np.maximum(p_hi, -p_lo) * lam
    loss_lhs = sb.alpha * sol.ds * fb**2
    report.families.append(
        FamilyAudit(
            name="battery_loss_cone",
            description="SOC loss equals the quadratic throughput loss",
            rel_slack=np.abs(sol.soc_loss * lam - loss_lhs)
            / np.maximum(loss_lhs, 1e-30),
            applicable=np.abs(fb) > force_active_frac * force_bound,
            threshold=tol_battery,
        )
    )

    # Thermal families: only priced when the temperature cap binds.
    t_dep = sol.temp_nodes()[:-1]
    t_arr = sol.temp_nodes()[1:]
    thermal_active = (t_dep >= batt.temp_max - temp_active_atol) | (
        t_arr >= batt.temp_max - temp_active_atol
    )
    bilinear = batt.cooling_coeff * t_dep * lam
    report.families.append(
        FamilyAudit(
            name="cooling_credit",
            description="convection credit equals the bilinear heat flow",
            rel_slack=np.abs(bilinear - sol.cool_rate) / np.maximum(bilinear, 1e-9),
            applicable=thermal_active,
            threshold=None,
        )
    )

    split_pad = np.abs(sol.force_dis - np.maximum(fb, 0.0))
    split_den = np.maximum(np.abs(fb), force_active_frac * force_bound)
    report.families.append(
        FamilyAudit(
            name="discharge_split",
            description="discharge component equals the positive battery force",
            rel_slack=split_pad / split_den,
            applicable=thermal_active,
            threshold=None,
        )
    )
    report.families.append(
        FamilyAudit(
            name="charge_split",
            description="charge component equals the negative battery force",
            rel_slack=np.abs(np.minimum(fb, 0.0) - sol.force_chr) / split_den,
            applicable=thermal_active,
            threshold=None,
        )
    )
    return report


# ---------------------------------------------------------------------------
# exact forward simulation


@dataclass
class SimulationReport:
    """Exact-model replay of the force commands, with divergence metrics.

    Arrays are per interval at arrival positions; ``temp_peak`` tracks the
    sub-step maximum, not just node values. ``fuel_joules`` is hydrogen
    energy alone, ``cost_joules`` adds the weighted active-cooling effort so
    it compares against the optimizer objective. ``max_temp_div`` compares
    against :func:`model_temperature` rather than the raw solver nodes,
    which carry free slack wherever the temperature cap is inactive.
    """

    speed_end: np.ndarray
    soc_end: np.ndarray
    temp_end: np.ndarray
    time_end: np.ndarray
    fuel_joules: float
    cooling_joules: float
    cost_joules: float
    temp_peak: float
    hold_distance_m: float
    max_speed_div: float
    rel_speed_div: float
    max_soc_div: float
    soc_end_drift: float
    max_temp_div: float
    temp_overshoot: float
    time_rel_err: float
    cost_rel_err: float

    def to_dict(self) -> dict:
        return {
            "total_time_s": float(self.time_end[-1]),
            "fuel_joules": self.fuel_joules,
            "cooling_joules": self.cooling_joules,
            "cost_joules": self.cost_joules,
            "temp_peak_k": self.temp_peak,
            "hold_distance_m": self.hold_distance_m,
            "max_speed_div_mps": self.max_speed_div,
            "rel_speed_div": self.rel_speed_div,
            "max_soc_div": self.max_soc_div,
            "soc_end_drift": self.soc_end_drift,
            "max_temp_div_k": self.max_temp_div,
            "temp_overshoot_k": self.temp_overshoot,
            "time_rel_err": self.time_rel_err,
            "cost_rel_err": self.cost_rel_err,
        }

    def format_table(self) -> str:
        rows = [
            ("journey time", f"{self.time_end[-1]:.3f} s", f"rel err {self.time_rel_err:.2e}"),
            ("journey cost", f"{self.cost_joules:.6e} J", f"rel err {self.cost_rel_err:.2e}"),
            ("hydrogen energy", f"{self.fuel_joules:.6e} J", ""),
            ("speed divergence", f"{self.max_speed_div:.4f} m/s", f"rel {self.rel_speed_div:.2e}"),
            ("SOC divergence", f"{self.max_soc_div:.3e}", f"end drift {self.soc_end_drift:.3e}"),
            ("temp divergence", f"{self.max_temp_div:.4f} K", f"peak {self.temp_peak:.2f} K"),
            ("temp cap overshoot", f"{self.temp_overshoot:.4f} K", ""),
            ("brake-hold distance", f"{self.hold_distance_m:.3f} m", ""),
        ]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{a:<{width}}  {b:>16}  {c}" for a, b, c in rows)


def _soc_rate(batt: BatteryParams, power: float) -> float:
    # SOC drop per second at constant terminal power (positive discharging).
    return exact_delta_soc(batt, power, 1.0)


def _integrate_interval(
    sol: SolutionTrajectory,
    inst: ProblemInstance,
    i: int,
    z: float,
    clock: float,
    soc: float,
    temp: float,
    substeps: int,
) -> tuple[float, float, float, float, float, float, float]:
    """Advance one interval under its commands with the exact models.

    Returns ``(z, clock, soc, temp, fuel_used, hold_added, temp_peak)`` where
    fuel and hold distance are this interval's contributions and the peak is
    the sub-step maximum temperature seen. Stop intervals are stationary
    dwells; running intervals integrate in space with classical fourth-order
    Runge-Kutta, with the mechanical brake released at the crawl floor.
    """
    veh = inst.components.vehicle
    batt = inst.components.battery
    fc_map = inst.components.fuelcell_map
    track = inst.track
    journey = inst.journey
    h_cool = batt.cooling_coeff
    c_th = batt.thermal_capacity
    m_eq = veh.mass_equiv
    v_stop = math.sqrt(journey.stop_speed_sq)
    z_hold = max(journey.min_speed**2, 1e-6)

    f_m = float(sol.force_motor[i])
    f_brk = float(sol.force_brake[i])
    f_fc = float(sol.force_fc[i])
    f_b = float(sol.force_batt[i])
    f_act = float(sol.force_cool[i])
    ds = float(sol.ds[i])

    if sol.is_stop[i]:
        dwell = float(sol.dwell[i])
        p_b = f_b * v_stop
        heat = abs(p_b) * (1.0 - exact_battery_efficiency(batt, p_b))
        soc -= _soc_rate(batt, p_b) * dwell
        temp += (heat - h_cool * (temp - batt.temp_ambient) - f_act * v_stop) * dwell / c_th
        fuel_used = exact_fuel_force(fc_map, f_fc, v_stop) * ds
        return journey.stop_speed_sq, clock + dwell, soc, temp, fuel_used, 0.0, temp

    grade_force = veh.mass * veh.gravity * math.sin(inst.grid.gradients()[i])

    def deriv(y: np.ndarray) -> np.ndarray:
        # Stage speeds never drop below the crawl floor: sub-floor states
        # only occur transiently under brake modulation.
        z_c, _, _, t_c, _ = y
        v_c = math.sqrt(max(z_c, z_hold))
        drag = track.davis_a + track.davis_b * v_c + track.davis_c * v_c * v_c
        p_b = f_b * v_c
        heat = abs(p_b) * (1.0 - exact_battery_efficiency(batt, p_b))
        return np.array(
            [
                2.0 * (f_m + f_brk - drag - grade_force) / m_eq,
                1.0 / v_c,
                -_soc_rate(batt, p_b) / v_c,
                (heat - h_cool * (t_c - batt.temp_ambient) - f_act * v_c) / (c_th * v_c),
                exact_fuel_force(fc_map, f_fc, v_c),
            ]
        )

    y = np.array([z, clock, soc, temp, 0.0])
    h = ds / substeps
    hold_added = 0.0
    temp_peak = temp
    for _ in range(substeps):
        k1 = deriv(y)
        k2 = deriv(y + 0.5 * h * k1)
        k3 = deriv(y + 0.5 * h * k2)
        k4 = deriv(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if y[0] < z_hold:
            if f_brk >= -1e-6:
                v_f = math.sqrt(z_hold)
                net = f_m + f_brk - (
                    track.davis_a + track.davis_b * v_f + track.davis_c * z_hold
                ) - grade_force
                if net <= 0.0:
                    raise SpeedCollapseError(
                        f"simulated speed collapsed inside interval {i} "
                        f"(s = {sol.s[i]:.1f} m): commands cannot sustain motion"
                    )
            else:
                hold_added += h
            y[0] = z_hold
        temp_peak = max(temp_peak, float(y[3]))
    z, clock, soc, temp, fuel_used = (float(val) for val in y)
    return z, clock, soc, temp, fuel_used, hold_added, temp_peak


def model_temperature(sol: SolutionTrajectory, inst: ProblemInstance) -> np.ndarray:
    """Battery temperature implied by the planned controls, at the nodes.

    The optimizer's own temperature trajectory is determinate only where the
    temperature cap binds: below the cap the convection credit is a relaxed
    inequality, so the solver may book any temperature between the implied
    one and the cap without affecting cost. This recursion removes that
    freedom by propagating the planned heat terms with convection taken at
    its modeled value ``h * T * lambda``, which is the reference the
    simulation divergence is measured against.
    """
    batt = inst.components.battery
    c_th = batt.thermal_capacity
    h = batt.cooling_coeff
    n = sol.n
    temps = np.empty(n + 1)
    temps[0] = inst.journey.initial_temp
    for i in range(n):
        heat = (1.0 - batt.eta_discharge) * sol.force_dis[i] - (
            1.0 - batt.eta_charge
        ) * sol.force_chr[i]
        lam = sol.inv_speed[i]
        flow = heat - h * (temps[i] - batt.temp_ambient) * lam - sol.force_cool[i]
        temps[i + 1] = temps[i] + sol.ds[i] * flow / c_th
    return temps


def forward_simulate(
    sol: SolutionTrajectory,
    inst: ProblemInstance,
    *,
    substeps: int = 10,
) -> SimulationReport:
    """Replay the solution's force commands through the exact models.

    Controls (motor, brake, generation split, active cooling) are held
    constant over each interval; states are integrated in space with
    classical fourth-order Runge-Kutta at ``substeps`` stages per interval.
    Stop intervals are stationary dwells: the train holds the crawl speed for
    the encoded dwell time while the power commands keep flowing, so drag and
    drive forces do not apply there.

    The mechanical brake is a one-sided actuator: on a stop approach the
    commanded force is released once the crawl speed floor is reached, so a
    small model mismatch cannot drive the simulated speed negative. The
    distance covered under that brake modulation is reported as
    ``hold_distance_m``. A collapse with no brake commanded (the drive force
    genuinely cannot sustain motion) raises :class:`SpeedCollapseError`;
    a battery power command beyond the equivalent circuit's validity limit
    raises :class:`~hytrain.errors.ComponentError`.
    """
    if substeps < 1:
        raise ConfigError("substeps must be at least 1")
    batt = inst.components.battery
    journey = inst.journey
    n = sol.n

    v_stop = math.sqrt(journey.stop_speed_sq)
    z = journey.initial_speed_sq
    soc = journey.initial_soc
    temp = journey.initial_temp
    clock = 0.0
    fuel = 0.0
    cooling = 0.0
    temp_peak = temp
    hold_distance = 0.0

    speed_end = np.empty(n)
    soc_end = np.empty(n)
    temp_end = np.empty(n)
    time_end = np.empty(n)

    for i in range(n):
        z, clock, soc, temp, fuel_used, hold_added, peak = _integrate_interval(
            sol, inst, i, z, clock, soc, temp, substeps
        )
        fuel += fuel_used
        cooling += float(sol.force_cool[i]) * float(sol.ds[i])
        hold_distance += hold_added
        temp_peak = max(temp_peak, peak)
        speed_end[i] = v_stop if sol.is_stop[i] else math.sqrt(z)
        soc_end[i] = soc
        temp_end[i] = temp
        time_end[i] = clock

    running = ~sol.is_stop
    speed_div = np.abs(speed_end - sol.speed)
    v_bar = float(np.mean(sol.speed[running])) if np.any(running) else v_stop
    cost = fuel + inst.cooling_weight * cooling
    obj = float(sol.objective)
    return SimulationReport(
        speed_end=speed_end,
        soc_end=soc_end,
        temp_end=temp_end,
        time_end=time_end,
        fuel_joules=fuel,
        cooling_joules=cooling,
        cost_joules=cost,
        temp_peak=temp_peak,
        hold_distance_m=hold_distance,
        max_speed_div=float(np.max(speed_div)),
        rel_speed_div=float(np.max(speed_div)) / v_bar,
        max_soc_div=float(np.max(np.abs(soc_end - sol.soc_end))),
        soc_end_drift=abs(float(soc_end[-1]) - journey.initial_soc),
        max_temp_div=float(np.max(np.abs(temp_end - model_temperature(sol, inst)[1:]))),
        temp_overshoot=max(temp_peak - batt.temp_max, 0.0),
        time_rel_err=abs(float(time_end[-1]) - journey.target_time)
        / journey.target_time,
        cost_rel_err=abs(cost - obj) / obj if obj > 0.0 else math.inf,
    )


def stagewise_replay(
    sol: SolutionTrajectory,
    inst: ProblemInstance,
    *,
    substeps: int = 10,
) -> dict:
    """Integrate each interval alone from the solution's own entry state.

    Unlike :func:`forward_simulate`, divergence does not accumulate along the
    route: every interval restarts from the states the solution claims at its
    entry node, so the reported deviations measure the fidelity of the
    per-interval transition model itself. Returns the exact-model arrival
    arrays and the largest absolute deviation per state.
    """
    if substeps < 1:
        raise ConfigError("substeps must be at least 1")
    journey = inst.journey
    n = sol.n
    z_nodes = sol.speed_sq_nodes()
    soc_nodes = sol.soc_nodes()
    temp_nodes = sol.temp_nodes()
    t_nodes = np.concatenate([[0.0], sol.time_end])

    speed_end = np.empty(n)
    soc_end = np.empty(n)
    temp_end = np.empty(n)
    time_end = np.empty(n)
    for i in range(n):
        z, clock, soc, temp, _, _, _ = _integrate_interval(
            sol, inst, i, float(z_nodes[i]), float(t_nodes[i]),
            float(soc_nodes[i]), float(temp_nodes[i]), substeps,
        )
        speed_end[i] = math.sqrt(journey.stop_speed_sq) if sol.is_stop[i] else math.sqrt(z)
        soc_end[i] = soc
        temp_end[i] = temp
        time_end[i] = clock
    return {
        "speed_end": speed_end,
        "soc_end": soc_end,
        "temp_end": temp_end,
        "time_end": time_end,
        "max_speed_div": float(
            np.max(np.abs(speed_end - np.sqrt(np.maximum(sol.speed_sq_end, 0.0))))
        ),
        "max_soc_div": float(np.max(np.abs(soc_end - sol.soc_end))),
        "max_temp_div": float(np.max(np.abs(temp_end - sol.temp_end))),
        "max_time_div": float(np.max(np.abs(time_end - sol.time_end))),
    }


def zero_stop_comparison(
    sol: SolutionTrajectory,
    inst: ProblemInstance,
    *,
    substeps: int = 10,
) -> dict:
    """Compare the stop emulation against truly parking the train.

    The solution encodes each station stop as a short fictitious interval
    crawled at the stop speed, with energy accounted per meter. Zeroing those
    speeds means the train actually parks: each stop contributes its dwell
    time directly and the components run at their commanded powers
    (force times crawl speed) for that long, plus the kinetic energy of
    re-accelerating to the crawl speed, priced through the peak-efficiency
    path. Returns the relative journey-time and fuel changes, which bound
    the bookkeeping cost of the emulation.
    """
    base = forward_simulate(sol, inst, substeps=substeps)
    batt = inst.components.battery
    fc_map = inst.components.fuelcell_map
    journey = inst.journey
    v_stop = math.sqrt(journey.stop_speed_sq)

    time_zero = 0.0
    fuel_zero = 0.0
    spinup = 0.5 * inst.components.vehicle.mass_equiv * journey.stop_speed_sq
    eta_path = float(
        np.max(inst.components.motor_map.table) * np.max(fc_map.table)
    )
    for i in range(sol.n):
        if sol.is_stop[i]:
            dwell = float(sol.dwell[i])
            p_fc = float(sol.force_fc[i]) * v_stop
            eta = fc_map.lookup(p_fc, v_stop)
            time_zero += dwell
            fuel_zero += p_fc / eta * dwell + spinup / eta_path
        else:
            time_zero += float(base.time_end[i]) - (
                float(base.time_end[i - 1]) if i else 0.0
            )
    # Running-interval fuel equals the base simulation minus its stop share.
    stop_fuel_base = sum(
        exact_fuel_force(fc_map, float(sol.force_fc[i]), v_stop) * float(sol.ds[i])
        for i in range(sol.n)
        if sol.is_stop[i]
    )
    fuel_zero += base.fuel_joules - stop_fuel_base
    time_base = float(base.time_end[-1])
    return {
        "time_base_s": time_base,
        "time_zeroed_s": time_zero,
        "fuel_base_j": base.fuel_joules,
        "fuel_zeroed_j": fuel_zero,
        "time_rel_change": abs(time_zero - time_base) / time_base,
        "fuel_rel_change": abs(fuel_zero - base.fuel_joules) / base.fuel_joules,
    }

"""Second-order cone program assembly for the journey optimization.

The decision space discretizes the journey into ``N`` consecutive spatial
intervals with states at the ``N + 1`` nodes (squared speed, battery state of
charge, battery temperature) and per-interval controls (motor force, friction
brake force, fuel-cell force, battery force, active-cooling effort) plus
per-interval auxiliaries (speed, reciprocal speed, two battery-loss helpers,
state increments, and the discharge/charge split of the battery force). All
powers are expressed as energies per meter ("forces"), which is what makes
the time-indexed power models convex over space.

Nonconvex relations enter as relaxations chosen so that cost pressure makes
them tight at the optimum:

* ``speed * inv_speed >= 1`` and ``speed^2 <= speed_sq`` as rotated cones,
* electrical demand below supply through a convex quadratic demand surrogate,
* a battery-loss cone coupling the state-of-charge drop with speed,
* convective cooling credit bounded by two per-interval McCormick planes
  over a temperature/reciprocal-speed box.

The McCormick planes minorize the bilinear cooling term, so the model never
claims more convective cooling than physically available; their quality is
controlled by how tight each interval's box is. The builder therefore bounds
each interval's reciprocal speed by a reachability sweep (braking/accelerating
limits propagated from the station pins) times a crawl ratio, and the solve
layer can pass refined caps from a previous solution.

The model co-optimizes the speed profile, the fuel-cell/battery power split,
and the battery thermal trajectory in a single program whose objective is
hydrogen energy plus weighted active-cooling effort.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .components import ComponentSet
from .errors import ConfigError, InfeasibleError, TrackFormatError
from .surrogates import SurrogateSet
from .track import JourneySpec, SpatialGrid, TrackProfile, min_time_estimate

__all__ = [
    "VariableLayout", "BuildOptions", "ProblemInstance", "LinRow", "SocBlock",
    "McCormickRow", "mccormick_cooling_rows", "ConeProgram", "build",
    "evaluate_objective", "reach_speed_sq_caps", "min_time_estimate",
]

STATE_BLOCKS = ("speed_sq", "soc", "temp")
CONTROL_BLOCKS = ("force_motor", "force_brake", "force_fc", "force_batt", "force_cool")
AUX_BLOCKS = (
    "speed", "inv_speed", "soc_loss", "cool_rate",
    "d_soc", "d_temp", "force_dis", "force_chr",
)


class VariableLayout:
    """Column layout of the decision vector.

    States occupy ``N + 1`` columns each (one per node), controls and
    auxiliaries ``N`` each (one per interval). Blocks are laid out in the
    order states, controls, auxiliaries; the objective's epigraph helpers are
    appended by the builder after :attr:`total`.
    """

    def __init__(self, n_intervals: int) -> None:
        if n_intervals < 1:
            raise ConfigError(f"need at least one interval, got {n_intervals}")
        self.n = n_intervals
        self._offsets: dict[str, tuple[int, int]] = {}
        cursor = 0
        for name in STATE_BLOCKS:
            self._offsets[name] = (cursor, n_intervals + 1)
            cursor += n_intervals + 1
        for name in CONTROL_BLOCKS + AUX_BLOCKS:
            self._offsets[name] = (cursor, n_intervals)
            cursor += n_intervals
        self.total = cursor

    def idx(self, name: str, i: int) -> int:
        start, count = self._offsets[name]
        if not (0 <= i < count):
            raise IndexError(f"{name}[{i}] out of range (block has {count} entries)")
        return start + i

    def block(self, name: str) -> tuple[int, int]:
        """(offset, count) of a named block."""
        return self._offsets[name]

    def values(self, name: str, x: np.ndarray) -> np.ndarray:
        start, count = self._offsets[name]
        return np.asarray(x[start : start + count])


@dataclass(frozen=True)
class BuildOptions:
    """Knobs of the cone assembly that are not journey physics.

    ``temp_floor`` tightens the temperature box used by the McCormick planes
    (default: min of initial and ambient temperature, which no optimal
    trajectory can undercut). ``crawl_ratio`` caps each running interval's
    reciprocal speed at that multiple of its reachability floor; it is an
    explicit engineering bound (no mid-route crawling slower than the
    reachable top speed divided by the ratio) that keeps the cooling planes
    meaningful. ``inv_speed_caps`` overrides the per-interval caps, which the
    solve layer uses to refine the cooling boxes around a first solution;
    ``refine_margin`` is the relative headroom that refinement leaves above
    the observed reciprocal speeds. ``selection_weight`` scales tiny objective terms that pin down otherwise
    cost-neutral auxiliaries (the battery-force split and the cooling-rate
    helper) without moving the optimum. ``feasibility_screen`` rejects target
    times below the quick lower bound before calling the solver.
    """

    temp_floor: float | None = None
    crawl_ratio: float = 3.0
    inv_speed_caps: tuple[float, ...] | None = None
    refine_margin: float = 0.3
    selection_weight: float = 1e-6
    feasibility_screen: bool = True

    def __post_init__(self) -> None:
        if self.crawl_ratio < 1.0:
            raise ConfigError(f"crawl_ratio must be >= 1, got {self.crawl_ratio}")
        if self.refine_margin < 0.0:
            raise ConfigError("refine_margin must be nonnegative")
        if self.selection_weight < 0.0:
            raise ConfigError("selection_weight must be nonnegative")


@dataclass(frozen=True)
class ProblemInstance:
    """One fully specified journey optimization problem."""

    track: TrackProfile
    grid: SpatialGrid
    journey: JourneySpec
    components: ComponentSet
    surrogates: SurrogateSet
    cooling_weight: float = 1.0
    options: BuildOptions = field(default_factory=BuildOptions)

    def __post_init__(self) -> None:
        grid, journey = self.grid, self.journey
        batt, veh = self.components.battery, self.components.vehicle
        if grid.n == 0:
            raise TrackFormatError("grid has no intervals")
        if not grid.ends_at_stop():
            raise TrackFormatError(
                "journey must end at a station: add a terminal station with a positive dwell"
            )
        if abs(grid.stop_speed_sq - journey.stop_speed_sq) > 1e-12:
            raise ConfigError(
                f"grid stop_speed_sq {grid.stop_speed_sq} differs from journey "
                f"stop_speed_sq {journey.stop_speed_sq}"
            )
        if any(iv.is_stop for iv in grid.intervals) and (
            journey.min_speed > math.sqrt(journey.stop_speed_sq) + 1e-12
        ):
            raise ConfigError(
                "min_speed above the crawl speed makes stop intervals infeasible"
            )
        if not (journey.min_speed**2 <= journey.initial_speed_sq + 1e-12):
            raise ConfigError(
                f"initial_speed_sq {journey.initial_speed_sq} below the speed floor"
            )
        if journey.initial_speed_sq > grid.intervals[0].speed_limit**2 + 1e-9:
            raise ConfigError("initial_speed_sq above the first interval's speed limit")
        if not (batt.soc_min <= journey.initial_soc <= batt.soc_max):
            raise ConfigError(
                f"initial_soc {journey.initial_soc} outside the battery window "
                f"[{batt.soc_min}, {batt.soc_max}]"
            )
        if journey.initial_temp > batt.temp_max + 1e-9:
            raise ConfigError("initial_temp above the battery temperature cap")
        if self.cooling_weight <= 0.0:
            raise ConfigError("cooling_weight must be positive")
        s = self.surrogates
        if s.motor.p11 != 0.0 or s.fuelcell.p11 != 0.0:
            raise ConfigError("cross-term surrogates are not supported by the cone builder")
        if min(s.motor.p20, s.motor.p02, s.fuelcell.p20, s.fuelcell.p02, s.battery.alpha) < 0.0:
            raise ConfigError("surrogates must be convex (nonnegative quadratic coefficients)")
        if s.battery.beta <= 0.0:
            raise ConfigError("battery surrogate slope must be positive")
        lo, hi = s.motor.domain_force
        if veh.force_motor_min < lo - 1e-6 or veh.force_motor_max > hi + 1e-6:
            raise ConfigError("motor surrogate domain does not cover the motor force window")
        plo, phi = s.battery.domain_power
        if batt.power_min < plo - 1e-6 or batt.power_max > phi + 1e-6:
            raise ConfigError("battery surrogate domain does not cover the battery power window")
        caps = self.options.inv_speed_caps
        if caps is not None and len(caps) != grid.n:
            raise ConfigError(
                f"inv_speed_caps has {len(caps)} entries for {grid.n} intervals"
            )

    @property
    def temp_floor(self) -> float:
        if self.options.temp_floor is not None:
            return self.options.temp_floor
        return min(self.journey.initial_temp, self.components.battery.temp_ambient)


@dataclass(frozen=True)
class LinRow:
    """One linear row: ``sum(vals * x[cols]) (= or <=) rhs``."""

    cols: tuple[int, ...]
    vals: tuple[float, ...]
    rhs: float
    family: str
    interval: int = -1

    def value(self, x: np.ndarray) -> float:
        return float(sum(v * x[c] for c, v in zip(self.cols, self.vals)))


@dataclass(frozen=True)
class SocBlock:
    """One second-order cone block ``u = rows(x)``, ``u[0] >= ||u[1:]||``.

    Each row is ``(cols, vals, const)`` evaluating to ``vals @ x[cols] + const``.
    """

    rows: tuple[tuple[tuple[int, ...], tuple[float, ...], float], ...]
    family: str
    interval: int

    def value(self, x: np.ndarray) -> np.ndarray:
        return np.array(
            [sum(v * x[c] for c, v in zip(cols, vals)) + const
             for cols, vals, const in self.rows]
        )

    def margin(self, x: np.ndarray) -> float:
        u = self.value(x)
        return float(u[0] - np.linalg.norm(u[1:]))


@dataclass(frozen=True)
class McCormickRow:
    """Plane ``cool_rate <= coef_inv_speed * inv_speed + coef_temp * temp + rhs``."""

    coef_inv_speed: float
    coef_temp: float
    rhs: float
    corner: tuple[float, float]


def mccormick_cooling_rows(
    temp_bounds: tuple[float, float],
    inv_speed_bounds: tuple[float, float],
    cooling_coeff: float,
) -> list[McCormickRow]:
    """Minorant planes for ``h * temp * inv_speed`` on a box.

    Returns the planes anchored at the (low, low) and (high, high) corners of
    the ``temp x inv_speed`` box. Each lies below the bilinear surface
    everywhere on the box and touches it along its corner's edges, so using
    them as upper bounds on the cooling credit is a conservative restriction
    that never overstates the physically available convection. A degenerate
    box collapses the planes and duplicates are dropped.
    """
    t_lo, t_hi = temp_bounds
    l_lo, l_hi = inv_speed_bounds
    if t_lo > t_hi or l_lo > l_hi:
        raise ConfigError(
            f"empty McCormick box: temp {temp_bounds}, inv_speed {inv_speed_bounds}"
        )
    h = cooling_coeff
    rows = []
    for t_c, l_c in ((t_lo, l_lo), (t_hi, l_hi)):
        rows.append(
            McCormickRow(
                coef_inv_speed=h * t_c,
                coef_temp=h * l_c,
                rhs=-h * t_c * l_c,
                corner=(t_c, l_c),
            )
        )
    if len(rows) == 2 and rows[0] == rows[1]:
        rows.pop()
    return rows


def reach_speed_sq_caps(inst: ProblemInstance) -> np.ndarray:
    """Per-node upper bounds on the squared speed implied by the constraints.

    Propagates the largest possible kinetic-energy gain forward from the
    start and the largest possible braking backward from every station pin,
    ignoring resistance terms that can only slow the train down. Every
    feasible trajectory satisfies these caps, so they can shrink the
    McCormick boxes without cutting solutions.
    """
    grid, journey, veh = inst.grid, inst.journey, inst.components.vehicle
    track = inst.track
    n = grid.n
    ds = grid.widths()
    stop = grid.stop_mask()
    limits = grid.limits()
    v_stop_sq = journey.stop_speed_sq
    limit_eff = np.where(stop, np.minimum(limits, math.sqrt(v_stop_sq)), limits)
    grade_force = veh.mass * veh.gravity * np.sin(grid.gradients())

    cap = np.empty(n + 1)
    cap[0] = min(journey.initial_speed_sq, limit_eff[0] ** 2)
    for k in range(1, n + 1):
        node_cap = limit_eff[k - 1] ** 2 if k == n else min(limit_eff[k - 1], limit_eff[k]) ** 2
        prev = cap[k - 1]
        if stop[k - 1]:
            gain = 0.0
        else:
            push = veh.force_motor_max - grade_force[k - 1]
            push += max(0.0, -track.davis_b) * limit_eff[k - 1]
            gain = (2.0 * ds[k - 1] / veh.mass_equiv) * max(push, 0.0)
        cap[k] = min(node_cap, prev + gain)
        if stop[k - 1] or (k < n and stop[k]):
            cap[k] = min(cap[k], v_stop_sq)
    for k in range(n - 1, -1, -1):
        if stop[k]:
            brake_gain = 0.0
        else:
            decel = (
                -veh.force_motor_min
                - veh.force_brake_min
                + track.davis_a
                + max(track.davis_b, 0.0) * limit_eff[k]
                + track.davis_c * limit_eff[k] ** 2
                + max(grade_force[k], 0.0)
            )
            brake_gain = (2.0 * ds[k] / veh.mass_equiv) * max(decel, 0.0)
        cap[k] = min(cap[k], cap[k + 1] + brake_gain)
    return np.maximum(cap, journey.min_speed**2)


@dataclass
class ConeProgram:
    """Assembled program: ``min cost @ x + cost_const`` subject to the rows.

    ``eq_rows`` hold with equality, ``ineq_rows`` as ``<=``, and every
    :class:`SocBlock` value must lie in the second-order cone. The first
    :attr:`VariableLayout.total` columns follow the layout; the remaining
    ``n`` columns are the per-interval fuel-quadratic epigraph helpers.
    """

    layout: VariableLayout
    instance: ProblemInstance
    eq_rows: list[LinRow]
    ineq_rows: list[LinRow]
    soc_blocks: list[SocBlock]
    cost: np.ndarray
    cost_const: float
    inv_speed_box: np.ndarray  # (n, 2): per-interval cooling-plane box

    @property
    def n_cols(self) -> int:
        return self.layout.total + self.layout.n

    def epigraph_idx(self, i: int) -> int:
        if not (0 <= i < self.layout.n):
            raise IndexError(f"epigraph index {i} out of range")
        return self.layout.total + i

    def family_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for row in self.eq_rows:
            counts[row.family] = counts.get(row.family, 0) + 1
        for row in self.ineq_rows:
            counts[row.family] = counts.get(row.family, 0) + 1
        for blk in self.soc_blocks:
            counts[blk.family] = counts.get(blk.family, 0) + 1
        return counts

    def export_text(self, path: str) -> None:
        """Write a human-readable listing of the assembled program."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"cols={self.n_cols} const={self.cost_const:.12g}\n")
            nz = np.nonzero(self.cost)[0]
            fh.write("min " + " + ".join(f"{self.cost[j]:.12g}*x{j}" for j in nz) + "\n")
            for kind, rows in (("eq", self.eq_rows), ("le", self.ineq_rows)):
                for row in rows:
                    terms = " + ".join(
                        f"{v:.12g}*x{c}" for c, v in zip(row.cols, row.vals)
                    )
                    op = "==" if kind == "eq" else "<="
                    fh.write(f"{row.family}[{row.interval}]: {terms} {op} {row.rhs:.12g}\n")
            for blk in self.soc_blocks:
                fh.write(f"soc {blk.family}[{blk.interval}]: dim={len(blk.rows)}\n")
                for cols, vals, const in blk.rows:
                    terms = " + ".join(f"{v:.12g}*x{c}" for c, v in zip(cols, vals))
                    fh.write(f"  {terms} + {const:.12g}\n")


def evaluate_objective(prog: ConeProgram, x: np.ndarray) -> float:
    """Journey cost of a solution: hydrogen energy plus weighted cooling.

    Evaluated directly from the fuel surrogate and the cooling column,
    independently of the solver's cost vector (which additionally carries
    epigraph helpers and tie-break terms).
    """
    inst = prog.instance
    lay = prog.layout
    ds = inst.grid.widths()
    z_arr = lay.values("speed_sq", x)[1:]
    f_fc = lay.values("force_fc", x)
    f_act = lay.values("force_cool", x)
    fc = inst.surrogates.fuelcell
    fuel = fc.p00 + fc.p10 * z_arr + fc.p01 * f_fc + fc.p20 * z_arr**2 + fc.p02 * f_fc**2
    return float(np.sum(ds * (fuel + inst.cooling_weight * f_act)))


def build(inst: ProblemInstance) -> ConeProgram:
    """Assemble the cone program for a problem instance.

    Raises :class:`InfeasibleError` when the target time undercuts the
    limit-speed lower bound (unless the screen is disabled in options).
    """
    grid, journey = inst.grid, inst.journey
    veh, batt = inst.components.vehicle, inst.components.battery
    mot, fc, bs = inst.surrogates.motor, inst.surrogates.fuelcell, inst.surrogates.battery
    track = inst.track
    n = grid.n
    lay = VariableLayout(n)

    if inst.options.feasibility_screen:
        floor = min_time_estimate(grid)
        if journey.target_time < floor * (1.0 - 1e-12):
            raise InfeasibleError(
                f"target time {journey.target_time:.3f} s below the minimum "
                f"time estimate {floor:.3f} s"
            )

    ds = grid.widths()
    grad = grid.gradients()
    limits = grid.limits()
    stop = grid.stop_mask()
    v_stop = math.sqrt(journey.stop_speed_sq)
    limit_eff = np.where(stop, np.minimum(limits, v_stop), limits)
    t_floor = inst.temp_floor

    # Per-interval reciprocal-speed boxes for the cooling planes. The floor
    # comes from reachability (always valid); the cap is enforced below.
    z_caps = reach_speed_sq_caps(inst)
    v_reach = np.minimum(limit_eff, np.sqrt(z_caps[1:]))
    inv_lo = 1.0 / np.maximum(v_reach, 1e-12)
    inv_hi = np.empty(n)
    for i in range(n):
        if stop[i]:
            inv_hi[i] = 1.0 / v_stop
            inv_lo[i] = 1.0 / v_stop
        else:
            inv_hi[i] = inst.options.crawl_ratio * inv_lo[i]
            if inst.options.inv_speed_caps is not None:
                inv_hi[i] = min(inv_hi[i], inst.options.inv_speed_caps[i])
            inv_hi[i] = min(inv_hi[i], 1.0 / journey.min_speed)
            inv_hi[i] = max(inv_hi[i], inv_lo[i])

    eq: list[LinRow] = []
    ineq: list[LinRow] = []
    blocks: list[SocBlock] = []

    def E(cols, vals, rhs, family, interval=-1):
        eq.append(LinRow(tuple(cols), tuple(float(v) for v in vals), float(rhs), family, interval))

    def I(cols, vals, rhs, family, interval=-1):
        ineq.append(LinRow(tuple(cols), tuple(float(v) for v in vals), float(rhs), family, interval))

    # --- initial node states
    E([lay.idx("speed_sq", 0)], [1.0], journey.initial_speed_sq, "initial_state")
    E([lay.idx("soc", 0)], [1.0], journey.initial_soc, "initial_state")
    E([lay.idx("temp", 0)], [1.0], journey.initial_temp, "initial_state")

    # --- per-interval dynamics (rows scaled by 1/ds for conditioning)
    half_meq = 0.5 * veh.mass_equiv
    grade_force = veh.mass * veh.gravity * np.sin(grad)
    c_th = batt.thermal_capacity
    for i in range(n):
        zi, zn = lay.idx("speed_sq", i), lay.idx("speed_sq", i + 1)
        vi, li = lay.idx("speed", i), lay.idx("inv_speed", i)
        fm, fb = lay.idx("force_motor", i), lay.idx("force_brake", i)
        # Kinetic energy balance across the interval; stop intervals see no
        # running resistance because the train is practically stationary.
        if stop[i]:
            E([zn, zi, fm, fb], [half_meq / ds[i], -half_meq / ds[i], -1.0, -1.0],
              0.0, "kinetic", i)
        else:
            E(
                [zn, zi, fm, fb, vi],
                [half_meq / ds[i] + track.davis_c, -half_meq / ds[i], -1.0, -1.0, track.davis_b],
                -(track.davis_a + grade_force[i]),
                "kinetic", i,
            )

        # State-of-charge bookkeeping and its loss helper.
        E([lay.idx("soc", i + 1), lay.idx("soc", i), lay.idx("d_soc", i)],
          [1.0, -1.0, 1.0], 0.0, "soc_chain", i)
        E(
            [lay.idx("soc_loss", i), lay.idx("d_soc", i), lay.idx("force_batt", i)],
            [1.0, -1.0, bs.beta * ds[i]],
            0.0, "soc_loss_def", i,
        )

        # Thermal bookkeeping: heat generation from the split battery force,
        # ambient coupling through inv_speed, cooling credit, active cooling.
        E([lay.idx("temp", i + 1), lay.idx("temp", i), lay.idx("d_temp", i)],
          [1.0, -1.0, -1.0], 0.0, "temp_chain", i)
        E(
            [
                lay.idx("d_temp", i),
                lay.idx("force_dis", i),
                lay.idx("force_chr", i),
                lay.idx("cool_rate", i),
                li,
                lay.idx("force_cool", i),
            ],
            [
                c_th / ds[i],
                -(1.0 - batt.eta_discharge),
                (1.0 - batt.eta_charge),
                1.0,
                -batt.cooling_coeff * batt.temp_ambient,
                1.0,
            ],
            0.0, "thermal_balance", i,
        )

        # Battery force splits into nonnegative discharge and nonpositive
        # charge components.
        E(
            [lay.idx("force_dis", i), lay.idx("force_chr", i), lay.idx("force_batt", i)],
            [1.0, 1.0, -1.0],
            0.0, "batt_split", i,
        )

    # --- charge sustaining and the journey clock
    E([lay.idx("soc", n), lay.idx("soc", 0)], [1.0, -1.0], 0.0, "charge_sustain")
    E(
        [lay.idx("inv_speed", i) for i in range(n)],
        [ds[i] for i in range(n)],
        journey.target_time, "journey_time",
    )

    # --- station pins: squared speed held at crawl over each stop interval
    pinned: set[int] = set()
    for i in range(n):
        if stop[i]:
            pinned.add(i)
            pinned.add(i + 1)
    for k in sorted(pinned):
        E([lay.idx("speed_sq", k)], [1.0], journey.stop_speed_sq, "station_pin")

    # --- node bounds
    z_floor = journey.min_speed**2
    for k in range(n + 1):
        if k == 0:
            z_cap = limit_eff[0] ** 2
        elif k == n:
            z_cap = limit_eff[n - 1] ** 2
        else:
            z_cap = min(limit_eff[k - 1], limit_eff[k]) ** 2
        I([lay.idx("speed_sq", k)], [1.0], z_cap, "cap_speed_sq")
        I([lay.idx("speed_sq", k)], [-1.0], -z_floor, "floor_speed_sq")
        I([lay.idx("soc", k)], [1.0], batt.soc_max, "cap_soc")
        I([lay.idx("soc", k)], [-1.0], -batt.soc_min, "floor_soc")
        I([lay.idx("temp", k)], [1.0], batt.temp_max, "cap_temp")
        I([lay.idx("temp", k)], [-1.0], -t_floor, "floor_temp")

    # --- interval bounds and speed-dependent power windows
    for i in range(n):
        vi, li = lay.idx("speed", i), lay.idx("inv_speed", i)
        fm = lay.idx("force_motor", i)
        fbatt = lay.idx("force_batt", i)
        ffc = lay.idx("force_fc", i)
        I([vi], [1.0], limit_eff[i], "cap_speed", i)
        I([vi], [-1.0], -journey.min_speed, "floor_speed", i)
        I([li], [1.0], inv_hi[i], "cap_inv_speed", i)
        I([li], [-1.0], -inv_lo[i], "floor_inv_speed", i)
        I([fm], [1.0], veh.force_motor_max, "cap_force_motor", i)
        I([fm], [-1.0], -veh.force_motor_min, "floor_force_motor", i)
        I([lay.idx("force_brake", i)], [1.0], 0.0, "cap_force_brake", i)
        I([lay.idx("force_brake", i)], [-1.0], -veh.force_brake_min, "floor_force_brake", i)
        I([lay.idx("force_cool", i)], [1.0], batt.cooling_force_max, "cap_force_cool", i)
        I([lay.idx("force_cool", i)], [-1.0], 0.0, "floor_force_cool", i)
        I([lay.idx("soc_loss", i)], [-1.0], 0.0, "floor_soc_loss", i)
        I([lay.idx("cool_rate", i)], [-1.0], 0.0, "floor_cool_rate", i)
        I([lay.idx("force_dis", i)], [-1.0], 0.0, "floor_force_dis", i)
        I([lay.idx("force_chr", i)], [1.0], 0.0, "cap_force_chr", i)
        I([fm, li], [1.0, -veh.power_motor_max], 0.0, "power_motor_hi", i)
        I([fm, li], [-1.0, veh.power_motor_min], 0.0, "power_motor_lo", i)
        I([fbatt, li], [1.0, -batt.power_max], 0.0, "power_batt_hi", i)
        I([fbatt, li], [-1.0, batt.power_min], 0.0, "power_batt_lo", i)
        I([ffc, li], [1.0, -veh.power_fc_max], 0.0, "power_fc_hi", i)
        I([ffc, li], [-1.0, veh.power_fc_min], 0.0, "power_fc_lo", i)

        # Cooling planes over this interval's box.
        planes = mccormick_cooling_rows(
            (t_floor, batt.temp_max), (inv_lo[i], inv_hi[i]), batt.cooling_coeff
        )
        for row, fam in zip(planes, ("mccormick_lo", "mccormick_hi")):
            I(
                [lay.idx("cool_rate", i), li, lay.idx("temp", i)],
                [1.0, -row.coef_inv_speed, -row.coef_temp],
                row.rhs,
                fam, i,
            )

    # --- cone blocks
    # Each product or epigraph cone is written in a per-interval balanced
    # frame: both sides of the rotated form carry comparable magnitudes, so
    # the solver's residual budget spreads evenly instead of landing on the
    # small-valued member. The balance factors change coefficients only; the
    # feasible set is identical to the plain encoding.
    sq = math.sqrt
    for i in range(n):
        zn = lay.idx("speed_sq", i + 1)
        vi, li = lay.idx("speed", i), lay.idx("inv_speed", i)
        fm, ffc, fbatt = (
            lay.idx("force_motor", i), lay.idx("force_fc", i), lay.idx("force_batt", i),
        )
        kap = inv_lo[i]
        # speed * inv_speed >= 1, framed as (kap v)(lam / kap) >= 1
        blocks.append(SocBlock(
            rows=(
                ((vi, li), (kap, 1.0 / kap), 0.0),
                ((), (), 2.0),
                ((vi, li), (kap, -1.0 / kap), 0.0),
            ),
            family="time_recip", interval=i,
        ))
        # speed^2 <= speed_sq at the arrival node, framed on (kap v)^2 <= kap^2 z
        blocks.append(SocBlock(
            rows=(
                ((zn,), (kap * kap,), 1.0),
                ((vi,), (2.0 * kap,), 0.0),
                ((zn,), (kap * kap,), -1.0),
            ),
            family="speed_link", interval=i,
        ))
        # Motor demand + auxiliaries below fuel-cell + battery supply:
        # supply margin L >= p20 z^2 + p02 F_m^2
        z_bar = 1.0 / (inv_lo[i] * inv_lo[i])
        f_bar = max(veh.force_motor_max, -veh.force_motor_min)
        c_dem = sq(max(
            mot.p00 + abs(mot.p10) * z_bar + abs(mot.p01) * f_bar
            + mot.p20 * z_bar**2 + mot.p02 * f_bar**2,
            1.0,
        ))
        l_cols = (ffc, fbatt, zn, fm, li)
        l_vals = (1.0, 1.0, -mot.p10, -mot.p01, -veh.power_aux)
        l_const = -mot.p00
        blocks.append(SocBlock(
            rows=(
                (l_cols, tuple(v / c_dem for v in l_vals), c_dem + l_const / c_dem),
                ((zn,), (2.0 * sq(mot.p20),), 0.0),
                ((fm,), (2.0 * sq(mot.p02),), 0.0),
                (l_cols, tuple(-v / c_dem for v in l_vals), c_dem - l_const / c_dem),
            ),
            family="demand_balance", interval=i,
        ))
        # Battery loss cone: alpha * ds * F_batt^2 <= soc_loss * inv_speed
        f_b = max(max(batt.power_max, -batt.power_min) * inv_hi[i], 1.0)
        loss_ref = max(bs.alpha * ds[i] * f_b * f_b / inv_lo[i], 1e-12)
        k_loss = sq(inv_lo[i] / loss_ref)
        blocks.append(SocBlock(
            rows=(
                ((lay.idx("soc_loss", i), li), (k_loss, 1.0 / k_loss), 0.0),
                ((fbatt,), (2.0 * sq(bs.alpha * ds[i]),), 0.0),
                ((lay.idx("soc_loss", i), li), (k_loss, -1.0 / k_loss), 0.0),
            ),
            family="soc_loss_cone", interval=i,
        ))
        # Fuel epigraph: t_i >= p20' z^2 + p02' F_fc^2
        ti = lay.total + i
        f_fc_bar = veh.power_fc_max * inv_hi[i]
        c_fuel = sq(max(
            abs(fc.p10) * z_bar + abs(fc.p01) * f_fc_bar
            + fc.p20 * z_bar**2 + fc.p02 * f_fc_bar**2,
            1.0,
        ))
        blocks.append(SocBlock(
            rows=(
                ((ti,), (1.0 / c_fuel,), c_fuel),
                ((zn,), (2.0 * sq(fc.p20),), 0.0),
                ((ffc,), (2.0 * sq(fc.p02),), 0.0),
                ((ti,), (-1.0 / c_fuel,), c_fuel),
            ),
            family="fuel_epigraph", interval=i,
        ))

    # --- objective
    cost = np.zeros(lay.total + n)
    cost_const = 0.0
    w_sel = inst.options.selection_weight * max(abs(fc.p01), 1e-3)
    for i in range(n):
        cost[lay.total + i] += ds[i]
        cost[lay.idx("speed_sq", i + 1)] += ds[i] * fc.p10
        cost[lay.idx("force_fc", i)] += ds[i] * fc.p01
        cost[lay.idx("force_cool", i)] += ds[i] * inst.cooling_weight
        cost_const += ds[i] * fc.p00
        # Tie-breaks: prefer the one-sided battery split and the largest
        # modeled cooling, both cost-neutral at the reported objective.
        cost[lay.idx("force_dis", i)] += w_sel * ds[i]
        cost[lay.idx("force_chr", i)] -= w_sel * ds[i]
        cost[lay.idx("cool_rate", i)] -= w_sel * ds[i]

    return ConeProgram(
        layout=lay,
        instance=inst,
        eq_rows=eq,
        ineq_rows=ineq,
        soc_blocks=blocks,
        cost=cost,
        cost_const=cost_const,
        inv_speed_box=np.column_stack([inv_lo, inv_hi]),
    )

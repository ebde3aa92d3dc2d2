"""Brute-force dynamic-programming oracle over the exact nonlinear models.

This module answers one question: how far from truly optimal is the convex
solution? It performs backward induction over a gridded state
(speed, state of charge, battery temperature, cumulative time) using the
same per-interval force balance as the cone program but with the exact
component models: table-lookup drive and fuel-cell efficiencies, square-root
battery current, variable-efficiency heat. No surrogate, no relaxation.

The search is deliberately restricted to stay auditable: nearest-cell state
indexing (no interpolation), arrival speeds enumerated on the speed grid
itself (each target speed defines the drive force needed to reach it, with
the mechanical brake as the one-sided residual), and a small generation
split grid. A restricted search can only overestimate the true optimum, so
the reported gap against the convex cost is conservative in the direction
that matters.

Intended for toy instances (a handful of intervals); the state cube at the
default resolutions holds about seven million cells per stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .components import (
    exact_battery_efficiency,
    exact_delta_soc,
    exact_fuel_force,
    exact_motor_demand,
)
from .errors import ComponentError, ConfigError, DpInfeasibleError
from .socp import ProblemInstance
from .solve import SolutionTrajectory

__all__ = ["DpConfig", "DpResult", "dp_solve", "gap_report"]


@dataclass(frozen=True)
class DpConfig:
    """Grid resolutions for the dynamic-programming search.

    State grids: ``n_speed`` points between the speed floor and the top
    route limit, ``n_soc`` over the battery window, ``n_temp`` between the
    temperature floor and cap, ``n_time`` between zero and the target time
    (so one time cell is ``target_time / (n_time - 1)``).

    Control grids: ``n_split`` generation-split fractions (fuel-cell share
    of the electric demand, clipped into the fuel-cell power window) and
    ``n_cool`` active-cooling levels. The drive force has no separate grid:
    the speed grid doubles as its enumeration, since each reachable arrival
    speed determines the required net force.
    """

    n_speed: int = 41
    n_soc: int = 41
    n_temp: int = 21
    n_time: int = 201
    n_split: int = 7
    n_cool: int = 2
    max_intervals: int = 20

    def __post_init__(self) -> None:
        for name in ("n_speed", "n_soc", "n_temp", "n_time", "n_split", "n_cool"):
            if getattr(self, name) < 2:
                raise ConfigError(f"{name} must be at least 2, got {getattr(self, name)}")
        if not (1 <= self.max_intervals <= 20):
            raise ConfigError(
                f"max_intervals must lie in [1, 20], got {self.max_intervals}"
            )


@dataclass
class DpResult:
    """Best gridded trajectory found by the backward induction."""

    cost: float
    speed_end: np.ndarray
    soc_end: np.ndarray
    temp_end: np.ndarray
    time_end: np.ndarray
    force_motor: np.ndarray
    force_brake: np.ndarray
    force_fc: np.ndarray
    force_batt: np.ndarray
    force_cool: np.ndarray
    speed_cell: float
    soc_cell: float
    temp_cell: float
    time_cell: float

    def to_dict(self) -> dict:
        return {
            "cost": self.cost,
            "total_time_s": float(self.time_end[-1]),
            "cells": {
                "speed_mps": self.speed_cell,
                "soc": self.soc_cell,
                "temp_k": self.temp_cell,
                "time_s": self.time_cell,
            },
        }

    def to_trajectory(self, inst: ProblemInstance) -> SolutionTrajectory:
        """Express the DP path in the common trajectory schema."""
        grid = inst.grid
        batt = inst.components.battery
        beta = inst.surrogates.battery.beta
        ds = grid.widths()
        inv_speed = 1.0 / self.speed_end
        d_soc = -np.diff(np.concatenate([[inst.journey.initial_soc], self.soc_end]))
        loss = np.maximum(d_soc - beta * ds * self.force_batt, 0.0)
        t_dep = np.concatenate([[inst.journey.initial_temp], self.temp_end])[:-1]
        return SolutionTrajectory(
            s=grid.starts(),
            ds=ds,
            is_stop=grid.stop_mask(),
            dwell=grid.dwells(),
            speed=self.speed_end.copy(),
            inv_speed=inv_speed,
            speed_sq_end=self.speed_end**2,
            soc_end=self.soc_end.copy(),
            temp_end=self.temp_end.copy(),
            time_end=self.time_end.copy(),
            force_motor=self.force_motor.copy(),
            force_brake=self.force_brake.copy(),
            force_fc=self.force_fc.copy(),
            force_batt=self.force_batt.copy(),
            force_cool=self.force_cool.copy(),
            force_dis=np.maximum(self.force_batt, 0.0),
            force_chr=np.minimum(self.force_batt, 0.0),
            soc_loss=loss,
            cool_rate=batt.cooling_coeff * t_dep * inv_speed,
            initial_speed_sq=inst.journey.initial_speed_sq,
            initial_soc=inst.journey.initial_soc,
            initial_temp=inst.journey.initial_temp,
            objective=self.cost,
        )


@dataclass(frozen=True)
class _Stage:
    ds: float
    is_stop: bool
    dwell: float
    grade_force: float
    arrival_cap: float


@dataclass(frozen=True)
class _Move:
    """One admissible (arrival speed, generation, cooling) choice."""

    iv_next: int
    fuel: float
    dt: float
    d_soc: float
    temp_gain: float  # T' = temp_decay * T + temp_gain
    temp_decay: float
    force_motor: float
    force_brake: float
    force_fc: float
    force_batt: float
    force_cool: float


def _nearest_map(grid: np.ndarray, values: np.ndarray, *, clip_low: bool) -> np.ndarray:
    """Nearest cell of each value; -1 marks values outside the grid span.

    ``clip_low`` snaps values below the first cell onto it instead, which the
    temperature dimension uses (cooling below the floor is harmless).
    """
    cell = grid[1] - grid[0]
    idx = np.rint((values - grid[0]) / cell).astype(np.int64)
    if clip_low:
        idx = np.maximum(idx, 0)
    bad = (idx < 0) | (idx >= len(grid))
    idx[bad] = -1
    return idx


def _stage_moves(
    inst: ProblemInstance,
    cfg: DpConfig,
    stage: _Stage,
    v_grid: np.ndarray,
    iv_crawl: int,
    iv_from: int,
) -> list[_Move]:
    """Enumerate admissible moves from a departure speed cell."""
    veh = inst.components.vehicle
    batt = inst.components.battery
    motor_map = inst.components.motor_map
    fc_map = inst.components.fuelcell_map
    track = inst.track
    h_cool = batt.cooling_coeff
    c_th = batt.thermal_capacity
    w_cool = inst.cooling_weight
    splits = np.linspace(0.0, 1.0, cfg.n_split)
    cools = np.linspace(0.0, batt.cooling_force_max, cfg.n_cool)
    moves: list[_Move] = []

    if stage.is_stop:
        if iv_from != iv_crawl:
            return moves
        v = v_grid[iv_crawl]
        dt = stage.dwell
        targets = [(iv_crawl, 0.0, 0.0)]
    else:
        v = v_grid[iv_from]
        dt = None
        targets = []
        z = v * v
        for iv2, v2 in enumerate(v_grid):
            if v2 > stage.arrival_cap + 1e-9:
                continue
            z2 = v2 * v2
            f_req = (
                0.5 * veh.mass_equiv * (z2 - z) / stage.ds
                + track.davis_a + track.davis_b * v2 + track.davis_c * z2
                + stage.grade_force
            )
            f_lo = max(veh.force_motor_min, veh.power_motor_min / v2)
            f_hi = min(veh.force_motor_max, veh.power_motor_max / v2)
            f_m = min(max(f_req, f_lo), f_hi)
            f_brk = f_req - f_m
            if f_brk > 1e-9 or f_brk < veh.force_brake_min - 1e-9:
                continue
            targets.append((iv2, f_m, min(f_brk, 0.0)))
            # Friction-only braking keeps the target reachable when the
            # battery cannot absorb the full regenerative power.
            if f_m < -1e-9 and veh.force_brake_min - 1e-9 <= f_req <= 0.0:
                targets.append((iv2, 0.0, f_req))

    for iv2, f_m, f_brk in targets:
        if stage.is_stop:
            v2 = v_grid[iv_crawl]
            demand = veh.power_aux / v2
            step_dt = dt
        else:
            v2 = v_grid[iv2]
            demand = exact_motor_demand(motor_map, f_m, v2) + veh.power_aux / v2
            step_dt = stage.ds / v2
        fc_lo = veh.power_fc_min / v2
        fc_hi = veh.power_fc_max / v2
        seen: set[float] = set()
        for sigma in splits:
            f_fc = min(max(sigma * demand, fc_lo), fc_hi)
            if f_fc in seen:
                continue
            seen.add(f_fc)
            f_b = demand - f_fc
            p_b = f_b * v2
            if not (batt.power_min - 1e-6 <= p_b <= batt.power_max + 1e-6):
                continue
            try:
                d_soc = exact_delta_soc(batt, p_b, step_dt)
            except ComponentError:
                continue
            heat = abs(p_b) * (1.0 - exact_battery_efficiency(batt, p_b))
            fuel_fc = exact_fuel_force(fc_map, f_fc, v2) * stage.ds
            decay = 1.0 - h_cool * step_dt / c_th
            for f_act in cools:
                gain = (heat + h_cool * batt.temp_ambient - f_act * v2) * step_dt / c_th
                moves.append(
                    _Move(
                        iv_next=iv2,
                        fuel=fuel_fc + w_cool * f_act * stage.ds,
                        dt=step_dt,
                        d_soc=d_soc,
                        temp_gain=gain,
                        temp_decay=decay,
                        force_motor=f_m,
                        force_brake=f_brk,
                        force_fc=f_fc,
                        force_batt=f_b,
                        force_cool=f_act,
                    )
                )
    return moves


def dp_solve(inst: ProblemInstance, cfg: DpConfig | None = None) -> DpResult:
    """Backward induction over the exact models on a small instance.

    The journey-time target and the charge-sustaining condition are enforced
    to within one time cell and one SOC cell respectively; the temperature
    cap is enforced at every node. Raises :class:`DpInfeasibleError` when no
    grid path survives, and :class:`~hytrain.errors.ConfigError` when the
    instance exceeds the interval cap.
    """
    cfg = cfg or DpConfig()
    grid = inst.grid
    journey = inst.journey
    batt = inst.components.battery
    n = grid.n
    if n > cfg.max_intervals:
        raise ConfigError(
            f"instance has {n} intervals, above the oracle cap {cfg.max_intervals}; "
            "use a coarser toy route"
        )

    v_floor = journey.min_speed if journey.min_speed > 0.0 else math.sqrt(journey.stop_speed_sq)
    limits = grid.limits()
    stop = grid.stop_mask()
    v_stop = math.sqrt(journey.stop_speed_sq)
    limit_eff = np.where(stop, np.minimum(limits, v_stop), limits)
    v_top = float(np.max(limit_eff))
    v_grid = np.linspace(v_floor, v_top, cfg.n_speed)
    soc_grid = np.linspace(batt.soc_min, batt.soc_max, cfg.n_soc)
    temp_grid = np.linspace(inst.temp_floor, batt.temp_max, cfg.n_temp)
    time_grid = np.linspace(0.0, journey.target_time, cfg.n_time)
    cells = (
        float(v_grid[1] - v_grid[0]),
        float(soc_grid[1] - soc_grid[0]),
        float(temp_grid[1] - temp_grid[0]),
        float(time_grid[1] - time_grid[0]),
    )
    iv_crawl = int(np.argmin(np.abs(v_grid - v_stop)))

    ds = grid.widths()
    grad = grid.gradients()
    veh = inst.components.vehicle
    stages = [
        _Stage(
            ds=float(ds[k]),
            is_stop=bool(stop[k]),
            dwell=float(grid.dwells()[k]),
            grade_force=veh.mass * veh.gravity * math.sin(grad[k]),
            arrival_cap=float(
                min(limit_eff[k], limit_eff[k + 1]) if k + 1 < n else limit_eff[k]
            ),
        )
        for k in range(n)
    ]

    # Terminal acceptance: pinned crawl speed, charge sustained to one SOC
    # cell, journey time to one time cell, any in-cap temperature. The SOC
    # window is one-sided at the bottom: a minimizing search would otherwise
    # bank the full cell as free discharge, which biases the reported cost
    # low by a cell's worth of fuel.
    shape = (cfg.n_speed, cfg.n_soc, cfg.n_temp, cfg.n_time)
    terminal = np.full(shape, np.inf, dtype=np.float32)
    ok_soc = (soc_grid >= journey.initial_soc - 0.25 * cells[1]) & (
        soc_grid <= journey.initial_soc + cells[1] + 1e-12
    )
    ok_time = np.abs(time_grid - journey.target_time) <= cells[3] + 1e-9
    terminal[np.ix_([iv_crawl], np.nonzero(ok_soc)[0], range(cfg.n_temp), np.nonzero(ok_time)[0])] = 0.0

    tables: list[np.ndarray] = [terminal]
    j_next = terminal
    nt_flat = cfg.n_soc * cfg.n_temp
    for k in range(n - 1, -1, -1):
        j_cur = np.full(shape, np.inf, dtype=np.float32)
        # Group moves by arrival cell so the time-shift gather runs once per
        # (arrival, dt) pair; the SOC/temperature remap is a row gather.
        per_from: list[list[_Move]] = [
            _stage_moves(inst, cfg, stages[k], v_grid, iv_crawl, iv_from)
            for iv_from in range(cfg.n_speed)
        ]
        gt_cache: dict[tuple[int, float], np.ndarray] = {}
        for iv_from, moves in enumerate(per_from):
            target = j_cur[iv_from]
            for mv in moves:
                key = (mv.iv_next, round(mv.dt, 12))
                gt = gt_cache.get(key)
                if gt is None:
                    it_map = _nearest_map(time_grid, time_grid + mv.dt, clip_low=False)
                    gt = np.where(
                        it_map >= 0,
                        j_next[mv.iv_next][:, :, np.maximum(it_map, 0)],
                        np.float32(np.inf),
                    ).reshape(nt_flat, cfg.n_time)
                    gt_cache[key] = gt
                iz_map = _nearest_map(soc_grid, soc_grid - mv.d_soc, clip_low=False)
                it_map2 = _nearest_map(
                    temp_grid, mv.temp_decay * temp_grid + mv.temp_gain, clip_low=True
                )
                rows = iz_map[:, None] * cfg.n_temp + it_map2[None, :]
                bad = (iz_map[:, None] < 0) | (it_map2[None, :] < 0)
                cand = mv.fuel + gt[np.maximum(rows, 0).ravel()].reshape(
                    cfg.n_soc, cfg.n_temp, cfg.n_time
                )
                if bad.any():
                    cand[bad] = np.inf
                np.minimum(target, cand, out=target)
        tables.append(j_cur)
        j_next = j_cur
    tables.reverse()  # tables[k] is the cost-to-go at node k

    iv = int(np.argmin(np.abs(v_grid - math.sqrt(journey.initial_speed_sq))))
    iz = int(np.argmin(np.abs(soc_grid - journey.initial_soc)))
    it_ = int(np.argmin(np.abs(temp_grid - journey.initial_temp)))
    ik = 0
    best = float(tables[0][iv, iz, it_, ik])
    if not math.isfinite(best):
        raise DpInfeasibleError(
            "no grid path satisfies the journey time, charge-sustaining and "
            "temperature constraints; loosen the schedule or refine the grids"
        )

    # Forward reconstruction: greedy argmin over the same move enumeration.
    speed_end = np.empty(n)
    soc_end = np.empty(n)
    temp_end = np.empty(n)
    time_end = np.empty(n)
    f_motor = np.empty(n)
    f_brake = np.empty(n)
    f_fc = np.empty(n)
    f_batt = np.empty(n)
    f_cool = np.empty(n)
    for k in range(n):
        moves = _stage_moves(inst, cfg, stages[k], v_grid, iv_crawl, iv)
        best_val = math.inf
        best_mv: _Move | None = None
        best_state = (iv, iz, it_, ik)
        for mv in moves:
            iz2 = int(
                _nearest_map(soc_grid, np.array([soc_grid[iz] - mv.d_soc]), clip_low=False)[0]
            )
            it2 = int(
                _nearest_map(
                    temp_grid,
                    np.array([mv.temp_decay * temp_grid[it_] + mv.temp_gain]),
                    clip_low=True,
                )[0]
            )
            ik2 = int(
                _nearest_map(time_grid, np.array([time_grid[ik] + mv.dt]), clip_low=False)[0]
            )
            if iz2 < 0 or it2 < 0 or ik2 < 0:
                continue
            val = mv.fuel + float(tables[k + 1][mv.iv_next, iz2, it2, ik2])
            if val < best_val:
                best_val = val
                best_mv = mv
                best_state = (mv.iv_next, iz2, it2, ik2)
        if best_mv is None or not math.isfinite(best_val):
            raise DpInfeasibleError(f"reconstruction dead-ends at stage {k}")
        iv, iz, it_, ik = best_state
        speed_end[k] = v_grid[iv]
        soc_end[k] = soc_grid[iz]
        temp_end[k] = temp_grid[it_]
        time_end[k] = (time_end[k - 1] if k else 0.0) + best_mv.dt
        f_motor[k] = best_mv.force_motor
        f_brake[k] = best_mv.force_brake
        f_fc[k] = best_mv.force_fc
        f_batt[k] = best_mv.force_batt
        f_cool[k] = best_mv.force_cool

    return DpResult(
        cost=best,
        speed_end=speed_end,
        soc_end=soc_end,
        temp_end=temp_end,
        time_end=time_end,
        force_motor=f_motor,
        force_brake=f_brake,
        force_fc=f_fc,
        force_batt=f_batt,
        force_cool=f_cool,
        speed_cell=cells[0],
        soc_cell=cells[1],
        temp_cell=cells[2],
        time_cell=cells[3],
    )


def gap_report(j_convex: float, dp: DpResult) -> dict:
    """Signed relative gap of the convex cost against the oracle cost.

    Negative values mean the convex solution beat the gridded search, which
    the restricted oracle permits; they are reported as-is.
    """
    gap = (j_convex - dp.cost) / dp.cost
    return {"j_convex": j_convex, "j_dp": dp.cost, "gap_rel": gap}

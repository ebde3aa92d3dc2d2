"""Command-line drivers tying ingestion, fitting, solving, and auditing together.

Verbs: ``fit`` writes the surrogate artifact, ``optimize`` writes the solution
CSV with its run and tightness reports, ``validate`` replays a solution file
through the exact simulator, ``compare`` runs the dynamic-programming oracle
against the convex solution. One strict JSON run-configuration file drives all
four; the ``--out``, ``--tol``, and ``--seed`` flags override its scalars.

Exit codes are a stable contract: 0 success, 2 input error, 3 fit-quality
failure, 4 infeasible, 5 solver failure, 6 validation failure.

Artifacts are deterministic: rerunning a command with identical inputs
rewrites byte-identical files. Anything wall-clock dependent goes to the
``run_meta.json`` sidecar, which is excluded from that guarantee.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import dp as dp_mod
from .components import ComponentSet, load_components
from .errors import (
    ComponentError,
    ConfigError,
    DpInfeasibleError,
    FitQualityError,
    HytrainError,
    InfeasibleError,
    SchemaError,
    SolverError,
    SpeedCollapseError,
    TrackFormatError,
)
from .socp import BuildOptions, ProblemInstance
from .solve import OptimizeResult, SolutionTrajectory, optimize
from .surrogates import SurrogateSet, fit_battery, fit_fuelcell, fit_motor
from .track import JourneySpec, build_grid, load_track
from .validate import audit_tightness, forward_simulate, zero_stop_comparison

__all__ = ["RunConfig", "load_run_config", "main"]

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_FIT_QUALITY = 3
EXIT_INFEASIBLE = 4
EXIT_SOLVER = 5
EXIT_VALIDATION = 6


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    """Fully resolved inputs of one command invocation."""

    track_path: str
    components_path: str
    journey: dict
    grid: dict
    out_dir: str
    solver: dict = field(default_factory=dict)
    fit: dict = field(default_factory=dict)
    validator: dict = field(default_factory=dict)
    dp: dict | None = None
    weights: dict = field(default_factory=dict)
    seed: int | None = None


_TOP_KEYS = {
    "schema_version", "track", "components", "journey", "grid", "solver",
    "fit", "validator", "dp", "weights", "out_dir", "seed",
}
_JOURNEY_KEYS = {
    "target_time", "initial_speed_sq", "initial_soc", "initial_temp",
    "stop_speed_sq", "min_speed",
}
_GRID_KEYS = {
    "base_step", "refine_near_stations", "min_step", "approach_len",
    "approach_step",
}
_SOLVER_KEYS = {"tol", "max_iter", "refine"}
_FIT_KEYS = {"rms_ceiling", "speed_floor"}
_VALIDATOR_KEYS = {
    "substeps", "tightness_tol", "tightness_tol_battery",
    "rel_speed_div_max", "soc_end_drift_max", "temp_div_max",
    "temp_overshoot_max",
}
_DP_KEYS = {"n_speed", "n_soc", "n_temp", "n_time", "n_split", "n_cool", "max_intervals"}
_WEIGHT_KEYS = {"cooling_weight"}


def _strict_section(doc: dict, name: str, allowed: set[str], context: str) -> dict:
    sec = doc.get(name)
    if sec is None:
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(f"{context}: section {name!r} must be an object")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"{context}: section {name!r} has unknown keys {sorted(unknown)}")
    return dict(sec)


def load_run_config(
    path: str,
    *,
    out: str | None = None,
    tol: float | None = None,
    seed: int | None = None,
) -> RunConfig:
    """Parse a run-configuration file (strict JSON, unknown keys rejected)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    if doc.get("schema_version") != 1:
        raise ConfigError(f"{path}: schema_version must be 1")
    for req in ("track", "components", "journey", "grid"):
        if req not in doc:
            raise ConfigError(f"{path}: missing section {req!r}")

    journey = _strict_section(doc, "journey", _JOURNEY_KEYS, path)
    for req in ("target_time", "initial_speed_sq", "initial_soc", "initial_temp"):
        if req not in journey:
            raise ConfigError(f"{path}: journey section missing {req!r}")
    grid = _strict_section(doc, "grid", _GRID_KEYS, path)
    if "base_step" not in grid:
        raise ConfigError(f"{path}: grid section missing 'base_step'")

    cfg = RunConfig(
        track_path=str(doc["track"]),
        components_path=str(doc["components"]),
        journey=journey,
        grid=grid,
        out_dir=str(doc.get("out_dir", "")),
        solver=_strict_section(doc, "solver", _SOLVER_KEYS, path),
        fit=_strict_section(doc, "fit", _FIT_KEYS, path),
        validator=_strict_section(doc, "validator", _VALIDATOR_KEYS, path),
        dp=_strict_section(doc, "dp", _DP_KEYS, path) if "dp" in doc else None,
        weights=_strict_section(doc, "weights", _WEIGHT_KEYS, path),
        seed=doc.get("seed"),
    )
    base = os.path.dirname(os.path.abspath(path))
    cfg.track_path = os.path.join(base, cfg.track_path)
    cfg.components_path = os.path.join(base, cfg.components_path)
    if out is not None:
        cfg.out_dir = out
    elif cfg.out_dir:
        cfg.out_dir = os.path.join(base, cfg.out_dir)
    if not cfg.out_dir:
        raise ConfigError(f"{path}: no output directory (set 'out_dir' or pass --out)")
    if tol is not None:
        cfg.solver["tol"] = tol
    if seed is not None:
        cfg.seed = seed
    if cfg.seed is not None and not isinstance(cfg.seed, int):
        raise ConfigError(f"{path}: seed must be an integer")
    return cfg


# ---------------------------------------------------------------------------
# shared assembly steps


def _fit_surrogates(cfg: RunConfig, parts: ComponentSet) -> SurrogateSet:
    kw: dict = {}
    if "rms_ceiling" in cfg.fit:
        kw["rms_ceiling"] = float(cfg.fit["rms_ceiling"])
    if "speed_floor" in cfg.fit:
        kw["speed_floor"] = float(cfg.fit["speed_floor"])
    return SurrogateSet(
        motor=fit_motor(parts.motor_map, parts.vehicle, **kw),
        fuelcell=fit_fuelcell(parts.fuelcell_map, parts.vehicle, **kw),
        battery=fit_battery(
            parts.battery,
            **({"rms_ceiling": kw["rms_ceiling"]} if "rms_ceiling" in kw else {}),
        ),
    )


def _build_instance(cfg: RunConfig) -> ProblemInstance:
    track = load_track(cfg.track_path)
    parts = load_components(cfg.components_path, seed=cfg.seed)
    journey = JourneySpec(**{k: float(v) for k, v in cfg.journey.items()})
    grid_kw = dict(cfg.grid)
    base_step = float(grid_kw.pop("base_step"))
    grid = build_grid(
        track, base_step, stop_speed_sq=journey.stop_speed_sq, **grid_kw
    )
    return ProblemInstance(
        track=track,
        grid=grid,
        journey=journey,
        components=parts,
        surrogates=_fit_surrogates(cfg, parts),
        cooling_weight=float(cfg.weights.get("cooling_weight", 1.0)),
        options=BuildOptions(),
    )


def _run_optimize(cfg: RunConfig, inst: ProblemInstance) -> OptimizeResult:
    return optimize(
        inst,
        tol=float(cfg.solver.get("tol", 1e-10)),
        max_iter=int(cfg.solver.get("max_iter", 200)),
        refine=bool(cfg.solver.get("refine", True)),
    )


def _write_json(path: str, obj: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_meta(cfg: RunConfig, command: str, wall: float, extra: dict | None = None) -> None:
    # Timestamps and wall times live here so the main artifacts stay
    # byte-identical across reruns.
    meta = {
        "schema_version": 1,
        "command": command,
        "wall_time_s": wall,
        "written_at_unix": time.time(),
    }
    if extra:
        meta.update(extra)
    _write_json(os.path.join(cfg.out_dir, "run_meta.json"), meta)


# ---------------------------------------------------------------------------
# commands


def cmd_fit(cfg: RunConfig) -> int:
    """Fit the three surrogates and write the artifact with rms errors."""
    t0 = time.perf_counter()
    parts = load_components(cfg.components_path, seed=cfg.seed)
    surr = _fit_surrogates(cfg, parts)
    os.makedirs(cfg.out_dir, exist_ok=True)
    _write_json(os.path.join(cfg.out_dir, "surrogates.json"), surr.to_dict())
    _write_meta(cfg, "fit", time.perf_counter() - t0)
    print(
        "fit: rms motor {:.4%}, fuelcell {:.4%}, battery {:.4%} -> {}".format(
            surr.motor.rms_rel_error,
            surr.fuelcell.rms_rel_error,
            surr.battery.rms_rel_error,
            os.path.join(cfg.out_dir, "surrogates.json"),
        )
    )
    return EXIT_OK


def cmd_optimize(cfg: RunConfig) -> int:
    """Solve the journey program; write solution, run report, tightness audit."""
    t0 = time.perf_counter()
    inst = _build_instance(cfg)
    res = _run_optimize(cfg, inst)
    os.makedirs(cfg.out_dir, exist_ok=True)
    run_doc = {
        "schema_version": 1,
        "report": res.report.to_dict(),
        "surrogates": inst.surrogates.to_dict(),
        "instance": {
            "n_intervals": inst.grid.n,
            "target_time_s": inst.journey.target_time,
            "initial_soc": inst.journey.initial_soc,
            "initial_temp_k": inst.journey.initial_temp,
            "cooling_weight": inst.cooling_weight,
        },
    }
    if res.report.status != "optimal":
        _write_json(os.path.join(cfg.out_dir, "run.json"), run_doc)
        _write_meta(cfg, "optimize", time.perf_counter() - t0)
        print(f"optimize: {res.report.status} ({res.report.solver_status})", file=sys.stderr)
        return EXIT_INFEASIBLE if res.report.status == "infeasible" else EXIT_SOLVER

    sol = res.trajectory
    audit = audit_tightness(
        sol,
        inst,
        tol=float(cfg.validator.get("tightness_tol", 1e-5)),
        tol_battery=float(cfg.validator.get("tightness_tol_battery", 1e-3)),
    )
    sol.to_csv(os.path.join(cfg.out_dir, "solution.csv"))
    run_doc["tightness"] = audit.to_dict()
    _write_json(os.path.join(cfg.out_dir, "run.json"), run_doc)
    _write_meta(
        cfg, "optimize", time.perf_counter() - t0,
        {"solve_time_s": res.report.solve_time},
    )
    print(
        f"optimize: {res.report.status}, objective {res.report.objective:.6e} J, "
        f"{inst.grid.n} intervals, tightness {'ok' if audit.ok else 'FAILED'}"
    )
    print(audit.format_table())
    return EXIT_OK if audit.ok else EXIT_VALIDATION


def cmd_validate(cfg: RunConfig, solution_path: str | None) -> int:
    """Replay a solution file through the exact models and check thresholds."""
    t0 = time.perf_counter()
    path = solution_path or os.path.join(cfg.out_dir, "solution.csv")
    sol = SolutionTrajectory.from_csv(path)
    inst = _build_instance(cfg)
    if sol.n != inst.grid.n:
        raise SchemaError(
            f"{path}: {sol.n} intervals but the configured grid has {inst.grid.n}"
        )
    sim = forward_simulate(sol, inst, substeps=int(cfg.validator.get("substeps", 10)))
    zero = zero_stop_comparison(sol, inst, substeps=int(cfg.validator.get("substeps", 10)))
    checks = {
        "rel_speed_div": (sim.rel_speed_div, float(cfg.validator.get("rel_speed_div_max", 0.01))),
        "soc_end_drift": (sim.soc_end_drift, float(cfg.validator.get("soc_end_drift_max", 0.005))),
        "max_temp_div": (sim.max_temp_div, float(cfg.validator.get("temp_div_max", 1.0))),
        "temp_overshoot": (sim.temp_overshoot, float(cfg.validator.get("temp_overshoot_max", 1.0))),
    }
    ok = all(value <= bound for value, bound in checks.values())
    os.makedirs(cfg.out_dir, exist_ok=True)
    _write_json(
        os.path.join(cfg.out_dir, "validation.json"),
        {
            "schema_version": 1,
            "solution": os.path.basename(path),
            "simulation": sim.to_dict(),
            "zero_stop": zero,
            "checks": {
                name: {"value": value, "max": bound, "passed": value <= bound}
                for name, (value, bound) in checks.items()
            },
            "passed": ok,
        },
    )
    _write_meta(cfg, "validate", time.perf_counter() - t0)
    print(sim.format_table())
    for name, (value, bound) in checks.items():
        print(f"{name:<16} {value:.4e} <= {bound:.4e} : {'PASS' if value <= bound else 'FAIL'}")
    if not ok:
        print("validate: divergence above threshold", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_compare(cfg: RunConfig) -> int:
    """Solve both ways and report the convex-versus-oracle cost gap."""
    t0 = time.perf_counter()
    inst = _build_instance(cfg)
    dp_cfg = dp_mod.DpConfig(**{k: int(v) for k, v in (cfg.dp or {}).items()})
    res = _run_optimize(cfg, inst)
    if res.report.status != "optimal":
        print(f"compare: convex solve {res.report.status}", file=sys.stderr)
        return EXIT_INFEASIBLE if res.report.status == "infeasible" else EXIT_SOLVER
    dp_res = dp_mod.dp_solve(inst, dp_cfg)
    gap = dp_mod.gap_report(res.report.objective, dp_res)

    os.makedirs(cfg.out_dir, exist_ok=True)
    res.trajectory.to_csv(os.path.join(cfg.out_dir, "solution_convex.csv"))
    dp_traj = dp_res.to_trajectory(inst)
    dp_traj.to_csv(os.path.join(cfg.out_dir, "solution_dp.csv"))
    with open(
        os.path.join(cfg.out_dir, "compare.csv"), "w", encoding="utf-8", newline="\n"
    ) as fh:
        g = lambda x: f"{float(x):.12g}"
        fh.write("# schema=hytrain-compare-v1\n")
        fh.write(
            "i,s_m,convex_speed_mps,dp_speed_mps,convex_soc,dp_soc,"
            "convex_temp_k,dp_temp_k,convex_force_fc_n,dp_force_fc_n,"
            "convex_force_batt_n,dp_force_batt_n\n"
        )
        sol = res.trajectory
        for i in range(sol.n):
            fh.write(",".join([
                str(i), g(sol.s[i]),
                g(math.sqrt(max(sol.speed_sq_end[i], 0.0))), g(dp_res.speed_end[i]),
                g(sol.soc_end[i]), g(dp_res.soc_end[i]),
                g(sol.temp_end[i]), g(dp_res.temp_end[i]),
                g(sol.force_fc[i]), g(dp_res.force_fc[i]),
                g(sol.force_batt[i]), g(dp_res.force_batt[i]),
            ]) + "\n")
    _write_json(
        os.path.join(cfg.out_dir, "gap.json"),
        {
            "schema_version": 1,
            "gap": gap,
            "dp_grid": dataclasses.asdict(dp_cfg),
            "dp_time_end_s": float(dp_res.time_end[-1]),
            "dp_soc_end": float(dp_res.soc_end[-1]),
        },
    )
    _write_meta(cfg, "compare", time.perf_counter() - t0)
    print(
        "compare: convex {:.6e} J, oracle {:.6e} J, gap {:+.3%}".format(
            gap["j_convex"], gap["j_dp"], gap["gap_rel"]
        )
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hytrain",
        description="Space-domain convex journey optimization for fuel-cell hybrid trains",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "fit": "fit component surrogates and write the artifact",
        "optimize": "solve the journey program and write solution artifacts",
        "validate": "replay a solution through the exact models",
        "compare": "run the dynamic-programming oracle against the convex solution",
    }
    for name, help_text in specs.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="run configuration JSON")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--tol", type=float, help="solver tolerance (overrides config)")
        p.add_argument(
            "--seed", type=int,
            help="synthetic-map seed override (inline map tables are unaffected)",
        )
        if name == "validate":
            p.add_argument(
                "solution", nargs="?", default=None,
                help="solution CSV (default: <out_dir>/solution.csv)",
            )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config, out=args.out, tol=args.tol, seed=args.seed)
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "optimize":
            return cmd_optimize(cfg)
        if args.command == "validate":
            return cmd_validate(cfg, args.solution)
        return cmd_compare(cfg)
    except FitQualityError as exc:
        print(f"error: fit quality below ceiling: {exc}", file=sys.stderr)
        return EXIT_FIT_QUALITY
    except (InfeasibleError, DpInfeasibleError) as exc:
        print(f"error: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverError as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except SpeedCollapseError as exc:
        print(f"error: validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TrackFormatError, ComponentError, ConfigError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except HytrainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

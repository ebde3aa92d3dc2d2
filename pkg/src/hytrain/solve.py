"""Interior-point solve of the assembled cone program and solution extraction.

The canonical program from :mod:`hytrain.socp` maps directly onto the conic
form ``min q'x  s.t.  Ax + s = b,  s in K`` with a zero cone for equalities,
the nonnegative orthant for inequality rows, and one second-order cone per
block. :func:`optimize` adds a deterministic two-pass scheme: the first
solve's reciprocal speeds refine the per-interval cooling boxes, and the
second solve runs on the tightened program, which keeps the McCormick
cooling planes close to the bilinear physics along the optimal trajectory.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

import clarabel

from .errors import SchemaError, SolverError
from .socp import ConeProgram, ProblemInstance, build, evaluate_objective

_CSV_SCHEMA = "hytrain-solution-v1"
_CSV_COLUMNS = [
    "idx", "s_m", "ds_m", "stop", "dwell_s", "speed_mps", "inv_speed_spm",
    "speed_sq_end", "soc_end", "temp_end_k", "time_end_s",
    "force_motor_n", "force_brake_n", "force_fc_n", "force_batt_n",
    "force_cool_n", "force_dis_n", "force_chr_n",
    "soc_loss", "cool_rate_n",
    "power_motor_w", "power_fc_w", "power_batt_w",
]


@dataclass(frozen=True)
class SolveReport:
    """Outcome of one optimization: status, cost, and solver diagnostics.

    ``objective`` is the physical journey cost (hydrogen energy plus weighted
    cooling, J), recomputed from the solution independently of the solver's
    internal cost vector. ``status`` is one of ``optimal``, ``infeasible``,
    ``unbounded``, ``numerical-failure``.
    """

    status: str
    solver_status: str
    objective: float
    solver_objective: float
    gap_rel: float
    iterations: int
    solve_time: float
    passes: int = 1
    tol_used: float = 1e-10

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "solver_status": self.solver_status,
            "objective": self.objective,
            "solver_objective": self.solver_objective,
            "gap_rel": self.gap_rel,
            "iterations": self.iterations,
            "passes": self.passes,
            "tol_used": self.tol_used,
        }


@dataclass
class SolutionTrajectory:
    """Per-interval journey solution in physical units.

    State arrays hold the arrival-node values of each interval; the departure
    states of the journey are kept separately (``initial_*``). Powers are
    reconstructed as force times interval speed.
    """

    s: np.ndarray
    ds: np.ndarray
    is_stop: np.ndarray
    dwell: np.ndarray
    speed: np.ndarray
    inv_speed: np.ndarray
    speed_sq_end: np.ndarray
    soc_end: np.ndarray
    temp_end: np.ndarray
    time_end: np.ndarray
    force_motor: np.ndarray
    force_brake: np.ndarray
    force_fc: np.ndarray
    force_batt: np.ndarray
    force_cool: np.ndarray
    force_dis: np.ndarray
    force_chr: np.ndarray
    # Program helper columns: per-interval SOC lost to resistive dissipation
    # and the granted convection credit (J/m). The tightness audit reads
    # these directly; recomputing them from state differences would bury
    # them under the equality-chain residual.
    soc_loss: np.ndarray
    cool_rate: np.ndarray
    initial_speed_sq: float
    initial_soc: float
    initial_temp: float
    objective: float

    @property
    def n(self) -> int:
        return len(self.ds)

    @property
    def power_motor(self) -> np.ndarray:
        return self.force_motor * self.speed

    @property
    def power_fc(self) -> np.ndarray:
        return self.force_fc * self.speed

    @property
    def power_batt(self) -> np.ndarray:
        return self.force_batt * self.speed

    @property
    def practically_stationary(self) -> np.ndarray:
        """Stop intervals crawl at the emulation speed; flag them as parked."""
        return self.is_stop.copy()

    @property
    def total_time(self) -> float:
        return float(self.time_end[-1])

    def soc_nodes(self) -> np.ndarray:
        return np.concatenate([[self.initial_soc], self.soc_end])

    def temp_nodes(self) -> np.ndarray:
        return np.concatenate([[self.initial_temp], self.temp_end])

    def speed_sq_nodes(self) -> np.ndarray:
        return np.concatenate([[self.initial_speed_sq], self.speed_sq_end])

    def to_dict(self) -> dict:
        cols = {
            "s_m": self.s, "ds_m": self.ds,
            "stop": self.is_stop.astype(int), "dwell_s": self.dwell,
            "speed_mps": self.speed, "inv_speed_spm": self.inv_speed,
            "speed_sq_end": self.speed_sq_end, "soc_end": self.soc_end,
            "temp_end_k": self.temp_end, "time_end_s": self.time_end,
            "force_motor_n": self.force_motor, "force_brake_n": self.force_brake,
            "force_fc_n": self.force_fc, "force_batt_n": self.force_batt,
            "force_cool_n": self.force_cool, "force_dis_n": self.force_dis,
            "force_chr_n": self.force_chr,
            "soc_loss": self.soc_loss, "cool_rate_n": self.cool_rate,
        }
        return {
            "initial": {
                "speed_sq": self.initial_speed_sq,
                "soc": self.initial_soc,
                "temp_k": self.initial_temp,
            },
            "objective": self.objective,
            "total_time_s": self.total_time,
            "columns": {k: [float(x) for x in v] for k, v in cols.items()},
        }

    def to_csv(self, path: str) -> None:
        """Write the trajectory with a stable, re-parsable format."""
        g = lambda x: f"{float(x):.12g}"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# schema={_CSV_SCHEMA}\n")
            fh.write(
                f"# initial speed_sq={g(self.initial_speed_sq)} "
                f"soc={g(self.initial_soc)} temp_k={g(self.initial_temp)}\n"
            )
            fh.write(",".join(_CSV_COLUMNS) + "\n")
            for i in range(self.n):
                row = [
                    str(i), g(self.s[i]), g(self.ds[i]), str(int(self.is_stop[i])),
                    g(self.dwell[i]), g(self.speed[i]), g(self.inv_speed[i]),
                    g(self.speed_sq_end[i]), g(self.soc_end[i]), g(self.temp_end[i]),
                    g(self.time_end[i]), g(self.force_motor[i]), g(self.force_brake[i]),
                    g(self.force_fc[i]), g(self.force_batt[i]), g(self.force_cool[i]),
                    g(self.force_dis[i]), g(self.force_chr[i]),
                    g(self.soc_loss[i]), g(self.cool_rate[i]),
                    g(self.power_motor[i]), g(self.power_fc[i]), g(self.power_batt[i]),
                ]
                fh.write(",".join(row) + "\n")
            fh.write(f"# total_time_s={g(self.total_time)} objective={g(self.objective)}\n")

    @classmethod
    def from_csv(cls, path: str) -> "SolutionTrajectory":
        """Re-read a trajectory written by :meth:`to_csv` (schema checked)."""
        try:
            with open(path, "r", encoding="utf-8") as fh:
                lines = [ln.rstrip("\n") for ln in fh]
        except OSError as exc:
            raise SchemaError(f"cannot read solution file {path!r}: {exc}") from exc
        if not lines or not lines[0].startswith("# schema="):
            raise SchemaError(f"{path}: missing schema header")
        schema = lines[0].split("=", 1)[1]
        if schema != _CSV_SCHEMA:
            raise SchemaError(f"{path}: unsupported schema {schema!r}")
        try:
            init_parts = dict(
                kv.split("=") for kv in lines[1].replace("# initial ", "").split()
            )
            z0 = float(init_parts["speed_sq"])
            soc0 = float(init_parts["soc"])
            t0 = float(init_parts["temp_k"])
        except Exception as exc:
            raise SchemaError(f"{path}: malformed initial-state header") from exc
        if lines[2].split(",") != _CSV_COLUMNS:
            raise SchemaError(f"{path}: column set does not match {_CSV_SCHEMA}")
        data_lines = [ln for ln in lines[3:] if ln and not ln.startswith("#")]
        rows: list[list[float]] = []
        for ln in data_lines:
            toks = ln.split(",")
            if len(toks) != len(_CSV_COLUMNS):
                raise SchemaError(
                    f"{path}: data row has {len(toks)} fields, expected {len(_CSV_COLUMNS)}"
                )
            try:
                rows.append([float(tok) for tok in toks])
            except ValueError as exc:
                raise SchemaError(f"{path}: non-numeric field in data row") from exc
        if not rows:
            raise SchemaError(f"{path}: no data rows")
        raw = np.array(rows)
        col = {name: raw[:, j] for j, name in enumerate(_CSV_COLUMNS)}
        # The footer's objective survives a round trip through the file.
        objective = math.nan
        for ln in lines[3:]:
            if ln.startswith("# total_time_s="):
                objective = float(ln.split("objective=")[1])
        return cls(
            s=col["s_m"], ds=col["ds_m"], is_stop=col["stop"] > 0.5,
            dwell=col["dwell_s"], speed=col["speed_mps"], inv_speed=col["inv_speed_spm"],
            speed_sq_end=col["speed_sq_end"], soc_end=col["soc_end"],
            temp_end=col["temp_end_k"], time_end=col["time_end_s"],
            force_motor=col["force_motor_n"], force_brake=col["force_brake_n"],
            force_fc=col["force_fc_n"], force_batt=col["force_batt_n"],
            force_cool=col["force_cool_n"], force_dis=col["force_dis_n"],
            force_chr=col["force_chr_n"],
            soc_loss=col["soc_loss"], cool_rate=col["cool_rate_n"],
            initial_speed_sq=z0, initial_soc=soc0, initial_temp=t0,
            objective=objective,
        )


def assemble_canonical(prog: ConeProgram):
    """Map the program to ``(P, q, A, b, cones)`` for the conic solver.

    The rows go in program order: the zero cone first, then the nonnegative
    cone, then one second-order cone per block. Cone rows flip sign because
    the solver wants ``Ax + s = b`` with ``s`` in the cone, while the blocks
    store the member expressions directly. Magnitude conditioning is the
    builder's job (the cone blocks are emitted in balanced frames), so the
    assembly is a plain translation.
    """
    n = prog.n_cols
    rows_i: list[int] = []
    cols_i: list[int] = []
    vals: list[float] = []
    b: list[float] = []
    cones = []
    r = 0
    for row in prog.eq_rows:
        for c, v in zip(row.cols, row.vals):
            rows_i.append(r); cols_i.append(c); vals.append(v)
        b.append(row.rhs)
        r += 1
    cones.append(clarabel.ZeroConeT(len(prog.eq_rows)))
    for row in prog.ineq_rows:
        for c, v in zip(row.cols, row.vals):
            rows_i.append(r); cols_i.append(c); vals.append(v)
        b.append(row.rhs)
        r += 1
    cones.append(clarabel.NonnegativeConeT(len(prog.ineq_rows)))
    for blk in prog.soc_blocks:
        for cols, rvals, const in blk.rows:
            for c, v in zip(cols, rvals):
                rows_i.append(r); cols_i.append(c); vals.append(-v)
            b.append(const)
            r += 1
        cones.append(clarabel.SecondOrderConeT(len(blk.rows)))
    A = sp.csc_matrix((vals, (rows_i, cols_i)), shape=(r, n))
    P = sp.csc_matrix((n, n))
    return P, np.asarray(prog.cost, dtype=float), A, np.asarray(b, dtype=float), cones


_STATUS_MAP = {
    "Solved": "optimal",
    "PrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
}


def solve_program(
    prog: ConeProgram, *, tol: float = 1e-10, max_iter: int = 200
) -> tuple[SolveReport, np.ndarray | None]:
    """Run the interior-point solver on an assembled program.

    Returns the report and the primal point (``None`` unless the status is
    ``optimal``). A stall at the requested tolerance (iteration cap or a
    reduced-accuracy certificate) is retried on a fixed ladder of looser
    tolerances; ``tol_used`` in the report records the accepted level. The
    ladder's floor stays far below the downstream tightness thresholds.
    Genuine infeasibility and unboundedness are never retried.
    """
    P, q, A, b, cones = assemble_canonical(prog)
    ladder = [tol]
    while ladder[-1] < 0.9e-7:
        ladder.append(min(ladder[-1] * 100.0, 1e-7))
    report = None
    x = None
    for attempt in ladder:
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.max_iter = max_iter
        settings.tol_gap_rel = attempt
        settings.tol_gap_abs = attempt
        settings.tol_feas = min(1e-9, tol) if attempt == tol else attempt
        settings.max_threads = 1
        solver = clarabel.DefaultSolver(P, q, A, b, cones, settings)
        sol = solver.solve()
        raw = str(sol.status)
        status = _STATUS_MAP.get(raw, "numerical-failure")
        x = np.asarray(sol.x) if status == "optimal" else None
        objective = evaluate_objective(prog, x) if x is not None else math.nan
        p_obj, d_obj = float(sol.obj_val), float(sol.obj_val_dual)
        gap = abs(p_obj - d_obj) / max(1.0, abs(p_obj)) if math.isfinite(p_obj) else math.inf
        report = SolveReport(
            status=status,
            solver_status=raw,
            objective=objective,
            solver_objective=p_obj + prog.cost_const,
            gap_rel=gap,
            iterations=int(sol.iterations),
            solve_time=float(sol.solve_time),
            tol_used=attempt,
        )
        if status != "numerical-failure":
            break
    return report, x


@dataclass
class OptimizeResult:
    report: SolveReport
    trajectory: SolutionTrajectory | None
    prog: ConeProgram
    x: np.ndarray | None


def extract(prog: ConeProgram, x: np.ndarray) -> SolutionTrajectory:
    """Read a solver point back into physical per-interval arrays."""
    inst = prog.instance
    lay = prog.layout
    grid = inst.grid
    ds = grid.widths()
    inv_speed = lay.values("inv_speed", x)
    return SolutionTrajectory(
        s=grid.starts(),
        ds=ds,
        is_stop=grid.stop_mask(),
        dwell=grid.dwells(),
        speed=lay.values("speed", x),
        inv_speed=inv_speed,
        speed_sq_end=lay.values("speed_sq", x)[1:],
        soc_end=lay.values("soc", x)[1:],
        temp_end=lay.values("temp", x)[1:],
        time_end=np.cumsum(ds * inv_speed),
        force_motor=lay.values("force_motor", x),
        force_brake=lay.values("force_brake", x),
        force_fc=lay.values("force_fc", x),
        force_batt=lay.values("force_batt", x),
        force_cool=lay.values("force_cool", x),
        force_dis=lay.values("force_dis", x),
        force_chr=lay.values("force_chr", x),
        soc_loss=lay.values("soc_loss", x),
        cool_rate=lay.values("cool_rate", x),
        initial_speed_sq=float(lay.values("speed_sq", x)[0]),
        initial_soc=float(lay.values("soc", x)[0]),
        initial_temp=float(lay.values("temp", x)[0]),
        objective=evaluate_objective(prog, x),
    )


def optimize(
    inst: ProblemInstance, *, tol: float = 1e-10, max_iter: int = 200, refine: bool = True
) -> OptimizeResult:
    """Solve a journey instance, refining the cooling boxes once.

    Pass one solves with reachability-based reciprocal-speed caps. When it
    succeeds and ``refine`` is set, the caps are shrunk to the observed
    reciprocal speeds (plus the configured margin) and the program is solved
    again; the refined solution is returned unless the second pass fails, in
    which case the first solution is kept. The whole procedure is
    deterministic.
    """
    prog = build(inst)
    report, x = solve_program(prog, tol=tol, max_iter=max_iter)
    if report.status != "optimal" or not refine:
        traj = extract(prog, x) if x is not None else None
        return OptimizeResult(report=report, trajectory=traj, prog=prog, x=x)

    margin = 1.0 + inst.options.refine_margin
    caps = tuple(float(c) for c in prog.layout.values("inv_speed", x) * margin)
    inst2 = dataclasses.replace(
        inst, options=dataclasses.replace(inst.options, inv_speed_caps=caps)
    )
    prog2 = build(inst2)
    report2, x2 = solve_program(prog2, tol=tol, max_iter=max_iter)
    if report2.status != "optimal":
        return OptimizeResult(
            report=dataclasses.replace(report, passes=1),
            trajectory=extract(prog, x), prog=prog, x=x,
        )
    return OptimizeResult(
        report=dataclasses.replace(report2, passes=2),
        trajectory=extract(prog2, x2), prog=prog2, x=x2,
    )


def require_optimal(report: SolveReport) -> None:
    """Raise :class:`SolverError` unless the solve reached optimality."""
    if report.status != "optimal":
        raise SolverError(
            f"solver finished with status {report.status!r} "
            f"({report.solver_status}, gap {report.gap_rel:.2e})"
        )

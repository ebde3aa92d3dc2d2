"""Convex quadratic surrogates for the nonlinear component models.

The optimizer prices three nonlinear quantities with fitted quadratics:

* motor electrical demand per meter as a function of motor force and squared
  speed (``p00 + p10 z + p01 F + p20 z^2 + p02 F^2``, optional cross term),
* hydrogen energy per meter as the same form in fuel-cell force and squared
  speed,
* battery state-of-charge drop per second as ``alpha P^2 + beta P``.

Fits are least squares over a sampled operating envelope, followed by a
projection of the quadratic part onto the positive semidefinite cone (convex
surrogates are a hard requirement downstream), followed by a re-fit of the
affine part. Fit quality is tracked as the relative rms error over the
sample set and gated by a configurable ceiling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .components import (
    BatteryParams,
    EfficiencyMap,
    VehicleParams,
    exact_delta_soc,
    exact_fuel_force,
    exact_motor_demand,
)
from .errors import FitError, FitQualityError


@dataclass(frozen=True)
class QuadraticSurrogate:
    """Quadratic surface ``p00 + p10 z + p01 F + p11 F sqrt(z) + p20 z^2 + p02 F^2``.

    ``F`` is a force in N (or J/m) and ``z`` a squared speed in m^2/s^2.
    ``domain_force`` and ``domain_speed_sq`` record the envelope the fit
    sampled; evaluations outside are extrapolations. ``rms_rel_error`` is the
    relative rms error against the exact model over the fit samples.
    """

    p00: float
    p10: float
    p01: float
    p11: float
    p20: float
    p02: float
    domain_force: tuple[float, float]
    domain_speed_sq: tuple[float, float]
    rms_rel_error: float

    def evaluate(self, force, speed_sq):
        f = np.asarray(force, dtype=float)
        z = np.asarray(speed_sq, dtype=float)
        val = (
            self.p00
            + self.p10 * z
            + self.p01 * f
            + self.p11 * f * np.sqrt(np.maximum(z, 0.0))
            + self.p20 * z * z
            + self.p02 * f * f
        )
        return float(val) if np.isscalar(force) and np.isscalar(speed_sq) else val

    def to_dict(self) -> dict:
        return {
            "p00": self.p00, "p10": self.p10, "p01": self.p01,
            "p11": self.p11, "p20": self.p20, "p02": self.p02,
            "domain_force": list(self.domain_force),
            "domain_speed_sq": list(self.domain_speed_sq),
            "rms_rel_error": self.rms_rel_error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuadraticSurrogate":
        return cls(
            p00=float(d["p00"]), p10=float(d["p10"]), p01=float(d["p01"]),
            p11=float(d["p11"]), p20=float(d["p20"]), p02=float(d["p02"]),
            domain_force=(float(d["domain_force"][0]), float(d["domain_force"][1])),
            domain_speed_sq=(float(d["domain_speed_sq"][0]), float(d["domain_speed_sq"][1])),
            rms_rel_error=float(d["rms_rel_error"]),
        )


@dataclass(frozen=True)
class BatterySurrogate:
    """State-of-charge drop rate ``alpha P^2 + beta P`` (per second, P in W)."""

    alpha: float
    beta: float
    domain_power: tuple[float, float]
    rms_rel_error: float
    max_rel_error: float

    def evaluate_rate(self, power):
        p = np.asarray(power, dtype=float)
        val = self.alpha * p * p + self.beta * p
        return float(val) if np.isscalar(power) else val

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha, "beta": self.beta,
            "domain_power": list(self.domain_power),
            "rms_rel_error": self.rms_rel_error,
            "max_rel_error": self.max_rel_error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BatterySurrogate":
        return cls(
            alpha=float(d["alpha"]), beta=float(d["beta"]),
            domain_power=(float(d["domain_power"][0]), float(d["domain_power"][1])),
            rms_rel_error=float(d["rms_rel_error"]),
            max_rel_error=float(d["max_rel_error"]),
        )


def hessian_psd_check(s: QuadraticSurrogate) -> tuple[bool, float]:
    """Check convexity of the quadratic part.

    Returns ``(is_psd, margin)`` where ``margin`` is the smallest eigenvalue
    of the Hessian-like matrix ``[[2 p20, p11], [p11, 2 p02]]`` that pairs the
    two quadratic arguments. Nonnegative margin means convex.
    """
    h = np.array([[2.0 * s.p20, s.p11], [s.p11, 2.0 * s.p02]])
    margin = float(np.linalg.eigvalsh(h)[0])
    return margin >= 0.0, margin


def _lstsq_design(f: np.ndarray, z: np.ndarray, include_cross: bool) -> np.ndarray:
    cols = [np.ones_like(f), z, f, z * z, f * f]
    if include_cross:
        cols.insert(3, f * np.sqrt(np.maximum(z, 0.0)))
    return np.column_stack(cols)


def fit_quadratic_surface(
    force: np.ndarray,
    speed_sq: np.ndarray,
    target: np.ndarray,
    *,
    include_cross: bool = False,
) -> tuple[float, float, float, float, float, float]:
    """Least-squares quadratic surface through scattered samples.

    Returns ``(p00, p10, p01, p11, p20, p02)``; ``p11`` is zero unless
    ``include_cross``. Raises :class:`FitError` on a rank-deficient design
    (degenerate sampling, e.g. all samples at one speed).
    """
    f = np.asarray(force, dtype=float).ravel()
    z = np.asarray(speed_sq, dtype=float).ravel()
    y = np.asarray(target, dtype=float).ravel()
    if not (len(f) == len(z) == len(y)):
        raise FitError("force, speed_sq, target must have equal lengths")
    design = _lstsq_design(f, z, include_cross)
    if len(y) < design.shape[1]:
        raise FitError(f"need at least {design.shape[1]} samples, got {len(y)}")
    # Column scaling keeps the normal equations well conditioned across the
    # very different magnitudes of z, F, z^2, F^2.
    scale = np.maximum(np.max(np.abs(design), axis=0), 1e-300)
    coef, _, rank, _ = np.linalg.lstsq(design / scale, y, rcond=None)
    if rank < design.shape[1]:
        raise FitError(
            "rank-deficient sample set: quadratic coefficients are not identifiable "
            "(vary both force and speed across samples)"
        )
    coef = coef / scale
    if include_cross:
        p00, p10, p01, p11, p20, p02 = coef
    else:
        p00, p10, p01, p20, p02 = coef
        p11 = 0.0
    return float(p00), float(p10), float(p01), float(p11), float(p20), float(p02)


def _project_convex_and_refit(
    f: np.ndarray, z: np.ndarray, y: np.ndarray, coeffs, include_cross: bool
):
    p00, p10, p01, p11, p20, p02 = coeffs
    h = np.array([[2.0 * p20, p11], [p11, 2.0 * p02]])
    w, v = np.linalg.eigh(h)
    if w[0] >= 0.0:
        return coeffs
    h_psd = (v * np.maximum(w, 0.0)) @ v.T
    p20n, p02n = 0.5 * h_psd[0, 0], 0.5 * h_psd[1, 1]
    p11n = h_psd[0, 1] if include_cross else 0.0
    # Re-fit the affine part against the residual of the clipped quadratic.
    quad = p20n * z * z + p02n * f * f + p11n * f * np.sqrt(np.maximum(z, 0.0))
    design = np.column_stack([np.ones_like(f), z, f])
    scale = np.maximum(np.max(np.abs(design), axis=0), 1e-300)
    lin, _, rank, _ = np.linalg.lstsq(design / scale, y - quad, rcond=None)
    if rank < 3:
        raise FitError("rank-deficient sample set during convexity re-fit")
    lin = lin / scale
    return float(lin[0]), float(lin[1]), float(lin[2]), float(p11n), float(p20n), float(p02n)


def _rel_rms(pred: np.ndarray, y: np.ndarray) -> float:
    denom = float(np.linalg.norm(y))
    if denom == 0.0:
        return float(np.linalg.norm(pred - y))
    return float(np.linalg.norm(pred - y) / denom)


def fit_motor(
    motor_map: EfficiencyMap,
    vehicle: VehicleParams,
    *,
    n_force: int = 41,
    n_speed: int = 21,
    speed_floor: float = 3.0,
    speed_ceiling: float | None = None,
    rms_ceiling: float = 0.05,
    include_cross: bool = False,
) -> QuadraticSurrogate:
    """Fit the motor electrical-demand surrogate over the drive envelope.

    Samples a force/speed grid clipped to the motor force and power ratings,
    evaluates the exact two-branch demand (divide by efficiency when driving,
    multiply when regenerating), and fits a convex quadratic. ``speed_floor``
    bounds the fitted envelope away from crawl speeds where per-meter demand
    blows up; below it the surrogate extrapolates.
    """
    if speed_ceiling is None:
        speed_ceiling = float(motor_map.axis_speed[-1])
    if not (0.0 < speed_floor < speed_ceiling):
        raise FitError(f"need 0 < speed_floor < speed_ceiling, got {speed_floor}, {speed_ceiling}")
    speeds = np.linspace(speed_floor, speed_ceiling, n_speed)
    forces = np.linspace(vehicle.force_motor_min, vehicle.force_motor_max, n_force)
    fg, vg = np.meshgrid(forces, speeds, indexing="ij")
    power = fg * vg
    mask = (power >= vehicle.power_motor_min) & (power <= vehicle.power_motor_max)
    f, v = fg[mask], vg[mask]
    z = v * v
    y = exact_motor_demand(motor_map, f, v)
    coeffs = fit_quadratic_surface(f, z, y, include_cross=include_cross)
    coeffs = _project_convex_and_refit(f, z, y, coeffs, include_cross)
    p00, p10, p01, p11, p20, p02 = coeffs
    pred = p00 + p10 * z + p01 * f + p11 * f * v + p20 * z * z + p02 * f * f
    rms = _rel_rms(pred, y)
    if rms > rms_ceiling:
        raise FitQualityError(
            f"motor surrogate rms error {rms:.4f} exceeds ceiling {rms_ceiling:.4f}"
        )
    return QuadraticSurrogate(
        p00=p00, p10=p10, p01=p01, p11=p11, p20=p20, p02=p02,
        domain_force=(float(forces[0]), float(forces[-1])),
        domain_speed_sq=(float(speed_floor**2), float(speed_ceiling**2)),
        rms_rel_error=rms,
    )


def fit_fuelcell(
    fc_map: EfficiencyMap,
    vehicle: VehicleParams,
    *,
    n_power: int = 41,
    n_speed: int = 21,
    speed_floor: float = 3.0,
    speed_ceiling: float | None = None,
    rms_ceiling: float = 0.05,
    include_cross: bool = False,
) -> QuadraticSurrogate:
    """Fit the hydrogen-consumption surrogate in (fuel-cell force, squared speed).

    Samples the rated electrical power range crossed with speeds, converts
    powers to forces (``F = P / v``), and fits the exact hydrogen energy per
    meter ``F / eta(P)``.
    """
    if speed_ceiling is None:
        speed_ceiling = float(fc_map.axis_speed[-1])
    if not (0.0 < speed_floor < speed_ceiling):
        raise FitError(f"need 0 < speed_floor < speed_ceiling, got {speed_floor}, {speed_ceiling}")
    powers = np.linspace(vehicle.power_fc_min, vehicle.power_fc_max, n_power)
    speeds = np.linspace(speed_floor, speed_ceiling, n_speed)
    pg, vg = np.meshgrid(powers, speeds, indexing="ij")
    v = vg.ravel()
    f = (pg / vg).ravel()
    z = v * v
    y = exact_fuel_force(fc_map, f, v)
    coeffs = fit_quadratic_surface(f, z, y, include_cross=include_cross)
    coeffs = _project_convex_and_refit(f, z, y, coeffs, include_cross)
    p00, p10, p01, p11, p20, p02 = coeffs
    pred = p00 + p10 * z + p01 * f + p11 * f * v + p20 * z * z + p02 * f * f
    rms = _rel_rms(pred, y)
    if rms > rms_ceiling:
        raise FitQualityError(
            f"fuel-cell surrogate rms error {rms:.4f} exceeds ceiling {rms_ceiling:.4f}"
        )
    return QuadraticSurrogate(
        p00=p00, p10=p10, p01=p01, p11=p11, p20=p20, p02=p02,
        domain_force=(float(np.min(f)), float(np.max(f))),
        domain_speed_sq=(float(speed_floor**2), float(speed_ceiling**2)),
        rms_rel_error=rms,
    )


def fit_battery(batt: BatteryParams, *, n_samples: int = 1001, rms_ceiling: float = 0.05) -> BatterySurrogate:
    """Fit ``alpha P^2 + beta P`` to the exact state-of-charge drop rate.

    Zero intercept by construction (no drop at zero power). ``alpha`` is
    clipped to be nonnegative; ``beta`` must come out positive, otherwise the
    battery description is unusable and a :class:`FitError` is raised.
    """
    p = np.linspace(batt.power_min, batt.power_max, n_samples)
    y = exact_delta_soc(batt, p, 1.0)
    design = np.column_stack([p * p, p])
    scale = np.maximum(np.max(np.abs(design), axis=0), 1e-300)
    coef, _, rank, _ = np.linalg.lstsq(design / scale, y, rcond=None)
    if rank < 2:
        raise FitError("battery fit is rank-deficient (degenerate power range)")
    alpha, beta = coef / scale
    if alpha < 0.0:
        alpha = 0.0
        beta = float(np.dot(p, y) / np.dot(p, p))
    if beta <= 0.0:
        raise FitError(f"battery surrogate slope must be positive, got beta={beta}")
    pred = alpha * p * p + beta * p
    rms = _rel_rms(pred, y)
    big = np.abs(y) > 1e-3 * float(np.max(np.abs(y)))
    max_rel = float(np.max(np.abs(pred[big] - y[big]) / np.abs(y[big]))) if np.any(big) else 0.0
    if rms > rms_ceiling:
        raise FitQualityError(
            f"battery surrogate rms error {rms:.4f} exceeds ceiling {rms_ceiling:.4f}"
        )
    return BatterySurrogate(
        alpha=float(alpha), beta=float(beta),
        domain_power=(float(batt.power_min), float(batt.power_max)),
        rms_rel_error=rms, max_rel_error=max_rel,
    )


@dataclass(frozen=True)
class SurrogateSet:
    """The three fitted surrogates used by one optimization run."""

    motor: QuadraticSurrogate
    fuelcell: QuadraticSurrogate
    battery: BatterySurrogate

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "motor": self.motor.to_dict(),
            "fuelcell": self.fuelcell.to_dict(),
            "battery": self.battery.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogateSet":
        return cls(
            motor=QuadraticSurrogate.from_dict(d["motor"]),
            fuelcell=QuadraticSurrogate.from_dict(d["fuelcell"]),
            battery=BatterySurrogate.from_dict(d["battery"]),
        )

import numpy as np
import pytest

from hytrain.components import (
    BatteryParams,
    EfficiencyMap,
    VehicleParams,
    exact_delta_soc,
    synth_fuelcell_map,
    synth_motor_map,
)
from hytrain.errors import FitError, FitQualityError
from hytrain.surrogates import (
    BatterySurrogate,
    QuadraticSurrogate,
    SurrogateSet,
    _project_convex_and_refit,
    fit_battery,
    fit_fuelcell,
    fit_motor,
    fit_quadratic_surface,
    hessian_psd_check,
)

from test_components import desk_battery


def desk_vehicle(**kw) -> VehicleParams:
    base = dict(
        mass=1.0e5, mass_equiv=1.05e5, power_aux=4.0e4,
        force_motor_min=-8.0e4, force_motor_max=8.0e4,
        power_motor_min=-5.0e5, power_motor_max=5.0e5,
        force_brake_min=-2.0e5, power_fc_min=5.0e3, power_fc_max=4.0e5,
    )
    base.update(kw)
    return VehicleParams(**base)


def constant_map(eta: float) -> EfficiencyMap:
    return EfficiencyMap(
        axis_force=np.array([-8.0e4, 0.0, 8.0e4]),
        axis_speed=np.array([0.0, 15.0, 30.0]),
        table=np.full((3, 3), eta),
    )


class TestFitQuadraticSurface:
    def test_recovers_exact_quadratic(self):
        rng = np.random.default_rng(0)
        f = rng.uniform(-5.0e4, 5.0e4, 400)
        z = rng.uniform(1.0, 625.0, 400)
        coeffs = (3.0, 0.5, 2.0, 0.0, 0.01, 4.0e-6)
        y = (
            coeffs[0] + coeffs[1] * z + coeffs[2] * f
            + coeffs[4] * z * z + coeffs[5] * f * f
        )
        fit = fit_quadratic_surface(f, z, y)
        for got, want in zip(fit, coeffs):
            assert got == pytest.approx(want, rel=1e-6, abs=1e-9)

    def test_recovers_cross_term_when_enabled(self):
        rng = np.random.default_rng(1)
        f = rng.uniform(-5.0e4, 5.0e4, 400)
        z = rng.uniform(1.0, 625.0, 400)
        y = 1.0 + 0.2 * z + 1.5 * f + 3.0e-4 * f * np.sqrt(z) + 1.0e-3 * z * z + 2.0e-6 * f * f
        fit = fit_quadratic_surface(f, z, y, include_cross=True)
        assert fit[3] == pytest.approx(3.0e-4, rel=1e-6)

    def test_cross_term_zero_by_default(self):
        rng = np.random.default_rng(2)
        f = rng.uniform(-1.0, 1.0, 50)
        z = rng.uniform(0.5, 2.0, 50)
        fit = fit_quadratic_surface(f, z, f * z)
        assert fit[3] == 0.0

    def test_rank_deficient_raises(self):
        f = np.linspace(-1.0, 1.0, 50)
        z = np.full(50, 4.0)
        with pytest.raises(FitError, match="rank-deficient"):
            fit_quadratic_surface(f, z, f + z)

    def test_too_few_samples(self):
        with pytest.raises(FitError, match="samples"):
            fit_quadratic_surface(
                np.array([1.0, 2.0]), np.array([1.0, 2.0]), np.array([1.0, 2.0])
            )


class TestHessianCheck:
    def surrogate(self, p11: float, p20: float, p02: float) -> QuadraticSurrogate:
        return QuadraticSurrogate(
            p00=0.0, p10=0.0, p01=0.0, p11=p11, p20=p20, p02=p02,
            domain_force=(0.0, 1.0), domain_speed_sq=(0.0, 1.0), rms_rel_error=0.0,
        )

    def test_diagonal_psd_margin(self):
        ok, margin = hessian_psd_check(self.surrogate(0.0, 1.0, 1.0))
        assert ok and margin == pytest.approx(2.0)

    def test_indefinite_cross_term(self):
        # [[2, 3], [3, 2]] has eigenvalues {5, -1}
        ok, margin = hessian_psd_check(self.surrogate(3.0, 1.0, 1.0))
        assert not ok and margin == pytest.approx(-1.0)

    def test_zero_quadratic_is_borderline(self):
        ok, margin = hessian_psd_check(self.surrogate(0.0, 0.0, 0.0))
        assert ok and margin == pytest.approx(0.0)


class TestFitMotor:
    def test_ideal_map_gives_identity(self):
        # with eta = 1 everywhere the demand equals the mechanical force
        s = fit_motor(constant_map(1.0), desk_vehicle())
        assert s.p01 == pytest.approx(1.0, abs=1e-9)
        for coef in (s.p00, s.p10, s.p11, s.p20, s.p02):
            assert coef == pytest.approx(0.0, abs=1e-9)
        assert s.rms_rel_error <= 1e-12

    def test_synth_map_quality_and_convexity(self):
        s = fit_motor(
            synth_motor_map(0.92, 1.5e5, force_max=8.0e4, speed_max=30.0),
            desk_vehicle(),
        )
        assert s.rms_rel_error <= 0.02
        ok, margin = hessian_psd_check(s)
        assert ok and margin >= 0.0
        assert s.p11 == 0.0

    def test_domain_recorded(self):
        veh = desk_vehicle()
        s = fit_motor(constant_map(0.9), veh)
        assert s.domain_force[0] == pytest.approx(veh.force_motor_min)
        assert s.domain_force[1] == pytest.approx(veh.force_motor_max)

    def test_rms_ceiling_enforced(self):
        with pytest.raises(FitQualityError, match="ceiling"):
            fit_motor(
                synth_motor_map(0.92, 1.5e5, force_max=8.0e4, speed_max=30.0),
                desk_vehicle(),
                rms_ceiling=0.0,
            )


class TestFitFuelcell:
    def test_constant_half_efficiency_doubles_force(self):
        s = fit_fuelcell(constant_map(0.5), desk_vehicle())
        assert s.p01 == pytest.approx(2.0, abs=1e-9)
        assert s.p02 == pytest.approx(0.0, abs=1e-12)

    def test_synth_map_quality_and_convexity(self):
        s = fit_fuelcell(
            synth_fuelcell_map(0.55, 1.4e5, power_min=5.0e3, power_max=4.0e5, speed_max=30.0),
            desk_vehicle(),
        )
        assert s.rms_rel_error <= 0.02
        ok, margin = hessian_psd_check(s)
        assert ok and margin >= 0.0


class TestFitBattery:
    def test_zero_resistance_recovers_linear_rate(self):
        batt = desk_battery(resistance=0.0)
        s = fit_battery(batt)
        # rate = P / (U * Q_coulomb): beta = 1 / (600 * 144000)
        assert s.beta == pytest.approx(1.1574074074074074e-08, rel=1e-9)
        assert s.alpha == pytest.approx(0.0, abs=1e-22)
        assert s.rms_rel_error <= 1e-10

    def test_desk_battery_pointwise_error(self):
        batt = desk_battery()
        s = fit_battery(batt)
        assert s.rms_rel_error <= 0.02
        assert s.max_rel_error <= 0.01
        p = np.linspace(batt.power_min, batt.power_max, 501)
        exact = exact_delta_soc(batt, p, 1.0)
        pred = s.evaluate_rate(p)
        big = np.abs(exact) > 1e-3 * np.max(np.abs(exact))
        assert np.max(np.abs(pred[big] - exact[big]) / np.abs(exact[big])) <= 0.01

    def test_ceiling_zero_raises(self):
        with pytest.raises(FitQualityError):
            fit_battery(desk_battery(), rms_ceiling=0.0)


class TestConvexityProjection:
    def test_raw_fit_preserves_concavity(self):
        rng = np.random.default_rng(3)
        f = rng.uniform(-1.0e4, 1.0e4, 300)
        z = rng.uniform(1.0, 400.0, 300)
        y = 1.0e4 + 2.0 * f - 1.0e-5 * f * f
        coeffs = fit_quadratic_surface(f, z, y)
        s = QuadraticSurrogate(
            p00=coeffs[0], p10=coeffs[1], p01=coeffs[2], p11=coeffs[3],
            p20=coeffs[4], p02=coeffs[5],
            domain_force=(-1e4, 1e4), domain_speed_sq=(1.0, 400.0), rms_rel_error=0.0,
        )
        ok, _ = hessian_psd_check(s)
        assert not ok

    def test_projection_clips_negative_curvature(self):
        rng = np.random.default_rng(3)
        f = rng.uniform(-1.0e4, 1.0e4, 300)
        z = rng.uniform(1.0, 400.0, 300)
        y = 1.0e4 + 2.0 * f - 1.0e-5 * f * f
        coeffs = fit_quadratic_surface(f, z, y)
        assert coeffs[5] == pytest.approx(-1.0e-5, rel=1e-6)
        proj = _project_convex_and_refit(f, z, y, coeffs, False)
        assert proj[4] >= 0.0 and proj[5] >= 0.0
        # the affine re-fit keeps roughly the slope of the target; the clipped
        # curvature leaks a little into the linear term
        assert proj[2] == pytest.approx(2.0, rel=1e-2)

    def test_projection_is_identity_on_convex_input(self):
        rng = np.random.default_rng(4)
        f = rng.uniform(-1.0, 1.0, 200)
        z = rng.uniform(0.0, 4.0, 200)
        y = 1.0 + f + 0.5 * f * f + 0.25 * z * z
        coeffs = fit_quadratic_surface(f, z, y)
        assert _project_convex_and_refit(f, z, y, coeffs, False) == coeffs


class TestSerialization:
    def test_round_trip(self):
        s = SurrogateSet(
            motor=fit_motor(constant_map(0.9), desk_vehicle()),
            fuelcell=fit_fuelcell(constant_map(0.5), desk_vehicle()),
            battery=fit_battery(desk_battery()),
        )
        d = s.to_dict()
        assert d["schema_version"] == 1
        back = SurrogateSet.from_dict(d)
        assert back.motor.p01 == s.motor.p01
        assert back.fuelcell.p01 == s.fuelcell.p01
        assert back.battery.beta == s.battery.beta
        assert back.battery.domain_power == s.battery.domain_power

    def test_evaluate_matches_coefficients(self):
        s = QuadraticSurrogate(
            p00=1.0, p10=2.0, p01=3.0, p11=0.5, p20=0.25, p02=0.1,
            domain_force=(-10.0, 10.0), domain_speed_sq=(0.0, 100.0),
            rms_rel_error=0.0,
        )
        # 1 + 2*4 + 3*2 + 0.5*2*2 + 0.25*16 + 0.1*4 = 21.4
        assert s.evaluate(2.0, 4.0) == pytest.approx(21.4)

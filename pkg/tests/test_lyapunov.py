import numpy as np
import pytest

from lagchaos.errors import BlowUpError, DomainError
from lagchaos.flow import AffineField, rk4_cocycle_kernel
from lagchaos.lyapunov import (CocycleRunner, ExponentEstimate, FrozenDriver, SNSDriver,
                               lyapunov_estimates, pooled, spectrum_qr, top_exponent_norm,
                               top_exponent_projective)
from lagchaos.solver import SnsState


def hyperbolic(a):
    return FrozenDriver(AffineField(M=((a, 0.0), (0.0, -a))), 0.01)


class TestFrozenFields:
    def test_hyperbolic_spectrum(self):
        l1, l2 = spectrum_qr(hyperbolic(0.3), 100.0)
        assert l1.value == pytest.approx(0.3, abs=1e-10)
        assert l2.value == pytest.approx(-0.3, abs=1e-10)

    def test_all_estimators_agree(self):
        est = lyapunov_estimates(hyperbolic(0.2), 100.0, v0=(1.0, 1.0))
        for key in ("norm", "qr1", "projective"):
            assert est[key].value == pytest.approx(0.2, abs=2e-2), key
        assert est["sum"].value == pytest.approx(0.0, abs=1e-10)

    def test_shear_has_zero_exponent(self):
        d = FrozenDriver(AffineField(M=((0.0, 1.0), (0.0, 0.0))), 0.01)
        assert abs(top_exponent_norm(d, 1000.0, renorm_interval=10.0).value) < 0.02

    def test_guard_closes_window_early(self):
        r = CocycleRunner(hyperbolic(5.0), renorm_interval=100.0, guard=1e3)
        r.run(10.0)
        est = r.estimates()
        assert len(r.windows["dur"]) > 1
        z = 5.0 * 0.01  # RK4 amplification of x' = 5x per step
        assert est["qr1"].value == pytest.approx(np.log(1 + z + z**2 / 2 + z**3 / 6 + z**4 / 24) / 0.01, abs=1e-9)

    def test_rotation_exponents_vanish(self):
        d = FrozenDriver(AffineField(M=((0.0, -1.0), (1.0, 0.0))), 0.01)
        est = lyapunov_estimates(d, 100.0)
        assert abs(est["qr1"].value) < 1e-8 and abs(est["projective"].value) < 1e-8


class TestBlowUp:
    def test_non_finite_field_is_typed(self):
        d = FrozenDriver(AffineField(M=((np.nan, 0.0), (0.0, 0.0))), 0.01)
        with pytest.raises(BlowUpError):
            CocycleRunner(d).run(1.0)

    def test_kernel_flags_overflow(self):
        PR = np.zeros((5, 3))
        PR[3, 1] = 1e300
        x, A, v = np.array([0.3, 0.2]), np.eye(2), np.array([1.0, 0.0])
        assert np.isnan(rk4_cocycle_kernel(PR, np.zeros((5, 3)), 2, x, A, v, 1e-3))


class TestInputs:
    def test_horizon_floor(self):
        with pytest.raises(DomainError):
            top_exponent_projective(hyperbolic(0.1), 50.0)

    def test_renorm_positive(self):
        with pytest.raises(DomainError):
            CocycleRunner(hyperbolic(0.1), renorm_interval=0.0)

    def test_estimate_validation(self):
        with pytest.raises(DomainError):
            ExponentEstimate(0.1, -1.0, 10.0, 5)


class TestSolverDriven:
    def test_step_and_run_paths_agree(self, solver, burned):
        a = CocycleRunner(SNSDriver(solver, burned, solver.noise_stream(4, 0)), (1.0, 2.0), (0.0, 1.0), 0.1)
        b = CocycleRunner(SNSDriver(solver, burned, solver.noise_stream(4, 0)), (1.0, 2.0), (0.0, 1.0), 0.1)
        a.run(0.3)
        for _ in range(300):
            b.step()
        assert np.array_equal(a.x, b.x) and np.array_equal(a.phi, b.phi)
        assert a.windows == b.windows

    def test_driver_time(self, solver, burned):
        d = SNSDriver(solver, burned, solver.noise_stream(4, 0))
        for _ in range(10):
            d.advance()
        assert d.t == pytest.approx(burned.t + 0.01)


def test_pooled_interval():
    ests = [ExponentEstimate(v, 0.0, 100.0, 20) for v in (1.0, 2.0, 3.0)]
    mean, se, (lo, hi) = pooled(ests)
    assert mean == 2.0
    assert se == pytest.approx(1 / np.sqrt(3))
    assert lo == pytest.approx(2.0 - 4.302652729911275 * se)
    assert hi == pytest.approx(2.0 + 4.302652729911275 * se)

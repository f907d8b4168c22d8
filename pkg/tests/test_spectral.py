import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lagchaos.errors import ConfigurationError, DomainError
from lagchaos.spectral import (SpectralVelocity, WaveVector, eval_basis, eval_velocity,
                               eval_velocity_gradient, eval_velocity_hessian, from_grid,
                               from_low_coordinates, gamma, low_coordinates, low_modes, mode_table,
                               project_high, project_low, sobolev_norm, to_grid, wave_vector)

from conftest import random_velocity

coords = st.floats(0, 2 * np.pi, allow_nan=False)


class TestWaveVectors:
    def test_zero_excluded(self):
        with pytest.raises(DomainError):
            wave_vector((0, 0))

    @pytest.mark.parametrize("k, plus", [((1, 0), True), ((0, 1), True), ((-1, 0), False),
                                         ((0, -1), False), ((-2, 1), True), ((2, -1), False)])
    def test_half_planes(self, k, plus):
        assert wave_vector(k).is_plus is plus
        assert (-wave_vector(k)).is_plus is not plus

    def test_gamma_orthogonal_and_short(self):
        for k in low_modes(4):
            g = gamma(k)
            assert abs(g @ np.array(k)) < 1e-15
            assert np.isclose(np.hypot(*g), 1 / np.sqrt(k.norm2))

    def test_low_mode_count_and_order(self):
        modes = low_modes(4)
        assert len(modes) == 48
        keys = [(k.norm2, k.k1, k.k2) for k in modes]
        assert keys == sorted(keys)
        assert modes[0] == WaveVector(-1, 0)

    def test_mode_table_read_only(self):
        with pytest.raises(ValueError):
            mode_table(3)["k1"][0, 0] = 7


class TestSpectralVelocity:
    def test_mean_mode_rejected(self):
        c = np.zeros((5, 5))
        c[2, 2] = 1.0
        with pytest.raises(DomainError):
            SpectralVelocity(2, c)

    def test_shape_checked(self):
        with pytest.raises(ConfigurationError):
            SpectralVelocity(2, np.zeros((4, 4)))

    def test_arithmetic(self):
        u, w = random_velocity(3, 1), random_velocity(3, 2)
        np.testing.assert_allclose((u + w - w).coeffs, u.coeffs, atol=1e-15)
        np.testing.assert_array_equal((2.0 * u).coeffs, 2 * u.coeffs)

    def test_basis_values(self):
        assert eval_basis((1, 0), (np.pi / 2, 0)) == pytest.approx(1.0)
        assert eval_basis((-1, 0), (0, 0)) == pytest.approx(1.0)

    def test_divergence_free(self):
        u = random_velocity(4, 3)
        x = np.array([0.3, 2.2])
        assert abs(np.trace(eval_velocity_gradient(u, x))) < 1e-12

    @settings(max_examples=25, deadline=None)
    @given(coords, coords)
    def test_gradient_matches_finite_difference(self, a, b):
        u = random_velocity(4, 5)
        x = np.array([a, b])
        h = 1e-6
        fd = np.stack([(eval_velocity(u, x + h * e) - eval_velocity(u, x - h * e)) / (2 * h)
                       for e in np.eye(2)], axis=1)
        np.testing.assert_allclose(eval_velocity_gradient(u, x), fd, atol=1e-7)

    @settings(max_examples=25, deadline=None)
    @given(coords, coords)
    def test_hessian_matches_finite_difference(self, a, b):
        u = random_velocity(4, 6)
        x = np.array([a, b])
        h = 1e-6
        fd = np.stack([(eval_velocity_gradient(u, x + h * e) - eval_velocity_gradient(u, x - h * e)) / (2 * h)
                       for e in np.eye(2)], axis=2)
        np.testing.assert_allclose(eval_velocity_hessian(u, x), fd, atol=1e-6)


class TestProjections:
    def test_split_is_partition(self):
        u = random_velocity(6, 7)
        np.testing.assert_array_equal((project_low(u, 3) + project_high(u, 3)).coeffs, u.coeffs)

    def test_low_coordinates_round_trip(self):
        u = project_low(random_velocity(6, 8), 4)
        np.testing.assert_array_equal(from_low_coordinates(low_coordinates(u, 4), 4, 6).coeffs, u.coeffs)

    def test_sobolev_single_mode(self):
        u = SpectralVelocity.from_modes(3, {(1, 1): 2.0})
        assert sobolev_norm(u, 0) == pytest.approx(2.0)
        assert sobolev_norm(u, 2) == pytest.approx(2.0 * 2.0)  # |k|^2 a_k

    def test_grid_round_trip(self):
        u = random_velocity(5, 9)
        np.testing.assert_allclose(from_grid(to_grid(u, 16), 5).coeffs, u.coeffs, atol=1e-13)

    def test_grid_matches_pointwise(self):
        u = random_velocity(4, 10)
        g = to_grid(u, 12)
        x = 2 * np.pi * np.array([3, 7]) / 12
        np.testing.assert_allclose(g[:, 3, 7], eval_velocity(u, x), atol=1e-13)

    def test_gradient_fields_are_projected_out(self):
        n = 16
        xs = 2 * np.pi * np.arange(n) / n
        X1, X2 = np.meshgrid(xs, xs, indexing="ij")
        grad = np.stack([np.cos(X1) * np.sin(2 * X2), 2 * np.sin(X1) * np.cos(2 * X2)])
        assert np.abs(from_grid(grad, 5).coeffs).max() < 1e-13

    def test_resolution_guard(self):
        with pytest.raises(ConfigurationError):
            to_grid(random_velocity(5, 0), 10)

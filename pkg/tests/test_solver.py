import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lagchaos.errors import BlowUpError, ConfigurationError, DomainError
from lagchaos.rng import NoiseStream, generator, stream_id
from lagchaos.solver import (ForcingSpec, NavierStokes2D, SnsState, SolverConfig, default_solver,
                             energy, enstrophy)
from lagchaos.spectral import (SpectralVelocity, eval_velocity, eval_velocity_gradient, from_grid,
                               low_modes)

from conftest import random_velocity


def grid_advection(u, n):
    xs = 2 * np.pi * np.arange(n) / n
    X = np.stack(np.meshgrid(xs, xs, indexing="ij"), -1)
    U = eval_velocity(u, X)
    G = eval_velocity_gradient(u, X)
    return from_grid(-np.einsum("abij,abj->iab", G, U), u.kmax)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(nu=0), dict(dt=-1), dict(kmax=21, gridsize=60),
                                    dict(kmax=0), dict(dt=1.0)])
    def test_rejects(self, kw):
        with pytest.raises(ConfigurationError):
            SolverConfig(**kw)

    def test_alpha_must_exceed_five(self):
        with pytest.raises(ConfigurationError):
            ForcingSpec(alpha=5.0)

    def test_custom_outside_forced_set(self):
        with pytest.raises(DomainError):
            ForcingSpec(nstar=1, custom={(1, 1): 1.0})

    def test_nstar_above_kmax(self):
        with pytest.raises(ConfigurationError):
            NavierStokes2D(SolverConfig(kmax=3, gridsize=10), ForcingSpec(nstar=4))

    def test_power_law(self):
        f = ForcingSpec(amplitude=2.0, alpha=6.0)
        assert f.qk[low_modes(4)[0]] == 2.0
        assert f.qk[(2, 2)] == pytest.approx(2.0 * 8.0 ** -3)


class TestNonlinearTerm:
    def test_matches_grid_reference(self, small_solver):
        u = random_velocity(5, 1, decay=0.0)
        b = small_solver.nonlinear_term(u)
        ref = grid_advection(u, 16)
        assert np.abs(b.coeffs - ref.coeffs).max() < 1e-12 * np.abs(b.coeffs).max()

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_energy_pairing(self, seed):
        ns = NavierStokes2D(SolverConfig(kmax=5, gridsize=16), ForcingSpec(nstar=2))
        u = random_velocity(5, seed, decay=0.0)
        b = ns.nonlinear_term(u)
        assert abs(np.sum(u.coeffs * b.coeffs)) < 1e-12 * np.linalg.norm(u.coeffs) * np.linalg.norm(b.coeffs)

    def test_shear_is_steady(self, small_solver):
        u = SpectralVelocity.from_modes(5, {(1, 0): 1.0})
        assert np.abs(small_solver.nonlinear_term(u).coeffs).max() < 1e-15

    def test_same_shell_is_steady(self, small_solver):
        u = SpectralVelocity.from_modes(5, {(1, 2): 1.0, (-2, 1): 0.5, (2, -1): -0.3})
        assert np.abs(small_solver.nonlinear_term(u).coeffs).max() < 1e-13

    def test_tangent_matches_difference(self, small_solver):
        u, h = random_velocity(5, 2), random_velocity(5, 3)
        w, dw = small_solver.to_hat(u), small_solver.to_hat(h)
        e = 1e-6
        fd = (small_solver.advection_hat(w + e * dw) - small_solver.advection_hat(w - e * dw)) / (2 * e)
        lin = small_solver.advection_tangent_hat(w, dw)
        assert np.abs(fd - lin).max() < 1e-7 * np.abs(lin).max()


class TestStepping:
    def test_coefficient_layout_round_trip_bit_exact(self, solver):
        w = solver.to_hat(SpectralVelocity.zeros(solver.kmax))
        rng = solver.noise_stream(1, 0)
        for i in range(300):
            solver.advance_hat(w, rng.next(), i)
        assert np.array_equal(solver.hat_from_coeffs(solver.coeffs_from_hat(w)), w)

    def test_single_mode_decay(self):
        ns = default_solver(amplitude=0.0)
        st0 = SnsState(SpectralVelocity.from_modes(21, {(1, 0): 1.0}))
        out = ns.burn_in(st0, ns.noise_stream(1), 1.0)
        assert abs(out.u[(1, 0)] / math.exp(-0.05) - 1) < 1e-10
        assert out.t == pytest.approx(1.0)

    def test_noise_only_touches_forced_modes(self):
        ns = NavierStokes2D(SolverConfig(kmax=8, gridsize=26), ForcingSpec(nstar=2), debug=True)
        w = ns.to_hat(SpectralVelocity.zeros(8))
        ns.advance_hat(w, ns.noise_stream(0).next())
        a = ns.to_velocity(w)
        forced = {tuple(k) for k in low_modes(2)}
        K = 8
        for k1 in range(-K, K + 1):
            for k2 in range(-K, K + 1):
                if (k1, k2) not in forced:
                    assert a.coeffs[k1 + K, k2 + K] == 0.0

    def test_step_is_deterministic(self, solver):
        st0 = SnsState(random_velocity(21, 4, decay=3.0))
        a = solver.step(st0, solver.noise_stream(9, 2))
        b = solver.step(st0, solver.noise_stream(9, 2))
        assert np.array_equal(a.u.coeffs, b.u.coeffs)

    def test_blowup_is_typed(self):
        ns = NavierStokes2D(SolverConfig(kmax=5, gridsize=16), ForcingSpec(nstar=2))
        w = ns.to_hat(random_velocity(5, 0, decay=0.0))
        w[1, 1] = np.nan
        with pytest.raises(BlowUpError) as info:
            ns.advance_hat(w, np.zeros(ns.m), 7, 0.007)
        assert info.value.record["step"] == 7

    def test_energy_and_enstrophy(self):
        u = SpectralVelocity.from_modes(3, {(1, 1): 2.0, (0, 1): 1.0})
        assert energy(u) == 5.0
        assert enstrophy(u) == 9.0


class TestNoiseStream:
    def test_draw_depends_only_on_key(self):
        a = NoiseStream(5, 3, 4)
        b = NoiseStream(5, 3, 4, counter=2000)
        first = [a.next().copy() for _ in range(2001)]
        assert np.array_equal(first[2000], b.next())
        assert np.array_equal(first[17], b.draw(17))

    def test_streams_differ(self):
        assert not np.array_equal(NoiseStream(5, 3, 4).next(), NoiseStream(5, 4, 4).next())
        assert not np.array_equal(NoiseStream(5, 3, 4).next(), NoiseStream(6, 3, 4).next())

    def test_stream_ids_disjoint(self):
        ids = {stream_id(i, k) for i in range(50) for k in range(3)}
        assert len(ids) == 150

    def test_generator_reproducible(self):
        assert generator(1, 2).uniform() == generator(1, 2).uniform()

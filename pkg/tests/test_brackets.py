import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lagchaos.brackets import (BundleVector, bracket_coefficient, bracket_ek_fbar, bracket_fd,
                               fbar_eval, lower_bound_check, spanning_rank, upsilon_q)
from lagchaos.errors import DomainError
from lagchaos.flow import projective_drift
from lagchaos.malliavin import TrajectoryRecord, evolve_S
from lagchaos.solver import default_solver
from lagchaos.spectral import SpectralVelocity, eval_velocity, low_modes

SPAN = [(1, 0), (0, 1), (-1, 0), (0, -1)]
angles = st.floats(0, 2 * np.pi, allow_nan=False)
X, V = np.array([1.3, 4.0]), np.array([np.cos(0.7), np.sin(0.7)])


def test_fbar_is_particle_drift(burned):
    f = fbar_eval(burned.u, X, V)
    np.testing.assert_allclose(f.bx, eval_velocity(burned.u, X), atol=1e-13)
    np.testing.assert_allclose(f.bv, projective_drift(burned.u, X, V), atol=1e-12)


@pytest.mark.parametrize("k", [(1, 0), (2, -3), (-3, 1), (5, 5)])
def test_bracket_coefficient_is_stored_coefficient(burned, k):
    assert bracket_coefficient(burned.u, k) == pytest.approx(burned.u[k], abs=1e-13)


def test_closed_form_values():
    b = bracket_ek_fbar((0, 0), (1, 0), (0, 1))
    np.testing.assert_allclose(b.bx, [0, 0], atol=1e-16)
    np.testing.assert_allclose(b.bv, [0, 0], atol=1e-16)
    b = bracket_ek_fbar((0, 0), (0, 1), (-1, 0))
    np.testing.assert_allclose(b.bx, [0, 1])


def test_bracket_matches_difference(burned):
    worst = 0.0
    for k in low_modes(4):
        c = bracket_ek_fbar(X, V, k).to_array()
        d = bracket_fd(burned.u, X, V, k).to_array()
        worst = max(worst, np.linalg.norm(c - d) / max(np.linalg.norm(c), 1e-300))
    assert worst < 1e-6


def test_tangent_check():
    with pytest.raises(DomainError):
        BundleVector([0, 0], [1, 0]).check_tangent(np.array([1.0, 0.0]))
    with pytest.raises(DomainError):
        bracket_ek_fbar(X, (2.0, 0.0), (1, 0))


@settings(max_examples=100, deadline=None)
@given(angles, angles, angles)
def test_spanning_rank_three(a, b, th):
    assert spanning_rank((a, b), (np.cos(th), np.sin(th)), SPAN) == 3


@settings(max_examples=100, deadline=None)
@given(angles, angles, angles)
def test_collinear_set_never_spans(a, b, th):
    assert spanning_rank((a, b), (np.cos(th), np.sin(th)), [(1, 0), (-1, 0), (2, 0), (-2, 0)]) <= 2


def test_empty_set():
    assert spanning_rank(X, V, []) == 0


def test_upsilon_at_rest_is_dissipation(solver):
    u0 = SpectralVelocity.zeros(solver.kmax)
    U = upsilon_q(u0, X, V, (1, 2), solver)
    i = low_modes(4).index((1, 2))
    expect = np.zeros(len(U.fu))
    expect[i] = solver.forcing.q[i] * 0.05 * 5
    np.testing.assert_allclose(U.fu, expect, atol=1e-15)


def test_upsilon_rejects_unforced(solver, burned):
    with pytest.raises(DomainError):
        upsilon_q(burned.u, X, V, (5, 0), solver)


def test_short_time_drift_converges_linearly(burned):
    errs = []
    for dt in (1e-3, 5e-4, 2.5e-4):
        s = default_solver(dt=dt)
        rec = TrajectoryRecord(s, burned, X, V, dt)
        S = evolve_S(rec, 0, dt).mat
        e = 0.0
        for i, k in enumerate(low_modes(4)):
            drift = (S @ rec.Q[:, i] - rec.Q[:, i]) / dt
            U = upsilon_q(burned.u, X, V, k, s).to_array()
            e = max(e, np.linalg.norm(drift - U) / np.linalg.norm(U))
        errs.append(e)
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(1.7 < r < 2.3 for r in ratios), errs


def test_lower_bound_positive(solver, burned):
    r = np.random.default_rng(0)
    samples = []
    for _ in range(50):
        a = r.uniform(0, 2 * np.pi)
        v = np.array([np.cos(a), np.sin(a)])
        h = r.standard_normal(solver.m + 4)
        h[-2:] = h[-1] * np.array([-v[1], v[0]])
        samples.append((r.uniform(0, 2 * np.pi, 2), v, h))
    rep = lower_bound_check(burned.u, samples, solver)
    assert rep.positive and rep.values.shape == (50,)

"""Fast analytic-oracle suite behind the ``validate`` subcommand."""

import math

import numpy as np

from ..brackets import bracket_ek_fbar, bracket_fd, spanning_rank
from ..flow import SpectralField, joint_step
from ..malliavin import (TrajectoryRecord, evolve_R, evolve_S, low_block_drift,
                         ltilde_apply, tangent_basis)
from ..rng import generator
from ..solver import ForcingSpec, NavierStokes2D, SnsState, SolverConfig
from ..spectral import SpectralVelocity, low_modes
from .checkpoint import Checkpoint, from_bytes, to_bytes
from .monitors import super_lyapunov_V


def _decay(config):
    cfg = SolverConfig(nu=0.05, dt=1e-3, kmax=config.kmax, gridsize=config.gridsize)
    ns = NavierStokes2D(cfg, ForcingSpec(amplitude=0.0))
    u = SpectralVelocity.from_modes(cfg.kmax, {(1, 0): 1.0})
    w = ns.to_hat(u)
    for n in range(1000):
        ns.advance_hat(w, np.zeros(ns.m), n)
    a = ns.to_velocity(w)[(1, 0)]
    return abs(a - math.exp(-0.05)) / math.exp(-0.05), 1e-10


def _pairing(config, u):
    ns = config.make_solver()
    b = ns.nonlinear_term(u)
    return abs(np.sum(u.coeffs * b.coeffs)) / (np.linalg.norm(u.coeffs) * np.linalg.norm(b.coeffs)), 1e-12


def _volume(u, g):
    fld = SpectralField.from_velocity(u)
    x, A, v = g.uniform(0, 2 * np.pi, 2), np.eye(2), np.array([1.0, 0.0])
    for _ in range(1000):
        x, A, v, _ = joint_step(fld, x, A, v, 1e-3)
    return abs(np.linalg.det(A) - 1.0), 1e-6


def _ltilde(config, u, g):
    ns = config.make_solver()
    m = len(low_modes(config.nstar))
    x = g.uniform(0, 2 * np.pi, 2)
    a = g.uniform(0, 2 * np.pi)
    v = np.array([np.cos(a), np.sin(a)])
    h = tangent_basis(v, m) @ g.standard_normal(m + 3)
    L = ltilde_apply(u, x, v, h, config.nu, config.nstar, project=False)
    K = u.kmax
    modes = low_modes(config.nstar)

    def drift(e):
        c = u.coeffs.copy()
        for i, k in enumerate(modes):
            c[k.k1 + K, k.k2 + K] += e * h[i]
        return low_block_drift(SpectralVelocity(K, c), x + e * h[m:m + 2], v + e * h[m + 2:],
                               config.nu, config.nstar, ns)

    fd = (drift(1e-6) - drift(-1e-6)) / 2e-6
    return np.linalg.norm(fd - L) / np.linalg.norm(L), 1e-5


def _inverse(config, state, g):
    ns = config.make_solver()
    x = g.uniform(0, 2 * np.pi, 2)
    a = g.uniform(0, 2 * np.pi)
    v = np.array([np.cos(a), np.sin(a)])
    rec = TrajectoryRecord(ns, state, x, v, 0.5, rng=ns.noise_stream(config.seed, 99))
    R = evolve_R(rec, 0.1, 0.5).mat
    S = evolve_S(rec, 0.1, 0.5).mat
    P = tangent_basis(rec.vs[rec.index(0.1)], rec.m)
    return float(np.abs((S @ R - np.eye(rec.m + 4)) @ P).max()), 1e-6


def _bracket(u, g):
    worst = 0.0
    for _ in range(5):
        x = g.uniform(0, 2 * np.pi, 2)
        a = g.uniform(0, 2 * np.pi)
        v = np.array([np.cos(a), np.sin(a)])
        for k in low_modes(2):
            c = bracket_ek_fbar(x, v, k).to_array()
            d = bracket_fd(u, x, v, k).to_array()
            worst = max(worst, np.linalg.norm(c - d) / max(np.linalg.norm(c), 1e-12))
    return worst, 1e-6


def _spanning(g):
    bad = 0
    for _ in range(100):
        a = g.uniform(0, 2 * np.pi)
        bad += spanning_rank(g.uniform(0, 2 * np.pi, 2), (math.cos(a), math.sin(a)),
                             ((1, 0), (0, 1), (-1, 0), (0, -1))) != 3
    return float(bad), 0.5


def _checkpoint(u, g):
    ck = Checkpoint(SnsState(u, 1.25), g.uniform(0, 6, 2), np.array([0.6, 0.8]), g.standard_normal((2, 2)),
                    (7, 11), g.standard_normal(5))
    b = to_bytes(ck)
    return float(to_bytes(from_bytes(b)) != b), 0.5


def _lyapunov_V():
    u = SpectralVelocity.from_modes(4, {(1, 0): 1.0})
    return abs(super_lyapunov_V(u, 1.0, 1.0) - 2.0), 1e-14


def run_validation(config):
    """List of (name, value, tolerance, passed)."""
    g = generator(config.seed, 2 ** 40)
    ns = config.make_solver()
    state = ns.burn_in(SnsState(SpectralVelocity.zeros(ns.kmax), 0.0), ns.noise_stream(config.seed, 2 ** 41), 2.0)
    u = state.u
    checks = [
        ("single_mode_decay", lambda: _decay(config)),
        ("energy_pairing", lambda: _pairing(config, u)),
        ("volume_conservation", lambda: _volume(u, g)),
        ("ltilde_fd", lambda: _ltilde(config, u, g)),
        ("inverse_propagator", lambda: _inverse(config, state, g)),
        ("bracket_fd", lambda: _bracket(u, g)),
        ("spanning_failures", lambda: _spanning(g)),
        ("checkpoint_roundtrip", lambda: _checkpoint(u, g)),
        ("super_lyapunov_single_mode", _lyapunov_V),
    ]
    out = []
    for name, fn in checks:
        try:
            value, tol = fn()
            out.append((name, float(value), tol, bool(value < tol)))
        except Exception as exc:  # a crashing oracle is a failed oracle
            out.append((f"{name} ({type(exc).__name__}: {exc})", float("nan"), 0.0, False))
    return out

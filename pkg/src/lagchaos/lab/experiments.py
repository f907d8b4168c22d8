"""Per-member pipelines. Each task is a pure function of (config, index)."""

import math
from pathlib import Path

import numpy as np

from ..brackets import lower_bound_check, spanning_rank
from ..errors import BlowUpError, NonDegeneracyError
from ..lyapunov import CocycleRunner, SNSDriver
from ..malliavin import (TangentVector, TrajectoryRecord, assemble_N, build_control, residual,
                         tangent_basis)
from ..rng import STREAM_INIT, STREAM_NOISE, generator, stream_id
from ..solver import SnsState, energy, enstrophy
from ..spectral import SpectralVelocity, low_modes
from .checkpoint import Checkpoint, checkpoint_load, checkpoint_save
from .monitors import MomentMonitor

SPAN_SET = ((1, 0), (0, 1), (-1, 0), (0, -1))
COLLINEAR_SET = ((1, 0), (-1, 0), (2, 0), (-2, 0))
_SERIES = ("norm", "r11", "r22", "proj", "dur")


def initial_particle(config, index):
    g = generator(config.seed, stream_id(index, STREAM_INIT))
    x = g.uniform(0.0, 2 * np.pi, 2)
    a = g.uniform(0.0, 2 * np.pi)
    return x, np.array([np.cos(a), np.sin(a)]), g


def burned_in(config, solver, index):
    rng = solver.noise_stream(config.seed, stream_id(index, STREAM_NOISE))
    state = solver.burn_in(SnsState(SpectralVelocity.zeros(solver.kmax), 0.0), rng, config.burn_in)
    return state, rng


# cocycle runs with checkpoint/resume

def _pack(runner):
    w = runner.windows
    nw = len(w["dur"])
    acc = [*runner.a_norm.ravel(), *runner.q.ravel(), runner.window_ell, nw]
    for key in _SERIES:
        acc.extend(w[key])
    return np.array(acc, dtype=float)


def _unpack(runner, acc):
    runner.a_norm = acc[0:4].reshape(2, 2).copy()
    runner.q = acc[4:8].reshape(2, 2).copy()
    runner.window_ell = float(acc[8])
    nw = int(acc[9])
    pos = 10
    for key in _SERIES:
        runner.windows[key] = [float(v) for v in acc[pos:pos + nw]]
        pos += nw


def _save_runner(path, runner, driver, t0):
    counters = (driver.rng.counter, driver.step_index, runner.steps, runner.window_steps)
    ck = Checkpoint(SnsState(driver.velocity(), t0), runner.x.copy(), runner.v.copy(), runner.phi.copy(),
                    counters, _pack(runner))
    checkpoint_save(ck, path)


def _load_runner(path, config, solver, index):
    ck = checkpoint_load(path)
    rng_counter, step_index, steps, window_steps = ck.counters
    rng = solver.noise_stream(config.seed, stream_id(index, STREAM_NOISE), rng_counter)
    driver = SNSDriver(solver, ck.state, rng)
    driver.step_index = step_index
    runner = CocycleRunner(driver, ck.x, ck.v, config.renorm_interval)
    # the constructor normalizes; restore the exact stored values
    runner.x[:] = ck.x
    runner.v[:] = ck.v
    runner.phi = ck.A.copy()
    runner.steps = steps
    runner.window_steps = window_steps
    _unpack(runner, ck.accumulators)
    return runner, driver, ck.state.t


def checkpoint_path(config, index):
    return Path(config.out) / "checkpoints" / f"member_{index:04d}.lcl"


def cocycle_task(config, index):
    """Exponent estimates for one trajectory; honours checkpoint_every/stop_at/resume."""
    solver = config.make_solver()
    dt = solver.dt
    total = int(round(config.horizon / dt))
    ck_path = checkpoint_path(config, index)
    use_ck = config.checkpoint_every > 0 or config.stop_at > 0
    if config.resume and ck_path.exists():
        runner, driver, t0 = _load_runner(ck_path, config, solver, index)
    else:
        x0, v0, _ = initial_particle(config, index)
        state, rng = burned_in(config, solver, index)
        driver = SNSDriver(solver, state, rng)
        runner = CocycleRunner(driver, x0, v0, config.renorm_interval)
        t0 = state.t
    seg = int(round(config.checkpoint_every / dt)) if config.checkpoint_every > 0 else total
    stop = int(round(config.stop_at / dt)) if config.stop_at > 0 else None
    if use_ck:
        ck_path.parent.mkdir(parents=True, exist_ok=True)
    try:
        while runner.steps < total:
            target = min(total, (runner.steps // seg + 1) * seg)
            if stop is not None and runner.steps < stop:
                target = min(target, stop)
            runner.run((target - runner.steps) * dt)
            if use_ck:
                _save_runner(ck_path, runner, driver, t0)
            if stop is not None and runner.steps >= stop and runner.steps < total:
                return {"index": index, "status": "interrupted", "steps": runner.steps}
    except BlowUpError as exc:
        return {"index": index, "status": "blowup", "record": exc.record}
    est = runner.estimates()
    out = {"index": index, "status": "ok", "horizon": est["qr1"].horizon}
    for key, e in est.items():
        out[key] = e.value
        out[key + "_stderr"] = e.stderr
    return out


# Malliavin statistics

def random_tangent(g, solver, v):
    """Unit full tangent vector: Gaussian velocity modes, x, and v-perp parts."""
    K = solver.kmax
    c = g.standard_normal((2 * K + 1, 2 * K + 1))
    c[K, K] = 0.0
    hx = g.standard_normal(2)
    s = g.standard_normal()
    nrm = math.sqrt(np.sum(c ** 2) + hx @ hx + s * s)
    return TangentVector(SpectralVelocity(K, c / nrm), hx / nrm, (s / nrm) * np.array([-v[1], v[0]]))


def malliavin_task(config, index, with_residual=True):
    solver = config.make_solver()
    x0, v0, g = initial_particle(config, index)
    try:
        state, rng = burned_in(config, solver, index)
        rec = TrajectoryRecord(solver, state, x0, v0, config.T0, rng=rng)
    except BlowUpError as exc:
        return {"index": index, "status": "blowup", "record": exc.record}
    N = assemble_N(rec, config.tau0, config.T0, config.quadrature_dt)
    ev = N.tangent_eigvals()
    out = {"index": index, "status": "ok", "lambda_min": float(ev[0]),
           "cond_N": float(ev[-1] / ev[0]) if ev[0] > 0 else math.inf,
           "rho_low": math.nan, "rho_high": math.nan, "cost_l2": math.nan, "rho_rel": math.nan}
    if with_residual:
        h = random_tangent(g, solver, rec.v0)
        try:
            rep = residual(rec, h, config.tau0, config.T0, config.quadrature_dt)
            ctrl = build_control(rec, config.tau0, config.T0, h, config.quadrature_dt)
            out.update(rho_low=rep.rho_low, rho_high=rep.rho_high, cost_l2=ctrl.cost_l2,
                       rho_rel=rep.rho_total / rep.jh_norm, discrepancy=rep.discrepancy)
        except NonDegeneracyError as exc:
            out["status"] = f"degenerate: {exc}"
    return out


def frozen_singularity(config):
    """Frozen-dynamics N: u-block (T0 - tau0) diag(q^2), manifold block exactly zero."""
    solver = config.make_solver()
    x0, v0, _ = initial_particle(config, 0)
    rec = TrajectoryRecord.noiseless(solver, SpectralVelocity.zeros(solver.kmax), x0, v0, config.T0,
                                     frozen=True)
    N = assemble_N(rec, config.tau0, config.T0, config.quadrature_dt)
    m = rec.m
    expect = (config.T0 - config.tau0) * solver.forcing.q ** 2
    return {
        "manifold_block_max": float(np.abs(N.mat[m:, :]).max()),
        "u_block_error": float(np.abs(np.diag(N.mat)[:m] - expect).max() / expect.max()),
        "lambda_min": N.lambda_min,
    }


# spanning

def spanning_task(config):
    g = generator(config.seed, stream_id(0, STREAM_INIT))
    rows = []
    for _ in range(config.points):
        x = g.uniform(0.0, 2 * np.pi, 2)
        a = g.uniform(0.0, 2 * np.pi)
        v = np.array([np.cos(a), np.sin(a)])
        rows.append((float(x[0]), float(x[1]), float(a), spanning_rank(x, v, SPAN_SET),
                     spanning_rank(x, v, COLLINEAR_SET)))
    return rows


def lower_bound_task(config):
    solver = config.make_solver()
    state, _ = burned_in(config, solver, 0)
    g = generator(config.seed, stream_id(0, STREAM_INIT) + 2)
    m = len(low_modes(config.nstar))
    samples = []
    for _ in range(config.points):
        x = g.uniform(0.0, 2 * np.pi, 2)
        a = g.uniform(0.0, 2 * np.pi)
        v = np.array([np.cos(a), np.sin(a)])
        h = tangent_basis(v, m) @ g.standard_normal(m + 3)
        samples.append((x, v, h))
    rep = lower_bound_check(state.u, samples, solver)
    return {"minimum": rep.minimum, "u_low_norm": rep.u_low_norm, "positive": rep.positive}


# plain simulation

def simulate_task(config, index):
    solver = config.make_solver()
    rng = solver.noise_stream(config.seed, stream_id(index, STREAM_NOISE))
    cadence = config.checkpoint_every if config.checkpoint_every > 0 else 1.0
    every = max(1, int(round(cadence / solver.dt)))
    nburn = int(round(config.burn_in / solver.dt))
    total = nburn + int(round(config.horizon / solver.dt))
    mon = MomentMonitor(window=10, eta=config.moment_eta, sigma=config.v_sigma, alpha_V=config.v_alpha)
    w = solver.to_hat(SpectralVelocity.zeros(solver.kmax))
    rows = []
    status = "ok"
    try:
        for n in range(1, total + 1):
            solver.advance_hat(w, rng.next(), n - 1, (n - 1) * solver.dt)
            if n > nburn and (n - nburn) % every == 0:
                u = solver.to_velocity(w)
                t = n * solver.dt
                mon.update(t, u)
                rows.append((index, t, energy(u), enstrophy(u), mon.V[-1]))
    except BlowUpError:
        status = "blowup"
    rep = mon.report()
    return {"index": index, "status": status, "rows": rows, "flagged": rep.flagged,
            "exp_moment_grad": rep.exp_moment_grad, "exp_moment_V": rep.exp_moment_V,
            "window_sup_grad": rep.window_sup_grad.tolist()}

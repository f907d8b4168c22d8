"""
Lyapunov exponent estimators for the Lagrangian derivative cocycle.

A trajectory driver supplies the frozen velocity for the current step and
advances the base dynamics. The :class:`CocycleRunner` integrates (x, A, v)
along the driver and closes a renormalization window every
``renorm_interval`` time units (or earlier if the window propagator exceeds
the overflow guard). Each window contributes one increment per estimator:

* norm growth: log ||Phi A_n|| with A_n kept at unit norm,
* QR (Benettin): log |R_11|, log |R_22| of Phi Q = Q' R,
* projective: the integral of <v, Du v> over the window.

Error bars are batch means over contiguous groups of windows.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import BlowUpError, DomainError
from .flow import SpectralField, as_field, joint_step, rk4_cocycle_kernel

NORM_GUARD = 1e8
DEFAULT_BATCHES = 20


@dataclass(frozen=True)
class ExponentEstimate:
    value: float
    stderr: float
    horizon: float
    batches: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise DomainError("horizon must be positive")
        if self.stderr < 0:
            raise DomainError("stderr must be non-negative")


class FrozenDriver:
    """A time-independent velocity (spectral field, SpectralVelocity or test hook)."""

    def __init__(self, field, dt):
        self._field = as_field(field)
        self.dt = float(dt)
        self.t = 0.0
        self.step_index = 0

    def field(self):
        return self._field

    def advance(self):
        self.step_index += 1
        self.t = self.step_index * self.dt


class SNSDriver:
    """Velocity trajectory of the stochastic Navier-Stokes solver.

    The driver owns a copy of the vorticity coefficients and a noise stream;
    :meth:`field` returns the velocity at the start of the current step,
    which is frozen across the particle RK4 step.
    """

    def __init__(self, solver, state, rng):
        self.solver = solver
        self.w = solver.to_hat(state.u)
        self.rng = rng
        self.dt = solver.dt
        self.t0 = float(state.t)
        self.step_index = 0
        self._dense = None

    @property
    def t(self):
        return self.t0 + self.step_index * self.dt

    def dense_stream(self):
        if self._dense is None:
            self._dense = self.solver.stream_dense(self.w)
        return self._dense

    def field(self):
        PR, PI = self.dense_stream()
        return SpectralField(PR, PI, self.solver.kmax)

    def advance(self):
        self.solver.advance_hat(self.w, self.rng.next(), self.step_index, self.t)
        self.step_index += 1
        self._dense = None

    def velocity(self):
        return self.solver.to_velocity(self.w)


def _batch_stats(increments, durations, batches):
    """Value and batch-means standard error of a rate from window increments."""
    inc = np.asarray(increments, dtype=float)
    dur = np.asarray(durations, dtype=float)
    T = dur.sum()
    value = inc.sum() / T
    n = len(inc)
    B = min(batches, n)
    if B < 2:
        return value, float("nan"), B
    edges = np.linspace(0, n, B + 1).round().astype(int)
    means = np.array([inc[a:b].sum() / dur[a:b].sum() for a, b in zip(edges[:-1], edges[1:])])
    # weight-free batch means: batches have (near) equal durations
    return value, float(means.std(ddof=1) / np.sqrt(B)), B


class CocycleRunner:
    """Joint integration of (x, A, v) along a driver with windowed accumulation."""

    def __init__(self, driver, x0=(0.0, 0.0), v0=(1.0, 0.0), renorm_interval=1.0,
                 guard=NORM_GUARD, substeps=1):
        if renorm_interval <= 0:
            raise DomainError("renorm_interval must be positive")
        self.driver = driver
        self.x = np.mod(np.array(x0, dtype=float), 2 * np.pi)
        v = np.array(v0, dtype=float)
        self.v = v / np.hypot(v[0], v[1])
        self.renorm_steps = max(1, int(round(renorm_interval / driver.dt)))
        self.guard = guard
        self.substeps = substeps
        self.phi = np.eye(2)          # propagator of the open window
        self.a_norm = np.eye(2)       # norm-growth representative, unit norm
        self.q = np.eye(2)            # QR frame
        self.window_steps = 0
        self.window_ell = 0.0
        self.steps = 0
        self.windows = {"norm": [], "r11": [], "r22": [], "proj": [], "dur": []}

    def step(self):
        d = self.driver
        if isinstance(d, SNSDriver) and self.substeps == 1:
            PR, PI = d.dense_stream()
            dl = rk4_cocycle_kernel(PR, PI, d.solver.kmax, self.x, self.phi, self.v, d.dt)
        else:
            self.x, self.phi, self.v, dl = joint_step(d.field(), self.x, self.phi, self.v, d.dt,
                                                      self.substeps)
        if not math.isfinite(dl):
            self._blowup()
        self.window_ell += dl
        d.advance()
        self.steps += 1
        self.window_steps += 1
        if self.window_steps >= self.renorm_steps or np.abs(self.phi).max() > self.guard:
            self.close_window()

    def _blowup(self):
        d = self.driver
        raise BlowUpError("non-finite particle cocycle", {"t": d.t, "step": d.step_index})

    def close_window(self):
        if self.window_steps == 0:
            return
        dt = self.driver.dt
        m = self.phi @ self.a_norm
        nrm = np.linalg.norm(m, 2)
        self.a_norm = m / nrm
        q, r = np.linalg.qr(self.phi @ self.q)
        sgn = np.sign(np.diag(r))
        sgn[sgn == 0] = 1.0
        self.q = q * sgn
        r = r * sgn[:, None]
        w = self.windows
        w["norm"].append(np.log(nrm))
        w["r11"].append(np.log(abs(r[0, 0])))
        w["r22"].append(np.log(abs(r[1, 1])))
        w["proj"].append(self.window_ell)
        w["dur"].append(self.window_steps * dt)
        self.phi = np.eye(2)
        self.window_steps = 0
        self.window_ell = 0.0

    def run(self, T):
        n = int(round(T / self.driver.dt))
        d = self.driver
        if not (isinstance(d, SNSDriver) and self.substeps == 1):
            for _ in range(n):
                self.step()
            return self
        # hot loop for the solver-driven case; same arithmetic as step()
        solver, kernel = d.solver, rk4_cocycle_kernel
        K, dt, x, v = solver.kmax, d.dt, self.x, self.v
        for _ in range(n):
            PR, PI = d.dense_stream()
            dl = kernel(PR, PI, K, x, self.phi, v, dt)
            if not math.isfinite(dl):
                self._blowup()
            self.window_ell += dl
            d.advance()
            self.steps += 1
            self.window_steps += 1
            if self.window_steps >= self.renorm_steps or np.abs(self.phi).max() > self.guard:
                self.close_window()
        return self

    def finish(self):
        self.close_window()
        return self

    @property
    def tangent(self):
        """Current cocycle representative up to the accumulated log-norm."""
        return self.phi @ self.a_norm

    def estimates(self, batches=DEFAULT_BATCHES):
        """ExponentEstimates keyed by 'norm', 'qr1', 'qr2', 'projective', 'sum'."""
        self.finish()
        w = self.windows
        dur = np.array(w["dur"])
        T = float(dur.sum())
        out = {}
        series = {"norm": w["norm"], "qr1": w["r11"], "qr2": w["r22"], "projective": w["proj"],
                  "sum": np.add(w["r11"], w["r22"])}
        for key, inc in series.items():
            val, se, B = _batch_stats(inc, dur, batches)
            out[key] = ExponentEstimate(float(val), float(se) if np.isfinite(se) else 0.0, T, B)
        return out


def _check_horizon(T, renorm_interval):
    if T < 100 * renorm_interval * (1 - 1e-12):
        raise DomainError("horizon must be at least 100 renormalization intervals")


def lyapunov_estimates(driver, T, renorm_interval=1.0, x0=(0.0, 0.0), v0=(1.0, 0.0),
                       batches=DEFAULT_BATCHES, substeps=1):
    """All estimators from a single pass over the driver."""
    _check_horizon(T, renorm_interval)
    runner = CocycleRunner(driver, x0, v0, renorm_interval, substeps=substeps)
    runner.run(T)
    return runner.estimates(batches)


def top_exponent_norm(driver, T, renorm_interval=1.0, **kw):
    """Top exponent from the growth of ||A_t|| with periodic renormalization."""
    return lyapunov_estimates(driver, T, renorm_interval, **kw)["norm"]


def spectrum_qr(driver, T, renorm_interval=1.0, **kw):
    """(lambda_1, lambda_2) from QR re-orthonormalization."""
    est = lyapunov_estimates(driver, T, renorm_interval, **kw)
    return est["qr1"], est["qr2"]


def top_exponent_projective(driver, T, renorm_interval=1.0, **kw):
    """Time average of <v_t, Du_t(x_t) v_t> along the projective process."""
    return lyapunov_estimates(driver, T, renorm_interval, **kw)["projective"]


def pooled(estimates, confidence=0.95):
    """Pool per-trajectory estimates of equal horizon.

    Returns (mean, stderr, (lo, hi)) where stderr is the between-trajectory
    standard error and the interval uses Student's t with n-1 dof.
    """
    from scipy import stats

    vals = np.array([e.value for e in estimates])
    n = len(vals)
    mean = float(vals.mean())
    if n < 2:
        se = float(estimates[0].stderr) if n else float("nan")
        tq = stats.norm.ppf(0.5 + confidence / 2)
    else:
        se = float(vals.std(ddof=1) / np.sqrt(n))
        tq = stats.t.ppf(0.5 + confidence / 2, n - 1)
    return mean, se, (mean - tq * se, mean + tq * se)

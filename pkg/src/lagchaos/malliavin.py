"""
Low-mode propagators, the partial Malliavin matrix and control matching.

Coordinates
-----------
The low space H_l x T_x T^2 x T_v S^1 is embedded in R^(m+4) as
``[hu (m low modes, canonical order), hx (2), hv (2)]``; hv is kept tangent
(<v, hv> = 0) by re-projection, and eigen/inverse computations are done on
the (m+3)-dimensional tangent subspace spanned by :func:`tangent_basis`.

Discretization
--------------
Every linear object is the exact tangent-linear model of the discrete
scheme used to produce the base trajectory, so the linear algebra identities
(S R = Id, control matching, the residual representation) hold to roundoff
rather than to O(dt):

* velocity block: h <- E (h + dt DN(u_n)[h]) (exponential Euler),
* particle blocks: derivative of the frozen-velocity RK4 step,
* direction: derivative of v <- v/|v|; the propagator matrices also send
  the normal direction at v_n to the normal at v_{n+1}, so R is invertible
  and maps tangent spaces onto tangent spaces exactly,
* S_{n+1} = S_n Phi_n^{-1}, the discrete inverse flow (S' = -S L~),
* N and the control forcing use trapezoidal weights on the quadrature grid.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import BlowUpError, DomainError, IllConditionedError, NonDegeneracyError
from .flow import SpectralField, TWO_PI, rk4_cocycle_kernel
from .solver import ForcingSpec, NavierStokes2D, SnsState, SolverConfig
from .spectral import SpectralVelocity, low_modes, mode_table

COND_LIMIT_N = 1e10
COND_LIMIT_R = 1e12


# low-mode coordinates

@dataclass(frozen=True, eq=False)
class LowModeVector:
    hu: np.ndarray
    hx: np.ndarray
    hv: np.ndarray

    def __post_init__(self):
        for name in ("hu", "hx", "hv"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))

    @classmethod
    def from_array(cls, arr, m):
        arr = np.asarray(arr, dtype=float)
        return cls(arr[:m], arr[m:m + 2], arr[m + 2:m + 4])

    def to_array(self):
        return np.concatenate([self.hu, self.hx, self.hv])

    def projected(self, v):
        v = np.asarray(v, dtype=float)
        return LowModeVector(self.hu, self.hx, self.hv - (v @ self.hv) * v)


@dataclass(frozen=True, eq=False)
class TangentVector:
    """Full tangent vector: velocity perturbation (all modes) plus (hx, hv)."""

    hu: SpectralVelocity
    hx: np.ndarray
    hv: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "hx", np.array(self.hx, dtype=float))
        object.__setattr__(self, "hv", np.array(self.hv, dtype=float))

    def norm(self):
        return float(np.sqrt(np.sum(self.hu.coeffs ** 2) + self.hx @ self.hx + self.hv @ self.hv))


@dataclass(frozen=True, eq=False)
class LowModePropagator:
    mat: np.ndarray
    s: float
    t: float
    kind: str


@dataclass(frozen=True, eq=False)
class PartialMalliavinMatrix:
    mat: np.ndarray
    t0: float
    t1: float
    basis: np.ndarray = field(repr=False)

    def tangent_matrix(self):
        return self.basis.T @ self.mat @ self.basis

    def tangent_eigvals(self):
        return np.linalg.eigvalsh(self.tangent_matrix())

    @property
    def lambda_min(self):
        return float(self.tangent_eigvals()[0])

    @property
    def cond(self):
        ev = self.tangent_eigvals()
        return float(ev[-1] / ev[0]) if ev[0] > 0 else float("inf")


@dataclass(frozen=True, eq=False)
class ControlPath:
    times: np.ndarray
    samples: np.ndarray
    weights: np.ndarray
    cost_l2: float
    tau0: float
    T0: float

    def at(self, t):
        """g(t) on the quadrature grid; zero before tau0 and after T0."""
        if t < self.tau0 - 1e-12 or t > self.T0 + 1e-12:
            return np.zeros(self.samples.shape[1])
        j = int(np.argmin(np.abs(self.times - t)))
        return self.samples[j]

    def scaled(self, c):
        return ControlPath(self.times, c * self.samples, self.weights, c * c * self.cost_l2,
                           self.tau0, self.T0)


@dataclass(frozen=True, eq=False)
class MalliavinResponse:
    zeta: LowModeVector
    xi: SpectralVelocity


@dataclass(frozen=True)
class ResidualReport:
    rho_low: float
    rho_high: float
    rho_total: float
    jh_norm: float
    rep_low: float
    rep_high: float
    discrepancy: float


def tangent_basis(v, m):
    """(m+4) x (m+3) orthonormal basis of H_l x R^2 x v-perp."""
    v = np.asarray(v, dtype=float)
    P = np.zeros((m + 4, m + 3))
    P[:m + 2, :m + 2] = np.eye(m + 2)
    P[m + 2:, m + 2] = (-v[1], v[0])
    return P


def low_basis_fields(modes, x):
    """Values (2, m) and gradients (2, 2, m) of gamma_k e_k at x."""
    k = np.array([[kv.k1, kv.k2] for kv in modes], dtype=float)
    plus = np.array([kv.is_plus for kv in modes])
    n2 = (k ** 2).sum(1)
    g = np.stack([k[:, 1], -k[:, 0]]) / n2
    th = k @ np.asarray(x, dtype=float)
    s, c = np.sin(th), np.cos(th)
    e = np.where(plus, s, c)
    em = np.where(plus, c, -s)
    return g * e, g[:, None, :] * k.T[None, :, :] * em


# advective Jacobian on the low block

@lru_cache(maxsize=8)
def advection_tensor(nstar):
    """T[i, j, p] with C(u)[i, j] = sum_p T[i, j, p] a_p.

    C(u) is the low-low block of the derivative of the dealiased nonlinear
    term, i.e. the low coefficients of -Leray(B(phi_j, u) + B(u, phi_j)).
    Output mode i = k_j + p needs only |p|_inf <= 2 nstar, so the tensor is
    built once on a small exact grid. Returns (T, sub-mode selector).
    """
    K2 = 2 * nstar
    N = 3 * K2 + 2
    ns = NavierStokes2D(SolverConfig(kmax=K2, gridsize=N, dt=1e-6), ForcingSpec(nstar=nstar))
    modes = low_modes(nstar)
    t = mode_table(K2)
    sub = np.argwhere(t["valid"])
    m = len(modes)
    T = np.zeros((m, m, len(sub)))
    hats_low = []
    for kv in modes:
        c = np.zeros((2 * K2 + 1, 2 * K2 + 1))
        c[kv.k1 + K2, kv.k2 + K2] = 1.0
        hats_low.append(ns.hat_from_coeffs(c))
    low_idx = [(kv.k1 + K2, kv.k2 + K2) for kv in modes]
    li = tuple(np.array(low_idx).T)
    for p, (a, b) in enumerate(sub):
        c = np.zeros((2 * K2 + 1, 2 * K2 + 1))
        c[a, b] = 1.0
        wp = ns.hat_from_coeffs(c)
        for j, wj in enumerate(hats_low):
            out = ns.coeffs_from_hat(ns.advection_tangent_hat(wp, wj))
            T[:, j, p] = out[li]
    # sub-mode positions expressed as (k1, k2)
    ksub = sub - K2
    return T, ksub


def advection_matrix(u, nstar):
    """C(u), the m x m low-low block of the linearized nonlinear term."""
    T, ksub = advection_tensor(nstar)
    K = u.kmax
    ok = (np.abs(ksub) <= K).all(1)
    a = np.zeros(len(ksub))
    a[ok] = u.coeffs[ksub[ok, 0] + K, ksub[ok, 1] + K]
    return T @ a


# generator of the low block

def _manifold_rhs(Du, D2u, v, dX, dV, Uq, DUq):
    """Linearized (x, v) drift for a block of columns.

    dX, dV: (2, c) tangent inputs; Uq (2, c) and DUq (2, 2, c) are the
    velocity perturbation and its gradient at x.
    """
    ddX = Du @ dX + Uq
    part = np.einsum("ijl,j,lc->ic", D2u, v, dX) + np.einsum("ijc,j->ic", DUq, v)
    part -= np.outer(v, v @ part)
    g = v @ Du @ v
    ddV = part + Du @ dV - np.outer(v, v @ (Du + Du.T) @ dV) - g * dV
    return ddX, ddV


def ltilde_apply(u, x, v, h, nu, nstar, project=True):
    """Apply the low-block generator L~ at (u, x, v) to ``h``.

    u-block: -nu|k|^2 hu + C(u) hu; x-block: Du(x) hx + hu-field(x);
    v-block: directional derivative of (u, x, v) -> Pi_v Du(x) v, re-projected
    tangent to v unless ``project`` is false. The raw derivative is the one
    that keeps <v, hv> constant along the flow; the propagators use it.
    """
    v = np.asarray(v, dtype=float)
    if abs(np.hypot(*v) - 1.0) > 1e-10:
        raise DomainError("v must be a unit vector")
    modes = low_modes(nstar)
    m = len(modes)
    harr = h.to_array() if isinstance(h, LowModeVector) else np.asarray(h, dtype=float)
    hu, hx, hv = harr[:m], harr[m:m + 2], harr[m + 2:]
    lam = nu * np.array([k.norm2 for k in modes])
    out_u = -lam * hu + advection_matrix(u, nstar) @ hu
    _, Du, D2u = SpectralField.from_velocity(u).eval2(x)
    Phi, DPhi = low_basis_fields(modes, x)
    dX, dV = _manifold_rhs(Du, D2u, v, hx[:, None], hv[:, None], (Phi @ hu)[:, None],
                           (DPhi @ hu)[:, :, None])
    dv = dV[:, 0]
    if project:
        dv = dv - (v @ dv) * v
    out = np.concatenate([out_u, dX[:, 0], dv])
    return LowModeVector.from_array(out, m) if isinstance(h, LowModeVector) else out


def low_block_drift(u, x, v, nu, nstar, solver):
    """(Pi_l of the velocity drift, u(x), Pi_v Du(x) v); the FD oracle target."""
    modes = low_modes(nstar)
    K = u.kmax
    b = solver.nonlinear_term(u)
    lam = nu * np.array([k.norm2 for k in modes])
    a = np.array([u.coeffs[k.k1 + K, k.k2 + K] for k in modes])
    bl = np.array([b.coeffs[k.k1 + K, k.k2 + K] for k in modes])
    uu, Du = SpectralField.from_velocity(u).eval(x)
    v = np.asarray(v, dtype=float)
    w = Du @ v
    return np.concatenate([-lam * a + bl, uu, w - (v @ w) * v])


# recorded trajectory with its discrete linearization

class TrajectoryRecord:
    """Base trajectory (u_n, x_n, v_n) on a fixed step grid, with linearization.

    Parameters
    ----------
    solver : NavierStokes2D
    state : SnsState
        Velocity at the start of the record (record time 0).
    x0, v0 : particle position and unit direction at record time 0.
    T : float
        Record length.
    rng : NoiseStream or None
        ``None`` records a noiseless trajectory (the linearization still uses
        the solver's noise profile for Q).
    coupling : bool
        ``False`` is the test hook D_h F_l = 0: low rows ignore high inputs.
    frozen : bool
        ``True`` replaces every one-step linear map by the identity.
    """

    def __init__(self, solver, state, x0, v0, T, rng=None, coupling=True, frozen=False):
        self.solver = solver
        self.dt = solver.dt
        self.nsteps = int(round(T / self.dt))
        self.coupling = coupling
        self.frozen = frozen
        self.nstar = solver.forcing.nstar
        self.modes = low_modes(self.nstar)
        self.m = len(self.modes)
        self.nu = solver.config.nu
        self.Q = np.zeros((self.m + 4, self.m))
        self.Q[:self.m, :self.m] = np.diag(solver.forcing.q)
        self._low_lam = self.nu * np.array([k.norm2 for k in self.modes])
        self._build_low_maps()

        v0 = np.asarray(v0, dtype=float)
        v0 = v0 / np.hypot(*v0)
        self.w0 = solver.to_hat(state.u)
        self.x0 = np.mod(np.asarray(x0, dtype=float), TWO_PI)
        self.v0 = v0
        m = solver.m
        if rng is None:
            self.xis = np.zeros((self.nsteps, m))
        else:
            self.xis = np.array([rng.next() for _ in range(self.nsteps)])
        self.ws, self.xs, self.vs = self._simulate(self.w0, self.x0, self.v0)
        self._cache = {}

    @classmethod
    def noiseless(cls, solver, u, x0, v0, T, **kw):
        return cls(solver, SnsState(u, 0.0), x0, v0, T, rng=None, **kw)

    # nonlinear discrete map (used for the record and the FD oracle)
    def _simulate(self, w0, x0, v0, nsteps=None, keep=True):
        nsteps = self.nsteps if nsteps is None else nsteps
        s = self.solver
        w = w0.copy()
        x = np.array(x0, dtype=float)
        v = np.array(v0, dtype=float)
        A = np.eye(2)
        ws, xs, vs = [w.copy()], [x.copy()], [v.copy()]
        for n in range(nsteps):
            PR, PI = s.stream_dense(w)
            if not np.isfinite(rk4_cocycle_kernel(PR, PI, s.kmax, x, A, v, self.dt)):
                raise BlowUpError("non-finite particle state", {"step": n})
            s.advance_hat(w, self.xis[n], n)
            if keep:
                ws.append(w.copy())
                xs.append(x.copy())
                vs.append(v.copy())
        if keep:
            return ws, np.array(xs), np.array(vs)
        return w, x, v

    def flow_map(self, h_u=None, x0=None, v0=None, nsteps=None):
        """Discrete flow from a perturbed initial condition with the same noise."""
        w0 = self.w0 if h_u is None else self.solver.to_hat(h_u)
        x0 = self.x0 if x0 is None else x0
        v0 = self.v0 if v0 is None else v0
        w, x, v = self._simulate(w0, x0, v0, nsteps, keep=False)
        return self.solver.to_velocity(w), x, v

    def index(self, t):
        n = t / self.dt
        k = int(round(n))
        if abs(n - k) > 1e-6 or k < 0 or k > self.nsteps:
            raise DomainError(f"time {t} is not on the recorded step grid")
        return k

    def velocity(self, n):
        return self.solver.to_velocity(self.ws[n])

    # low/high splitting on the vorticity layout
    def _build_low_maps(self):
        s = self.solver
        N, M = s.N, s.M
        idx, sign, imag = [], [], []
        for kv in self.modes:
            if kv.is_plus:
                idx.append((kv.k1 % N) * M + kv.k2)
                sign.append(-2.0)
                imag.append(False)
            else:
                p = -kv
                idx.append((p.k1 % N) * M + p.k2)
                sign.append(2.0)
                imag.append(True)
        self._li = np.array(idx)
        self._ls = np.array(sign)
        self._lim = np.array(imag)

    def low_of_hat(self, w):
        z = w.ravel()[self._li]
        return self._ls * np.where(self._lim, z.imag, z.real)

    def hat_of_low(self, a):
        K = self.solver.kmax
        c = np.zeros((2 * K + 1, 2 * K + 1))
        for kv, val in zip(self.modes, a):
            c[kv.k1 + K, kv.k2 + K] = val
        return self.solver.hat_from_coeffs(c)

    # per-step linearization data
    def _step(self, n):
        if n in self._cache:
            return self._cache[n]
        if len(self._cache) > 4:
            self._cache.clear()
        s = self.solver
        w = self.ws[n]
        PR, PI = s.stream_dense(w)
        fld = SpectralField(PR, PI, s.kmax)
        x, v, dt = self.xs[n], self.vs[n], self.dt
        # base RK4 stages (x_s, v_s) with frozen u_n
        stages = []
        ky = np.zeros(2)
        kv = np.zeros(2)
        kys, kvs = [], []
        for c in (0.0, 0.5, 0.5, 1.0):
            xs = x + c * dt * ky
            vs = v + c * dt * kv
            uu, Du, D2u = fld.eval2(xs)
            wv = Du @ vs
            ky = uu
            kv = wv - (vs @ wv) * vs
            kys.append(ky)
            kvs.append(kv)
            stages.append((xs, vs, Du, D2u))
        v_pre = v + dt / 6 * (kvs[0] + 2 * kvs[1] + 2 * kvs[2] + kvs[3])
        nv = np.hypot(*v_pre)
        vh = v_pre / nv
        data = dict(stages=stages, nv=nv, vh=vh, E_low=np.exp(-self._low_lam * dt))
        self._cache[n] = data
        return data

    def _variational(self, data, dX, dV, field_eval):
        """Derivative of the RK4 particle step for column blocks.

        field_eval(x) -> (Uq, DUq) evaluates the velocity perturbation of every
        column at x.
        """
        dt = self.dt
        kX = np.zeros_like(dX)
        kV = np.zeros_like(dV)
        accX = np.zeros_like(dX)
        accV = np.zeros_like(dV)
        for c, wgt, (xs, vs, Du, D2u) in zip((0.0, 0.5, 0.5, 1.0), (1, 2, 2, 1), data["stages"]):
            Uq, DUq = field_eval(xs)
            kX, kV = _manifold_rhs(Du, D2u, vs, dX + c * dt * kX, dV + c * dt * kV, Uq, DUq)
            accX += wgt * kX
            accV += wgt * kV
        return dX + dt / 6 * accX, dV + dt / 6 * accV

    def step_matrix(self, n):
        """One-step low-block map Phi_n, (m+4) x (m+4)."""
        m, D = self.m, self.m + 4
        if self.frozen:
            return np.eye(D)
        data = self._step(n)
        dt = self.dt
        Phi = np.zeros((D, D))
        C = advection_matrix(self.velocity(n), self.nstar)
        Phi[:m, :m] = data["E_low"][:, None] * (np.eye(m) + dt * C)
        dU = np.zeros((m, D))
        dU[:, :m] = np.eye(m)
        dX = np.zeros((2, D))
        dX[:, m:m + 2] = np.eye(2)
        dV = np.zeros((2, D))
        dV[:, m + 2:] = np.eye(2)

        def fe(xs):
            Phi_x, DPhi_x = low_basis_fields(self.modes, xs)
            return Phi_x @ dU, DPhi_x @ dU

        nX, nV = self._variational(data, dX, dV, fe)
        vh, nv = data["vh"], data["nv"]
        Phi[m:m + 2] = nX
        Phi[m + 2:] = (np.eye(2) - np.outer(vh, vh)) @ nV / nv
        # tangent inputs get the exact derivative; the normal direction at v_n
        # is sent to the normal at v_{n+1} so the splitting is preserved
        e0 = np.zeros(D)
        e0[m + 2:] = self.vs[n]
        e1 = np.zeros(D)
        e1[m + 2:] = vh
        return Phi - np.outer(Phi @ e0, e0) + np.outer(e1, e0)

    def apply_step(self, n, hw, hx, hv):
        """Full one-step linear map on (vorticity-layout hw, hx, hv)."""
        if self.frozen:
            return hw.copy(), np.array(hx, float), np.array(hv, float)
        s = self.solver
        data = self._step(n)
        w = self.ws[n]
        dt = self.dt
        new_w = s.E * (hw + dt * s.advection_tangent_hat(w, hw)) if s.nonlinear else s.E * hw
        mfield = hw
        if not self.coupling:
            # low rows and the particle see only the low part of the input
            mfield = self.hat_of_low(self.low_of_hat(hw))
            lw = s.E * (mfield + dt * s.advection_tangent_hat(w, mfield)) if s.nonlinear else s.E * mfield
            new_w = new_w + self.hat_of_low(self.low_of_hat(lw) - self.low_of_hat(new_w))
        PR, PI = s.stream_dense(mfield)
        fld = SpectralField(PR, PI, s.kmax)

        def fe(xs):
            uu, du = fld.eval(xs)
            return uu[:, None], du[:, :, None]

        nX, nV = self._variational(data, np.asarray(hx, float)[:, None],
                                   np.asarray(hv, float)[:, None], fe)
        vh, nv = data["vh"], data["nv"]
        hv_new = (nV[:, 0] - (vh @ nV[:, 0]) * vh) / nv
        return new_w, nX[:, 0], hv_new


# propagators

def evolve_R(driver, s, t):
    """R_{s,t}: product of one-step low-block maps from s to t."""
    a, b = driver.index(s), driver.index(t)
    if a > b:
        raise DomainError("evolve_R needs s <= t")
    R = np.eye(driver.m + 4)
    for n in range(a, b):
        R = driver.step_matrix(n) @ R
    cond = np.linalg.cond(R)
    if cond > COND_LIMIT_R:
        raise IllConditionedError(f"R is ill-conditioned (cond={cond:.3e})", cond)
    return LowModePropagator(R, s, t, "R")


def _S_sequence(driver, a, b, every=1):
    """S_{a, n} for n = a, a+every, ..., b (discrete inverse flow)."""
    S = np.eye(driver.m + 4)
    out = {a: S.copy()}
    for n in range(a, b):
        Phi = driver.step_matrix(n)
        # S_{n+1} = S_n Phi_n^{-1}
        S = np.linalg.solve(Phi.T, S.T).T
        if (n + 1 - a) % every == 0 or n + 1 == b:
            out[n + 1] = S.copy()
    return out


def evolve_S(driver, s, t):
    """S_{s,t}, the inverse low-block flow (S' = -S L~, S_{s,s} = Id)."""
    a, b = driver.index(s), driver.index(t)
    if a > b:
        raise DomainError("evolve_S needs s <= t")
    return LowModePropagator(_S_sequence(driver, a, b)[b], s, t, "S")


def _quadrature(driver, tau0, T0, quadrature_dt):
    if not 0 <= tau0 < T0:
        raise DomainError("need 0 <= tau0 < T0")
    a, b = driver.index(tau0), driver.index(T0)
    qdt = driver.dt if quadrature_dt is None else quadrature_dt
    r = int(round(qdt / driver.dt))
    if r < 1 or abs(r * driver.dt - qdt) > 1e-9 * qdt or (b - a) % r:
        raise DomainError("quadrature_dt must be a multiple of dt dividing T0 - tau0")
    nodes = np.arange(a, b + 1, r)
    h = r * driver.dt
    wts = np.full(len(nodes), h)
    wts[0] = wts[-1] = h / 2
    return nodes, wts


def _gram(driver, tau0, T0, quadrature_dt):
    nodes, wts = _quadrature(driver, tau0, T0, quadrature_dt)
    a, b = nodes[0], nodes[-1]
    r = nodes[1] - nodes[0] if len(nodes) > 1 else 1
    Ss = _S_sequence(driver, a, b, every=r)
    SQ = np.array([Ss[n] @ driver.Q for n in nodes])
    N = np.einsum("j,jab,jcb->ac", wts, SQ, SQ)
    N = 0.5 * (N + N.T)
    return N, SQ, nodes, wts, Ss[b]


def assemble_N(driver, tau0, T0, quadrature_dt=None):
    """Partial Malliavin matrix by trapezoidal quadrature of S Q (S Q)^T."""
    N, _, nodes, _, _ = _gram(driver, tau0, T0, quadrature_dt)
    a = nodes[0]
    return PartialMalliavinMatrix(N, tau0, T0, tangent_basis(driver.vs[a], driver.m))


def quadrature_richardson(driver, tau0, T0, coarse_dt):
    """Relative change of lambda_min between quadrature steps coarse_dt and coarse_dt/2."""
    l1 = assemble_N(driver, tau0, T0, coarse_dt).lambda_min
    l2 = assemble_N(driver, tau0, T0, coarse_dt / 2).lambda_min
    return abs(l1 - l2) / abs(l2)


def min_eig_tail(lambdas, epsilons):
    """Empirical CCDF table [(eps, fraction of runs with lambda_min < eps)]."""
    lam = np.array([x.lambda_min if isinstance(x, PartialMalliavinMatrix) else float(x)
                    for x in lambdas])
    if len(lam) < 100:
        raise DomainError("ensemble must contain at least 100 matrices")
    return [(float(e), float(np.mean(lam < e))) for e in epsilons]


# full linearization

def _tangent_to_internal(driver, h):
    return driver.solver.to_hat(h.hu), np.array(h.hx, float), np.array(h.hv, float)


def _jacobian_path(driver, a, b, hw, hx, hv, keep=False):
    path = []
    for n in range(a, b):
        if keep:
            path.append((hw, hx, hv))
        hw, hx, hv = driver.apply_step(n, hw, hx, hv)
    if keep:
        path.append((hw, hx, hv))
    return (hw, hx, hv), path


def jacobian_apply(driver, s, t, h):
    """J_{s,t} h for a full tangent vector (matrix-free)."""
    a, b = driver.index(s), driver.index(t)
    if a > b:
        raise DomainError("jacobian_apply needs s <= t")
    (hw, hx, hv), _ = _jacobian_path(driver, a, b, *_tangent_to_internal(driver, h))
    return TangentVector(driver.solver.to_velocity(hw), hx, hv)


def _low_target(driver, hw, hx, hv):
    return np.concatenate([driver.low_of_hat(hw), hx, hv])


def _solve_tangent(N, basis, z):
    Nt = basis.T @ N @ basis
    ev = np.linalg.eigvalsh(Nt)
    cond = ev[-1] / ev[0] if ev[0] > 0 else np.inf
    if not cond < COND_LIMIT_N:
        raise NonDegeneracyError(
            f"partial Malliavin matrix is singular on the tangent subspace "
            f"(lambda_min={ev[0]:.3e}, cond={cond:.3e})", float(ev[0]), float(cond))
    return basis @ np.linalg.solve(Nt, basis.T @ z)


def build_control(driver, tau0, T0, h, quadrature_dt=None):
    """g_t = (S_t Q)^T N^{-1} S_{T0} Pi_l(J_{0,T0} h) on the quadrature grid."""
    N, SQ, nodes, wts, S_end = _gram(driver, tau0, T0, quadrature_dt)
    b = nodes[-1]
    (hw, hx, hv), _ = _jacobian_path(driver, 0, b, *_tangent_to_internal(driver, h))
    y = _low_target(driver, hw, hx, hv)
    c = _solve_tangent(N, tangent_basis(driver.vs[nodes[0]], driver.m), S_end @ y)
    g = np.einsum("jab,a->jb", SQ, c)
    cost = float(np.sum(wts * np.sum(g ** 2, axis=1)))
    return ControlPath(nodes * driver.dt, g, wts, cost, tau0, T0)


def _response_path(driver, g):
    """D^g recursion; returns per-step (post-impulse low, high) states and final."""
    nodes = np.rint(g.times / driver.dt).astype(int)
    a, b = nodes[0], nodes[-1]
    impulses = {n: driver.Q @ (w * gj) for n, w, gj in zip(nodes, g.weights, g.samples)}
    m = driver.m
    hw = np.zeros((driver.solver.N, driver.solver.M), dtype=complex)
    hx = np.zeros(2)
    hv = np.zeros(2)
    path = []
    for n in range(a, b + 1):
        if n in impulses:
            hw = hw + driver.hat_of_low(impulses[n][:m])
        path.append((hw, hx, hv))
        if n < b:
            hw, hx, hv = driver.apply_step(n, hw, hx, hv)
    return (hw, hx, hv), path, a, b


def malliavin_response(driver, g, tau0, T0):
    """(zeta_T0, xi_T0) of the forced linearized system started from zero at tau0."""
    if abs(g.tau0 - tau0) > 1e-12 or abs(g.T0 - T0) > 1e-12:
        raise DomainError("control path is defined on a different interval")
    (hw, hx, hv), _, _, _ = _response_path(driver, g)
    low = driver.low_of_hat(hw)
    high = hw - driver.hat_of_low(low)
    return MalliavinResponse(LowModeVector(low, hx, hv), driver.solver.to_velocity(high))


def residual(driver, h, tau0, T0, quadrature_dt=None):
    """rho_T0 = J_{0,T0} h - D^g computed directly and by the representation formulas."""
    g = build_control(driver, tau0, T0, h, quadrature_dt)
    a, b = driver.index(tau0), driver.index(T0)
    (jw, jx, jv), jpath = _jacobian_path(driver, 0, b, *_tangent_to_internal(driver, h), keep=True)
    (dw, dx, dv), dpath, _, _ = _response_path(driver, g)

    def split(hw):
        low = driver.low_of_hat(hw)
        return low, hw - driver.hat_of_low(low)

    # direct
    rw = jw - dw
    r_low_u, r_high = split(rw)
    r_low = np.concatenate([r_low_u, jx - dx, jv - dv])
    high_norm = float(np.sqrt(np.sum(driver.solver.coeffs_from_hat(r_high) ** 2)))

    # representation: rho^l = -sum R_{n+1,T0} D_h F_l xi_n ;
    # rho^h = R^h J^h_{tau0} + sum R^h (D_l F_h)(J^l_n - zeta~_n)
    acc_l = (np.zeros_like(jw), np.zeros(2), np.zeros(2))
    acc_h = split(jpath[a][0])[1]
    for i, n in enumerate(range(a, b)):
        zw, zx, zv = dpath[i]
        z_low, z_high = split(zw)
        # low accumulator driven by the high part of the response
        lw, lx, lv = driver.apply_step(n, acc_l[0] + z_high, acc_l[1], acc_l[2])
        lw_low, _ = split(lw)
        acc_l = (driver.hat_of_low(lw_low), lx, lv)
        # high accumulator driven by the low mismatch (J^l_n - zeta~_n)
        jw_n, jx_n, jv_n = jpath[n]
        j_low, _ = split(jw_n)
        hw_in = driver.hat_of_low(j_low - z_low) + acc_h
        hw_out, _, _ = driver.apply_step(n, hw_in, jx_n - zx, jv_n - zv)
        acc_h = split(hw_out)[1]
    rep_low_vec = -np.concatenate([driver.low_of_hat(acc_l[0]), acc_l[1], acc_l[2]])
    rep_high_norm = float(np.sqrt(np.sum(driver.solver.coeffs_from_hat(acc_h) ** 2)))
    d_low = rep_low_vec - r_low
    d_high = driver.solver.coeffs_from_hat(acc_h - r_high)
    low_norm = float(np.linalg.norm(r_low))
    total = float(np.hypot(low_norm, high_norm))
    disc = float(np.sqrt(np.sum(d_low ** 2) + np.sum(d_high ** 2)))
    jnorm = float(np.sqrt(np.sum(driver.solver.coeffs_from_hat(jw) ** 2) + jx @ jx + jv @ jv))
    return ResidualReport(low_norm, high_norm, total, jnorm, float(np.linalg.norm(rep_low_vec)),
                          rep_high_norm, disc / total if total > 0 else disc)

"""
Lagrangian particle, derivative cocycle and projective direction.

Within one solver step the velocity is frozen, and the joint system

    x' = u(x),   A' = Du(x) A,   v' = Du(x) v - <v, Du(x) v> v

is advanced by one classical RK4 step evaluated at the same stage positions
for every component. The extra scalar l' = <v, Du(x) v> is integrated
alongside; it accumulates log|A v0| for the projective exponent estimator.
Velocity evaluation is the exact trigonometric sum (no interpolation).
"""

from dataclasses import dataclass

import numba
import numpy as np

from .errors import DomainError
from .spectral import (SpectralVelocity, TWO_PI, eval_velocity, eval_velocity_gradient,
                       eval_velocity_hessian, mode_table)


@dataclass(frozen=True, eq=False)
class ParticleState:
    """Position on the torus and a unit direction in the tangent plane."""

    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        x = np.mod(np.asarray(self.x, dtype=float), TWO_PI)
        v = np.asarray(self.v, dtype=float)
        if x.shape != (2,) or v.shape != (2,):
            raise DomainError("x and v must be 2-vectors")
        nv = np.hypot(v[0], v[1])
        if nv == 0:
            raise DomainError("v must be nonzero")
        if abs(nv - 1.0) > 1e-12:
            v = v / nv
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)

    @property
    def angle(self):
        return float(np.arctan2(self.v[1], self.v[0]))


@dataclass(frozen=True, eq=False)
class TangentMatrix:
    a: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        if a.shape != (2, 2):
            raise DomainError("tangent matrix must be 2x2")
        object.__setattr__(self, "a", a)

    @classmethod
    def identity(cls):
        return cls(np.eye(2))

    @property
    def det(self):
        return float(np.linalg.det(self.a))


# numba kernels on stream-function coefficients psi held densely as
# (2K+1, K+1) real/imaginary arrays over (k1 + K, k2); entries outside Z^2_+
# must be zero. The k2 sum is done first so the inner loop vectorizes.

@numba.njit(cache=True, fastmath=True)
def _eval_u_du(PR, PI, K, x0, x1, u, du):
    c2 = np.empty(K + 1)
    s2 = np.empty(K + 1)
    for b in range(K + 1):
        c2[b] = np.cos(b * x1)
        s2[b] = np.sin(b * x1)
    s1 = 0.0
    s2s = 0.0
    c11 = 0.0
    c12 = 0.0
    c22 = 0.0
    for r in range(2 * K + 1):
        a = r - K
        t0r = 0.0
        t0i = 0.0
        t1r = 0.0
        t1i = 0.0
        t2r = 0.0
        t2i = 0.0
        for b in range(K + 1):
            zr = PR[r, b] * c2[b] - PI[r, b] * s2[b]
            zi = PR[r, b] * s2[b] + PI[r, b] * c2[b]
            t0r += zr
            t0i += zi
            t1r += b * zr
            t1i += b * zi
            t2r += b * b * zr
            t2i += b * b * zi
        ca = np.cos(a * x0)
        sa = np.sin(a * x0)
        z0r = ca * t0r - sa * t0i
        z0i = ca * t0i + sa * t0r
        z1r = ca * t1r - sa * t1i
        z1i = ca * t1i + sa * t1r
        z2r = ca * t2r - sa * t2i
        s1 += a * z0i
        s2s += z1i
        c11 += a * a * z0r
        c12 += a * z1r
        c22 += z2r
    # psi_j = -2 sum k_j Im z ; psi_jl = -2 sum k_j k_l Re z
    u[0] = -2.0 * s2s
    u[1] = 2.0 * s1
    du[0, 0] = -2.0 * c12
    du[0, 1] = -2.0 * c22
    du[1, 0] = 2.0 * c11
    du[1, 1] = 2.0 * c12


@numba.njit(cache=True, fastmath=True)
def _eval_u_du_d2u(PR, PI, K, x0, x1, u, du, d2u):
    c2 = np.empty(K + 1)
    s2 = np.empty(K + 1)
    for b in range(K + 1):
        c2[b] = np.cos(b * x1)
        s2[b] = np.sin(b * x1)
    # moments m[p][q] = sum k1^p k2^q z  (p + q <= 3)
    mr = np.zeros((4, 4))
    mi = np.zeros((4, 4))
    for r in range(2 * K + 1):
        a = r - K
        tr = np.zeros(4)
        ti = np.zeros(4)
        for b in range(K + 1):
            zr = PR[r, b] * c2[b] - PI[r, b] * s2[b]
            zi = PR[r, b] * s2[b] + PI[r, b] * c2[b]
            w = 1.0
            for q in range(4):
                tr[q] += w * zr
                ti[q] += w * zi
                w *= b
        ca = np.cos(a * x0)
        sa = np.sin(a * x0)
        for q in range(4):
            zr = ca * tr[q] - sa * ti[q]
            zi = ca * ti[q] + sa * tr[q]
            w = 1.0
            for p in range(4 - q):
                mr[p, q] += w * zr
                mi[p, q] += w * zi
                w *= a
    u[0] = -2.0 * mi[0, 1]
    u[1] = 2.0 * mi[1, 0]
    du[0, 0] = -2.0 * mr[1, 1]
    du[0, 1] = -2.0 * mr[0, 2]
    du[1, 0] = 2.0 * mr[2, 0]
    du[1, 1] = 2.0 * mr[1, 1]
    # psi_jlm = 2 sum k_j k_l k_m Im z
    p111 = 2.0 * mi[3, 0]
    p112 = 2.0 * mi[2, 1]
    p122 = 2.0 * mi[1, 2]
    p222 = 2.0 * mi[0, 3]
    d2u[0, 0, 0] = p112
    d2u[0, 0, 1] = p122
    d2u[0, 1, 0] = p122
    d2u[0, 1, 1] = p222
    d2u[1, 0, 0] = -p111
    d2u[1, 0, 1] = -p112
    d2u[1, 1, 0] = -p112
    d2u[1, 1, 1] = -p122


@numba.njit(cache=True)
def _joint_rhs(PR, PI, K, y, A, v, dy, dA, dv, u, du):
    _eval_u_du(PR, PI, K, y[0], y[1], u, du)
    dy[0] = u[0]
    dy[1] = u[1]
    for i in range(2):
        for j in range(2):
            dA[i, j] = du[i, 0] * A[0, j] + du[i, 1] * A[1, j]
    w0 = du[0, 0] * v[0] + du[0, 1] * v[1]
    w1 = du[1, 0] * v[0] + du[1, 1] * v[1]
    g = v[0] * w0 + v[1] * w1
    dv[0] = w0 - g * v[0]
    dv[1] = w1 - g * v[1]
    return g


@numba.njit(cache=True)
def rk4_cocycle_kernel(PR, PI, K, x, A, v, dt):
    """One joint RK4 step of (x, A, v, l); x, A and v are updated in place.

    Returns the increment of l = int <v, Du v> dt. v is renormalized and x
    wrapped to [0, 2pi). A degenerate or non-finite direction returns NaN
    and leaves v unnormalized, so callers can raise a typed error.
    """
    u = np.empty(2)
    du = np.empty((2, 2))
    ky = np.empty((4, 2))
    kA = np.empty((4, 2, 2))
    kv = np.empty((4, 2))
    kl = np.empty(4)
    ys = np.empty(2)
    As = np.empty((2, 2))
    vs = np.empty(2)
    coef = (0.0, 0.5, 0.5, 1.0)
    for s in range(4):
        h = coef[s] * dt
        for i in range(2):
            if s == 0:
                ys[i] = x[i]
                vs[i] = v[i]
            else:
                ys[i] = x[i] + h * ky[s - 1, i]
                vs[i] = v[i] + h * kv[s - 1, i]
            for j in range(2):
                As[i, j] = A[i, j] if s == 0 else A[i, j] + h * kA[s - 1, i, j]
        kl[s] = _joint_rhs(PR, PI, K, ys, As, vs, ky[s], kA[s], kv[s], u, du)
    w = dt / 6.0
    for i in range(2):
        x[i] = x[i] + w * (ky[0, i] + 2.0 * ky[1, i] + 2.0 * ky[2, i] + ky[3, i])
        v[i] = v[i] + w * (kv[0, i] + 2.0 * kv[1, i] + 2.0 * kv[2, i] + kv[3, i])
        for j in range(2):
            A[i, j] = A[i, j] + w * (kA[0, i, j] + 2.0 * kA[1, i, j] + 2.0 * kA[2, i, j] + kA[3, i, j])
    nv = np.sqrt(v[0] * v[0] + v[1] * v[1])
    if not (nv > 0.0 and nv < np.inf):
        return np.nan
    v[0] /= nv
    v[1] /= nv
    two_pi = 2.0 * np.pi
    for i in range(2):
        x[i] = x[i] % two_pi
    return w * (kl[0] + 2.0 * kl[1] + 2.0 * kl[2] + kl[3])


class SpectralField:
    """Exact evaluator for a spectral velocity held as stream-function coefficients.

    ``PR + i PI`` (shape (2K+1, K+1), indexed ``[k1 + K, k2]``) are the
    coefficients of exp(i k.x) for k in Z^2_+, zero elsewhere; the field is
    psi(x) = 2 Re sum psi_k exp(i k.x) with u = (d2 psi, -d1 psi).
    """

    def __init__(self, PR, PI, kmax):
        self.PR = np.ascontiguousarray(PR, dtype=np.float64)
        self.PI = np.ascontiguousarray(PI, dtype=np.float64)
        self.kmax = int(kmax)

    @classmethod
    def from_velocity(cls, u):
        K = u.kmax
        t = mode_table(K)
        c = u.coeffs
        # columns k2 >= 0 of the centred layout; mirror index gives a_{-k}
        a_p = c[:, K:]
        a_m = c[::-1, K::-1]
        plus = t["plus"][:, K:]
        n2 = t["norm2"][:, K:]
        PR = np.where(plus, -0.5 * a_p / n2, 0.0)
        PI = np.where(plus, 0.5 * a_m / n2, 0.0)
        return cls(PR, PI, K)

    def eval(self, x):
        u = np.empty(2)
        du = np.empty((2, 2))
        _eval_u_du(self.PR, self.PI, self.kmax, float(x[0]), float(x[1]), u, du)
        return u, du

    def eval2(self, x):
        u = np.empty(2)
        du = np.empty((2, 2))
        d2u = np.empty((2, 2, 2))
        _eval_u_du_d2u(self.PR, self.PI, self.kmax, float(x[0]), float(x[1]), u, du, d2u)
        return u, du, d2u


class AffineField:
    """Test hook: u(x) = c + M x with constant gradient M (not periodic)."""

    def __init__(self, c=(0.0, 0.0), M=((0.0, 0.0), (0.0, 0.0))):
        self.c = np.asarray(c, dtype=float)
        self.M = np.asarray(M, dtype=float)

    def eval(self, x):
        return self.c + self.M @ np.asarray(x, dtype=float), self.M.copy()

    def eval2(self, x):
        u, du = self.eval(x)
        return u, du, np.zeros((2, 2, 2))


class _ReferenceField:
    """Slow evaluator built on the numpy reference sums in :mod:`spectral`."""

    def __init__(self, u):
        self.u = u

    def eval(self, x):
        return eval_velocity(self.u, x), eval_velocity_gradient(self.u, x)

    def eval2(self, x):
        return self.eval(x) + (eval_velocity_hessian(self.u, x),)


def as_field(u):
    """Accept a SpectralVelocity or any object with ``eval``."""
    if isinstance(u, SpectralVelocity):
        return SpectralField.from_velocity(u)
    if hasattr(u, "eval"):
        return u
    raise DomainError("expected a SpectralVelocity or a field evaluator")


def joint_step(field, x, A, v, dt, substeps=1, wrap=True):
    """RK4 step(s) of (x, A, v, l) under a frozen field.

    Returns ``(x, A, v, dl)``; inputs are not modified.
    """
    field = as_field(field)
    x = np.array(x, dtype=float)
    A = np.array(A, dtype=float)
    v = np.array(v, dtype=float)
    h = dt / substeps
    dl = 0.0
    if isinstance(field, SpectralField) and wrap:
        for _ in range(substeps):
            dl += rk4_cocycle_kernel(field.PR, field.PI, field.kmax, x, A, v, h)
        return x, A, v, dl

    def rhs(y, Am, vm):
        u, du = field.eval(y)
        w = du @ vm
        g = vm @ w
        return u, du @ Am, w - g * vm, g

    for _ in range(substeps):
        k1 = rhs(x, A, v)
        k2 = rhs(x + 0.5 * h * k1[0], A + 0.5 * h * k1[1], v + 0.5 * h * k1[2])
        k3 = rhs(x + 0.5 * h * k2[0], A + 0.5 * h * k2[1], v + 0.5 * h * k2[2])
        k4 = rhs(x + h * k3[0], A + h * k3[1], v + h * k3[2])
        x = x + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        A = A + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        v = v + h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        dl += h / 6 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
        v = v / np.hypot(v[0], v[1])
        if wrap:
            x = np.mod(x, TWO_PI)
    return x, A, v, dl


def advect(x, u, dt, substeps=1):
    """Particle position after one frozen-velocity RK4 step, wrapped mod 2pi."""
    xn, _, _, _ = joint_step(u, x, np.eye(2), (1.0, 0.0), dt, substeps)
    return xn


def step_tangent(A, u, x, dt, substeps=1):
    """Cocycle update A <- A + RK4 increment of Du(x_t) A along the advected path."""
    a = A.a if isinstance(A, TangentMatrix) else A
    _, An, _, _ = joint_step(u, x, a, (1.0, 0.0), dt, substeps)
    return TangentMatrix(An)


def step_projective(v, u, x, dt, substeps=1):
    """Projective direction after one RK4 step of v' = Pi_v Du(x) v, renormalized."""
    v = np.asarray(v, dtype=float)
    if abs(np.hypot(v[0], v[1]) - 1.0) > 1e-12:
        raise DomainError("v must be a unit vector")
    _, _, vn, _ = joint_step(u, x, np.eye(2), v, dt, substeps)
    return vn


def projective_drift(u, x, v):
    """Pi_v Du(x) v."""
    _, du = as_field(u).eval(x)
    w = du @ v
    return w - (v @ w) * v

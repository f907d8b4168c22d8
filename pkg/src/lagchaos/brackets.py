"""Lie brackets of the noise directions with the particle drift."""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .spectral import SpectralVelocity, WaveVector, low_modes, mode_table, to_grid, wave_vector


@dataclass(frozen=True, eq=False)
class BundleVector:
    bx: np.ndarray
    bv: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bx", np.array(self.bx, dtype=float))
        object.__setattr__(self, "bv", np.array(self.bv, dtype=float))

    def to_array(self):
        return np.concatenate([self.bx, self.bv])

    def check_tangent(self, v, tol=1e-10):
        if abs(np.dot(v, self.bv)) > tol:
            raise DomainError("bv is not tangent to v")
        return self


@dataclass(frozen=True, eq=False)
class LowModeField:
    fu: np.ndarray
    fxv: BundleVector

    def to_array(self):
        return np.concatenate([np.asarray(self.fu, dtype=float), self.fxv.to_array()])


def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.hypot(v[0], v[1])
    if abs(n - 1.0) > 1e-10:
        raise DomainError("v must be a unit vector")
    return v


def _project(v, w):
    return w - np.dot(v, w) * v


def _basis(k, x):
    """(e_k(x), e_{-k}(x), gamma_k) for a single wave vector."""
    k = wave_vector(k)
    th = k.k1 * x[0] + k.k2 * x[1]
    s, c = np.sin(th), np.cos(th)
    e, em = (s, c) if k.is_plus else (c, -s)
    return e, em, np.array([k.k2, -k.k1], dtype=float) / k.norm2


def _grid_inner(f, g):
    n = f.shape[-1]
    return float(np.sum(f * g)) * (2.0 * np.pi / n) ** 2


def bracket_coefficient(u, k):
    """(u)_k = <u, e_k gamma_k>_{L2} / ||e_k gamma_k||^2 by exact grid quadrature.

    With this normalization (u)_k coincides with the stored coefficient a_k,
    so F's x-block is the velocity itself.
    """
    kk = wave_vector(k)
    K = max(u.kmax, abs(kk.k1), abs(kk.k2))
    n = 2 * K + 2
    grid = 2.0 * np.pi * np.arange(n) / n
    X1, X2 = np.meshgrid(grid, grid, indexing="ij")
    th = kk.k1 * X1 + kk.k2 * X2
    e = np.sin(th) if kk.is_plus else np.cos(th)
    g = np.array([kk.k2, -kk.k1], dtype=float) / kk.norm2
    c = np.zeros((2 * K + 1, 2 * K + 1))
    c[K - u.kmax:K + u.kmax + 1, K - u.kmax:K + u.kmax + 1] = u.coeffs
    ug = to_grid(SpectralVelocity(K, c), n)
    inner = _grid_inner(ug[0], g[0] * e) + _grid_inner(ug[1], g[1] * e)
    return inner / ((g @ g) * _grid_inner(np.sin(X1), np.sin(X1)))


def fbar_eval(u, x, v):
    v = _unit(v)
    x = np.asarray(x, dtype=float)
    t = mode_table(u.kmax)
    sel = t["valid"] & (u.coeffs != 0)
    k1, k2, n2 = t["k1"][sel], t["k2"][sel], t["norm2"][sel]
    a = u.coeffs[sel]
    th = k1 * x[0] + k2 * x[1]
    plus = t["plus"][sel]
    e = np.where(plus, np.sin(th), np.cos(th))
    em = np.where(plus, np.cos(th), -np.sin(th))
    g = np.stack([k2, -k1]) / n2
    bx = g @ (a * e)
    kv = k1 * v[0] + k2 * v[1]
    bv = _project(v, g @ (a * kv * em))
    return BundleVector(bx, bv)


def bracket_ek_fbar(x, v, k):
    """[e_k gamma_k, F](x, v) = (e_k(x) gamma_k, (k.v) e_{-k}(x) Pi_v gamma_k)."""
    v = _unit(v)
    x = np.asarray(x, dtype=float)
    kk = wave_vector(k)
    e, em, g = _basis(kk, x)
    return BundleVector(e * g, (kk.k1 * v[0] + kk.k2 * v[1]) * em * _project(v, g))


def bracket_fd(u, x, v, k, delta=1e-6):
    """Finite-difference bracket: the noise field is constant, so [E, F] = DF.E."""
    kk = wave_vector(k)
    K = max(u.kmax, abs(kk.k1), abs(kk.k2))
    c = np.zeros((2 * K + 1, 2 * K + 1))
    c[K - u.kmax:K + u.kmax + 1, K - u.kmax:K + u.kmax + 1] = u.coeffs
    d = np.zeros_like(c)
    d[kk.k1 + K, kk.k2 + K] = delta
    fp = fbar_eval(SpectralVelocity(K, c + d), x, v)
    fm = fbar_eval(SpectralVelocity(K, c - d), x, v)
    return BundleVector((fp.bx - fm.bx) / (2 * delta), (fp.bv - fm.bv) / (2 * delta))


def spanning_matrix(x, v, K):
    v = _unit(v)
    vp = np.array([-v[1], v[0]])
    cols = []
    for k in K:
        b = bracket_ek_fbar(x, v, k)
        cols.append([b.bx[0], b.bx[1], b.bv @ vp])
    return np.array(cols, dtype=float).T


def spanning_rank(x, v, K, rtol=1e-8):
    M = spanning_matrix(x, v, K)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def _upsilon_u_block(u, kk, solver):
    forcing = solver.forcing
    modes = low_modes(forcing.nstar)
    try:
        i = modes.index(kk)
    except ValueError:
        raise DomainError(f"{(kk.k1, kk.k2)} is not a forced mode") from None
    qk = float(forcing.q[i])
    K = solver.kmax
    c = np.zeros((2 * K + 1, 2 * K + 1))
    c[kk.k1 + K, kk.k2 + K] = 1.0
    dn = solver.coeffs_from_hat(solver.advection_tangent_hat(solver.to_hat(u), solver.hat_from_coeffs(c)))
    fu = np.array([-qk * dn[m.k1 + K, m.k2 + K] for m in modes])
    fu[i] += qk * solver.config.nu * kk.norm2
    return fu, qk


def upsilon_q(u, x, v, k, solver):
    """Upsilon_l Q^k at (u, x, v).

    Sum of the manifold bracket q_k [F, e_k gamma_k], the advection bracket
    q_k Pi_l[B(u, e_k gamma_k) + B(e_k gamma_k, u)] computed with the
    solver's dealiased products, and the dissipation bracket q_k nu |k|^2.
    """
    kk = wave_vector(k)
    fu, qk = _upsilon_u_block(u, kk, solver)
    b = bracket_ek_fbar(x, v, kk)
    return LowModeField(fu, BundleVector(-qk * b.bx, -qk * b.bv))


@dataclass(frozen=True)
class LowerBoundReport:
    values: np.ndarray
    minimum: float
    u_low_norm: float

    @property
    def positive(self):
        return self.minimum > 0


def lower_bound_check(u, samples, solver):
    """Empirical min over samples of max_k {|<Q^k, h>|, |<Upsilon Q^k, h>|}.

    ``samples`` yields (x, v, h) with h an (m+4)-array (hu, hx, hv), hv
    tangent to v, normalized to unit length here.
    """
    forcing = solver.forcing
    modes = low_modes(forcing.nstar)
    q = forcing.q
    K = u.kmax
    a_low = np.array([u[m] if max(abs(m.k1), abs(m.k2)) <= K else 0.0 for m in modes])
    # the u-block does not depend on (x, v)
    ublocks = [_upsilon_u_block(u, k, solver) for k in modes]
    fu = np.array([f for f, _ in ublocks])
    vals = []
    for x, v, h in samples:
        v = _unit(v)
        h = np.asarray(h, dtype=float)
        if abs(h[-2:] @ v) > 1e-10:
            raise DomainError("hv must be tangent to v")
        h = h / np.linalg.norm(h)
        man = np.array([-qk * bracket_ek_fbar(x, v, k).to_array() for k, (_, qk) in zip(modes, ublocks)])
        ups = fu @ h[:len(modes)] + man @ h[len(modes):]
        vals.append(max(np.max(np.abs(q * h[:len(modes)])), np.max(np.abs(ups))))
    vals = np.array(vals)
    return LowerBoundReport(vals, float(vals.min()), float(np.linalg.norm(a_low)))


__all__ = ["BundleVector", "LowModeField", "WaveVector", "fbar_eval", "bracket_ek_fbar", "bracket_fd",
           "bracket_coefficient", "spanning_matrix", "spanning_rank", "upsilon_q", "lower_bound_check",
           "LowerBoundReport"]

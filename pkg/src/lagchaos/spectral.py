"""
Real Fourier representation of divergence-free, mean-zero fields on the torus.

A velocity is stored as real coefficients a_k of the basis fields
gamma_k e_k(x), where

    e_k(x) = sin(k.x)  for k in Z^2_+  (k2 > 0, or k1 > 0 and k2 = 0)
    e_k(x) = cos(k.x)  for k in Z^2_-  (every other nonzero k)
    gamma_k = (k2, -k1) / |k|^2

so that u = sum_k a_k gamma_k e_k is divergence-free by construction.
Coefficients live in a dense (2K+1, 2K+1) array indexed ``[k1 + K, k2 + K]``
with the centre entry (k = 0) pinned to zero.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, DomainError

TWO_PI = 2.0 * np.pi


class WaveVector(NamedTuple):
    k1: int
    k2: int

    @property
    def is_plus(self):
        return self.k2 > 0 or (self.k1 > 0 and self.k2 == 0)

    @property
    def norm2(self):
        return self.k1 * self.k1 + self.k2 * self.k2

    def __neg__(self):
        return WaveVector(-self.k1, -self.k2)


def wave_vector(k):
    """Coerce a pair to a nonzero WaveVector."""
    kv = WaveVector(int(k[0]), int(k[1]))
    if kv.k1 == 0 and kv.k2 == 0:
        raise DomainError("wave vector k = (0, 0) is excluded from the basis")
    return kv


@lru_cache(maxsize=None)
def mode_table(kmax):
    """Integer wave-vector grids and derived per-mode constants for a truncation.

    Returns a read-only dict with arrays of shape (2K+1, 2K+1): ``k1``, ``k2``,
    ``norm2`` (|k|^2, with 1 at the origin to avoid division by zero),
    ``plus`` (membership in Z^2_+), ``g1``/``g2`` (components of gamma_k) and
    ``valid`` (k != 0).
    """
    if kmax < 1:
        raise ConfigurationError("kmax must be at least 1")
    r = np.arange(-kmax, kmax + 1)
    k1, k2 = np.meshgrid(r, r, indexing="ij")
    valid = (k1 != 0) | (k2 != 0)
    norm2 = (k1 * k1 + k2 * k2).astype(float)
    norm2[~valid] = 1.0
    plus = (k2 > 0) | ((k1 > 0) & (k2 == 0))
    table = dict(k1=k1, k2=k2, norm2=norm2, plus=plus, valid=valid,
                 g1=np.where(valid, k2 / norm2, 0.0), g2=np.where(valid, -k1 / norm2, 0.0))
    for arr in table.values():
        arr.flags.writeable = False
    return table


def low_modes(nstar):
    """Wave vectors with 0 < |k| <= nstar, in the package's canonical order.

    Ordering is by |k|^2, then k1, then k2; every low-mode coordinate vector
    in the package uses this order.
    """
    if nstar < 1:
        raise DomainError("nstar must be at least 1")
    out = [WaveVector(a, b) for a in range(-nstar, nstar + 1) for b in range(-nstar, nstar + 1)
           if 0 < a * a + b * b <= nstar * nstar]
    return tuple(sorted(out, key=lambda k: (k.norm2, k.k1, k.k2)))


@dataclass(frozen=True, eq=False)
class SpectralVelocity:
    """Immutable coefficient field u = sum a_k gamma_k e_k, |k|_inf <= kmax."""

    kmax: int
    coeffs: np.ndarray

    def __post_init__(self):
        n = 2 * self.kmax + 1
        c = np.array(self.coeffs, dtype=np.float64, copy=True)
        if c.shape != (n, n):
            raise ConfigurationError(f"coefficient array must have shape {(n, n)}, got {c.shape}")
        if c[self.kmax, self.kmax] != 0.0:
            raise DomainError("the k = 0 coefficient must vanish (mean-zero field)")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, kmax):
        n = 2 * kmax + 1
        return cls(kmax, np.zeros((n, n)))

    @classmethod
    def from_modes(cls, kmax, modes):
        """Build from a mapping {(k1, k2): a_k}."""
        c = np.zeros((2 * kmax + 1, 2 * kmax + 1))
        for k, a in dict(modes).items():
            kv = wave_vector(k)
            if max(abs(kv.k1), abs(kv.k2)) > kmax:
                raise DomainError(f"mode {tuple(kv)} exceeds kmax={kmax}")
            c[kv.k1 + kmax, kv.k2 + kmax] = a
        return cls(kmax, c)

    def __getitem__(self, k):
        kv = wave_vector(k)
        if max(abs(kv.k1), abs(kv.k2)) > self.kmax:
            return 0.0
        return float(self.coeffs[kv.k1 + self.kmax, kv.k2 + self.kmax])

    def to_modes(self):
        """Nonzero coefficients as {WaveVector: a_k}."""
        K = self.kmax
        i, j = np.nonzero(self.coeffs)
        return {WaveVector(int(a - K), int(b - K)): float(self.coeffs[a, b]) for a, b in zip(i, j)}

    def _check(self, other):
        if not isinstance(other, SpectralVelocity) or other.kmax != self.kmax:
            raise DomainError("operands must be SpectralVelocity fields with equal kmax")

    def __add__(self, other):
        self._check(other)
        return SpectralVelocity(self.kmax, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check(other)
        return SpectralVelocity(self.kmax, self.coeffs - other.coeffs)

    def __mul__(self, s):
        return SpectralVelocity(self.kmax, float(s) * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralVelocity(self.kmax, -self.coeffs)


def eval_basis(k, x):
    """e_k(x): sin(k.x) on Z^2_+, cos(k.x) on Z^2_-."""
    kv = wave_vector(k)
    phase = kv.k1 * x[0] + kv.k2 * x[1]
    return float(np.sin(phase) if kv.is_plus else np.cos(phase))


def gamma(k):
    """gamma_k = (k2, -k1)/|k|^2, orthogonal to k with length 1/|k|."""
    kv = wave_vector(k)
    return np.array([kv.k2, -kv.k1], dtype=float) / kv.norm2


def _active_modes(u):
    t = mode_table(u.kmax)
    mask = u.coeffs != 0.0
    return (t["k1"][mask].astype(float), t["k2"][mask].astype(float), u.coeffs[mask],
            t["plus"][mask], t["g1"][mask], t["g2"][mask])


def _phases(u, x):
    k1, k2, a, plus, g1, g2 = _active_modes(u)
    x = np.asarray(x, dtype=float)
    th = x[..., 0, None] * k1 + x[..., 1, None] * k2
    s, c = np.sin(th), np.cos(th)
    e = np.where(plus, s, c)
    # e_{-k}: cos for k in Z+, -sin for k in Z-
    em = np.where(plus, c, -s)
    return k1, k2, a, g1, g2, e, em


def eval_velocity(u, x):
    """Exact trigonometric sum u(x); ``x`` may carry leading batch axes."""
    _, _, a, g1, g2, e, _ = _phases(u, x)
    ae = a * e
    return np.stack([ae @ g1, ae @ g2], axis=-1)


def eval_velocity_gradient(u, x):
    """Du(x) with Du[i, j] = d u_i / d x_j."""
    k1, k2, a, g1, g2, _, em = _phases(u, x)
    w = a * em
    return np.stack([np.stack([w @ (g1 * k1), w @ (g1 * k2)], -1),
                     np.stack([w @ (g2 * k1), w @ (g2 * k2)], -1)], -2)


def eval_velocity_hessian(u, x):
    """D^2u(x) with H[i, j, l] = d^2 u_i / dx_j dx_l."""
    k1, k2, a, g1, g2, e, _ = _phases(u, x)
    w = -a * e
    kk = [k1, k2]
    g = [g1, g2]
    return np.stack([np.stack([np.stack([w @ (g[i] * kk[j] * kk[l]) for l in range(2)], -1)
                               for j in range(2)], -2) for i in range(2)], -3)


def low_mask(kmax, nstar):
    t = mode_table(kmax)
    return t["valid"] & (t["norm2"] <= nstar * nstar)


def project_low(u, nstar):
    """Keep modes with Euclidean |k| <= nstar."""
    if nstar < 1:
        raise DomainError("nstar must be at least 1")
    return SpectralVelocity(u.kmax, np.where(low_mask(u.kmax, nstar), u.coeffs, 0.0))


def project_high(u, nstar):
    """Keep modes with Euclidean |k| > nstar."""
    if nstar < 1:
        raise DomainError("nstar must be at least 1")
    return SpectralVelocity(u.kmax, np.where(low_mask(u.kmax, nstar), 0.0, u.coeffs))


def sobolev_norm(u, n):
    """(sum |k|^{2n} a_k^2)^{1/2} in the coefficient convention."""
    if n < 0:
        raise DomainError("Sobolev index must be non-negative")
    t = mode_table(u.kmax)
    w = np.where(t["valid"], t["norm2"], 0.0) ** n
    return float(np.sqrt(np.sum(w * u.coeffs ** 2)))


def low_coordinates(u, nstar):
    """Coefficients of u over the canonical low-mode list, as a vector."""
    K = u.kmax
    return np.array([u.coeffs[k.k1 + K, k.k2 + K] for k in low_modes(nstar)])


def from_low_coordinates(values, nstar, kmax):
    """Inverse of :func:`low_coordinates` (high modes set to zero)."""
    c = np.zeros((2 * kmax + 1, 2 * kmax + 1))
    for k, val in zip(low_modes(nstar), values):
        c[k.k1 + kmax, k.k2 + kmax] = val
    return SpectralVelocity(kmax, c)


def _check_resolution(gridsize, kmax):
    if gridsize < 2 * kmax + 2:
        raise ConfigurationError(
            f"gridsize={gridsize} cannot represent kmax={kmax}; need gridsize >= {2 * kmax + 2}")


def to_grid(u, gridsize):
    """Synthesize (u1, u2) on the uniform grid x_j = 2*pi*j/gridsize.

    The result has shape (2, N, N), indexed ``[component, i1, i2]``.
    """
    _check_resolution(gridsize, u.kmax)
    t = mode_table(u.kmax)
    N = gridsize
    # complex amplitude of exp(i k.x): sin -> 1/(2i) at k, cos -> 1/2 at k
    amp = np.where(t["plus"], -0.5j, 0.5) * u.coeffs
    out = np.empty((2, N, N))
    r1 = t["k1"] % N
    r2 = t["k2"] % N
    for c, g in enumerate((t["g1"], t["g2"])):
        F = np.zeros((N, N), dtype=complex)
        np.add.at(F, (r1, r2), g * amp)
        # e_k carries exp(-i k.x) with the conjugate weight
        np.add.at(F, ((-t["k1"]) % N, (-t["k2"]) % N), g * np.conj(amp))
        out[c] = np.fft.ifft2(F).real * (N * N)
    return out


def from_grid(field, kmax):
    """Project a gridded 2-vector field onto the gamma_k e_k basis.

    a_k = <field, gamma_k e_k> / ||gamma_k e_k||^2, which also performs the
    Leray projection (gradient fields map to zero).
    """
    field = np.asarray(field, dtype=float)
    N = field.shape[-1]
    _check_resolution(N, kmax)
    t = mode_table(kmax)
    r1 = t["k1"] % N
    r2 = t["k2"] % N
    acc = np.zeros((2 * kmax + 1, 2 * kmax + 1))
    for c, g in enumerate((t["g1"], t["g2"])):
        F = np.fft.fft2(field[c])[r1, r2] / (N * N)
        # <f, sin(k.x)> = -(2pi)^2 Im F_k ; <f, cos(k.x)> = (2pi)^2 Re F_k
        acc += g * np.where(t["plus"], -F.imag, F.real)
    # ||gamma_k e_k||^2 = |gamma_k|^2 (2pi)^2 / 2
    gnorm2 = t["g1"] ** 2 + t["g2"] ** 2
    a = np.where(t["valid"], 2.0 * acc / np.where(t["valid"], gnorm2, 1.0), 0.0)
    return SpectralVelocity(kmax, a)

"""
Pseudo-spectral integration of the 2D stochastic Navier-Stokes equations.

The velocity is advanced in vorticity form on the rfft layout: with
omega = curl u, the equation reads d omega = (nu Lap omega - u.grad omega) dt
+ noise, and curl removes the pressure so no separate Leray step is needed.
Each step is exponential Euler for the nonlinear term combined with the exact
Ornstein-Uhlenbeck update of the linear stochastic part:

    a_k <- E_k (a_k + dt b_k) + q_k sigma_k xi_k,
    E_k = exp(-nu |k|^2 dt),  sigma_k^2 = (1 - E_k^2) / (2 nu |k|^2).

Coefficients a_k and the vorticity Fourier coefficients w_k are related for
k in Z^2_+ by w_k = (-a_k + i a_{-k}) / 2, a bijection that is exact in
floating point, so the internal state converts to coefficients bit-exactly.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numba
import numpy as np

from .errors import BlowUpError, ConfigurationError, DomainError
from .rng import NoiseStream
from .spectral import SpectralVelocity, WaveVector, low_modes, mode_table, wave_vector

try:
    import pyfftw
except ImportError:  # pragma: no cover - exercised only without pyfftw
    pyfftw = None

DEFAULT_AMPLITUDE = 0.5


@dataclass(frozen=True)
class SolverConfig:
    nu: float = 0.05
    dt: float = 1e-3
    kmax: int = 21
    gridsize: int = 64
    dealias: float = 2.0 / 3.0

    def __post_init__(self):
        if self.nu <= 0 or self.dt <= 0:
            raise ConfigurationError("nu and dt must be positive")
        if self.kmax < 1:
            raise ConfigurationError("kmax must be at least 1")
        # products of two retained modes reach 2*kmax; exact dealiasing needs N > 3*kmax
        if self.gridsize < 3 * self.kmax + 1:
            raise ConfigurationError(
                f"gridsize={self.gridsize} too small for kmax={self.kmax}; need >= {3 * self.kmax + 1}")
        if self.kmax > self.dealias * self.gridsize / 2 + 1e-12:
            raise ConfigurationError("kmax exceeds the dealiasing cutoff dealias*gridsize/2")
        if self.dt >= 10.0 / (self.nu * self.kmax ** 2):
            raise ConfigurationError("dt violates the stability bound dt < 10/(nu kmax^2)")


@dataclass(frozen=True)
class ForcingSpec:
    """Noise profile q_k = amplitude |k|^-alpha on Z_0 = {0 < |k| <= nstar}.

    ``custom`` replaces the power law by explicit values (pairs
    ((k1, k2), q)); modes of Z_0 not listed get q = 0. It exists for
    single-mode test systems.
    """

    nstar: int = 4
    alpha: float = 5.5
    amplitude: float = DEFAULT_AMPLITUDE
    custom: tuple = field(default=None)

    def __post_init__(self):
        if self.nstar < 1:
            raise ConfigurationError("nstar must be at least 1")
        if self.custom is None:
            if self.alpha <= 5:
                raise ConfigurationError("alpha must exceed 5")
            if self.amplitude < 0:
                raise ConfigurationError("amplitude must be non-negative")
        else:
            pairs = tuple((tuple(wave_vector(k)), float(q)) for k, q in dict(self.custom).items())
            for k, _ in pairs:
                if k[0] ** 2 + k[1] ** 2 > self.nstar ** 2:
                    raise DomainError(f"custom mode {k} lies outside Z_0")
            object.__setattr__(self, "custom", pairs)

    @classmethod
    def single_mode(cls, k, q, nstar=None):
        kv = wave_vector(k)
        return cls(nstar=nstar or max(1, int(np.ceil(np.sqrt(kv.norm2)))), custom=((kv, q),))

    @property
    def modes(self):
        return low_modes(self.nstar)

    @cached_property
    def q(self):
        """q_k over the canonical low-mode order."""
        if self.custom is not None:
            table = dict(self.custom)
            return np.array([table.get(tuple(k), 0.0) for k in self.modes])
        return np.array([self.amplitude * k.norm2 ** (-self.alpha / 2) for k in self.modes])

    @property
    def qk(self):
        return {k: float(v) for k, v in zip(self.modes, self.q)}

    @property
    def E0(self):
        return float(np.sum(self.q ** 2))


@dataclass(frozen=True, eq=False)
class SnsState:
    u: SpectralVelocity
    t: float = 0.0


def energy(u):
    """Coefficient L2-proxy sum a_k^2."""
    return float(np.sum(u.coeffs ** 2))


def enstrophy(u):
    """sum |k|^2 a_k^2, the squared H^1 coefficient norm."""
    t = mode_table(u.kmax)
    return float(np.sum(np.where(t["valid"], t["norm2"], 0.0) * u.coeffs ** 2))


class _Transforms:
    """Batched c2r and single r2c transforms on preallocated buffers (unnormalized)."""

    def __init__(self, N, batch):
        M = N // 2 + 1
        if pyfftw is not None:
            self.spec = pyfftw.empty_aligned((batch, N, M), dtype=np.complex128)
            self.phys = pyfftw.empty_aligned((batch, N, N), dtype=np.float64)
            self.phys1 = pyfftw.empty_aligned((N, N), dtype=np.float64)
            self.spec1 = pyfftw.empty_aligned((N, M), dtype=np.complex128)
            # FFTW_ESTIMATE keeps plans (and thus rounding) independent of timing
            flags = ("FFTW_ESTIMATE",)
            self._bwd = pyfftw.FFTW(self.spec, self.phys, axes=(1, 2), direction="FFTW_BACKWARD",
                                    flags=flags, threads=1)
            self._fwd = pyfftw.FFTW(self.phys1, self.spec1, axes=(0, 1), direction="FFTW_FORWARD",
                                    flags=flags, threads=1)
        else:
            self.spec = np.empty((batch, N, M), dtype=np.complex128)
            self.phys = np.empty((batch, N, N))
            self.phys1 = np.empty((N, N))
            self.spec1 = np.empty((N, M), dtype=np.complex128)
            self._bwd = self._fwd = None
        self.N = N

    def backward(self):
        if self._bwd is not None:
            self._bwd.execute()
        else:
            self.phys[...] = np.fft.irfft2(self.spec, s=(self.N, self.N)) * (self.N * self.N)

    def forward(self):
        if self._fwd is not None:
            self._fwd.execute()
        else:
            self.spec1[...] = np.fft.rfft2(self.phys1)


@numba.njit(cache=True)
def _dot_pairs(phys, out):
    # out = phys[0]*phys[2] + phys[1]*phys[3]
    n0, n1 = out.shape
    for i in range(n0):
        for j in range(n1):
            out[i, j] = phys[0, i, j] * phys[2, i, j] + phys[1, i, j] * phys[3, i, j]


@numba.njit(cache=True)
def _dot_pairs_tangent(phys, out):
    # linearized advection: u.grad(w_h) + u_h.grad(w) with slots
    # 0,1 = u ; 2,3 = grad w ; 4,5 = u_h ; 6,7 = grad w_h
    n0, n1 = out.shape
    for i in range(n0):
        for j in range(n1):
            out[i, j] = (phys[0, i, j] * phys[6, i, j] + phys[1, i, j] * phys[7, i, j]
                         + phys[4, i, j] * phys[2, i, j] + phys[5, i, j] * phys[3, i, j])


@numba.njit(cache=True)
def _fill_synthesis(w, k1, k2, inv, spec):
    # slots: u1 = i k2 psi, u2 = -i k1 psi, w_x = i k1 w, w_y = i k2 w
    n0, n1 = w.shape
    for i in range(n0):
        a = k1[i]
        for j in range(n1):
            z = w[i, j]
            iz = complex(-z.imag, z.real)
            ip = iz * inv[i, j]
            b = k2[j]
            spec[0, i, j] = b * ip
            spec[1, i, j] = -a * ip
            spec[2, i, j] = a * iz
            spec[3, i, j] = b * iz


@numba.njit(cache=True)
def _inject_noise(w, n, ip, im, rows, cols, crows):
    for q in range(ip.shape[0]):
        c = complex(-0.5 * n[ip[q]], 0.5 * n[im[q]])
        w[rows[q], cols[q]] += c
        if crows[q] >= 0:
            w[crows[q], 0] += c.conjugate()


@numba.njit(cache=True)
def _stream_dense(w, rows, inv):
    n0, n1 = inv.shape
    PR = np.empty((n0, n1))
    PI = np.empty((n0, n1))
    for i in range(n0):
        r = rows[i]
        for j in range(n1):
            z = w[r, j]
            PR[i, j] = z.real * inv[i, j]
            PI[i, j] = z.imag * inv[i, j]
    return PR, PI


@numba.njit(cache=True)
def _exp_euler_update(w, E, cN, s):
    # w <- E*w + cN*s ; returns False if a non-finite value appears
    ok = True
    n0, n1 = w.shape
    for i in range(n0):
        for j in range(n1):
            z = E[i, j] * w[i, j] + cN[i, j] * s[i, j]
            if not (np.isfinite(z.real) and np.isfinite(z.imag)):
                ok = False
            w[i, j] = z
    return ok


class NavierStokes2D:
    """Stochastic 2D Navier-Stokes on the torus with low-mode additive noise.

    Parameters
    ----------
    config : SolverConfig
    forcing : ForcingSpec
    nonlinear : bool
        Test hook; ``False`` drops the advection term (linear OU system).
    debug : bool
        Assert on every step that noise only touches the forced set.
    """

    def __init__(self, config, forcing, nonlinear=True, debug=False):
        if forcing.nstar > config.kmax:
            raise ConfigurationError("forcing.nstar must not exceed kmax")
        self.config = config
        self.forcing = forcing
        self.nonlinear = nonlinear
        self.debug = debug
        K, N = config.kmax, config.gridsize
        M = N // 2 + 1
        self.kmax, self.N, self.M = K, N, M
        self.dt = config.dt

        r1 = np.fft.fftfreq(N, 1.0 / N).astype(np.int64)
        r2 = np.arange(M, dtype=np.int64)
        K1, K2 = np.meshgrid(r1, r2, indexing="ij")
        self.K1, self.K2 = K1, K2
        self._k1row = r1.astype(float)
        self._k2col = r2.astype(float)
        mask = (np.abs(K1) <= K) & (K2 <= K) & ((K1 != 0) | (K2 != 0))
        lap = (K1 ** 2 + K2 ** 2).astype(float)
        self.mask = mask
        self.lap = lap
        inv = np.where(mask, 1.0 / np.where(mask, lap, 1.0), 0.0)
        self.inv_lap = inv
        n2 = float(N * N)
        ik1, ik2 = 1j * K1, 1j * K2
        self.E = np.where(mask, np.exp(-config.nu * lap * config.dt), 0.0)
        self._cN = -config.dt * self.E * mask / n2
        self._tr = _Transforms(N, 4)
        self._tr_tangent = None

        self._build_index_maps()
        self._build_noise_maps()

    # coefficient <-> vorticity layout maps
    def _build_index_maps(self):
        K, N, M = self.kmax, self.N, self.M
        t = mode_table(K)
        sel = t["plus"] & (np.abs(t["k1"]) <= K)
        k1 = t["k1"][sel]
        k2 = t["k2"][sel]
        n = 2 * K + 1
        self._P = ((k1 + K) * n + (k2 + K)).astype(np.int64)
        self._Mneg = ((-k1 + K) * n + (-k2 + K)).astype(np.int64)
        self._R = ((k1 % N) * M + k2).astype(np.int64)
        conj = k2 == 0
        self._conj_sel = np.nonzero(conj)[0]
        self._Rc = (((-k1[conj]) % N) * M).astype(np.int64)
        self._plus_k1, self._plus_k2 = k1.astype(np.int64), k2.astype(np.int64)

    def _build_noise_maps(self):
        f = self.forcing
        modes = f.modes
        self.m = len(modes)
        pos = {tuple(k): i for i, k in enumerate(modes)}
        lam = np.array([self.config.nu * k.norm2 for k in modes])
        sigma = np.sqrt(-np.expm1(-2.0 * lam * self.dt) / (2.0 * lam))
        self.noise_scale = f.q * sigma
        ip, im, R, Rc_sel = [], [], [], []
        K, N, M = self.kmax, self.N, self.M
        for k in modes:
            if not k.is_plus:
                continue
            ip.append(pos[tuple(k)])
            im.append(pos[tuple(-k)])
            R.append((k.k1 % N) * M + k.k2)
            Rc_sel.append(((-k.k1) % N) * M if k.k2 == 0 else -1)
        self._nz_ip = np.array(ip, dtype=np.int64)
        self._nz_im = np.array(im, dtype=np.int64)
        self._nz_R = np.array(R, dtype=np.int64)
        Rc = np.array(Rc_sel, dtype=np.int64)
        self._nz_csel = np.nonzero(Rc >= 0)[0]
        self._nz_rows, self._nz_cols = np.divmod(self._nz_R, M)
        self._nz_crows = np.where(Rc >= 0, Rc // M, -1)
        self._nz_Rc = Rc[self._nz_csel]
        forced = np.zeros(N * M, dtype=bool)
        forced[self._nz_R] = True
        forced[self._nz_Rc] = True
        self._forced_flat = forced.reshape(N, M)

    def noise_stream(self, seed, stream_id=0, counter=0):
        return NoiseStream(seed, stream_id, self.m, counter)

    # conversions
    def hat_from_coeffs(self, a):
        a = np.asarray(a).ravel()
        w = np.zeros(self.N * self.M, dtype=np.complex128)
        c = (-a[self._P] + 1j * a[self._Mneg]) * 0.5
        w[self._R] = c
        w[self._Rc] = np.conj(c[self._conj_sel])
        return w.reshape(self.N, self.M)

    def coeffs_from_hat(self, w):
        K = self.kmax
        n = 2 * K + 1
        a = np.zeros(n * n)
        wf = w.ravel()[self._R]
        a[self._P] = -2.0 * wf.real
        a[self._Mneg] = 2.0 * wf.imag
        return a.reshape(n, n)

    def to_hat(self, u):
        if u.kmax != self.kmax:
            raise DomainError("velocity kmax does not match solver kmax")
        return self.hat_from_coeffs(u.coeffs)

    def to_velocity(self, w):
        return SpectralVelocity(self.kmax, self.coeffs_from_hat(w))

    def noise_hat(self, xi):
        """Vorticity-layout increment produced by normals ``xi`` in one step."""
        n = self.noise_scale * xi
        c = (-n[self._nz_ip] + 1j * n[self._nz_im]) * 0.5
        out = np.zeros(self.N * self.M, dtype=np.complex128)
        out[self._nz_R] += c
        out[self._nz_Rc] += np.conj(c[self._nz_csel])
        return out.reshape(self.N, self.M)

    # nonlinear term
    def advection_hat(self, w):
        """Dealiased -(u.grad w) in vorticity Fourier coefficients (true scaling)."""
        tr = self._tr
        _fill_synthesis(w, self._k1row, self._k2col, self.inv_lap, tr.spec)
        tr.backward()
        _dot_pairs(tr.phys, tr.phys1)
        tr.forward()
        return -tr.spec1 * self.mask / (self.N * self.N)

    def nonlinear_term(self, u):
        """Coefficients b_k of -Leray(u.grad u)."""
        return self.to_velocity(self.advection_hat(self.to_hat(u)))

    def advection_tangent_hat(self, w, h):
        """Derivative of :meth:`advection_hat` at ``w`` in direction ``h``."""
        if self._tr_tangent is None:
            self._tr_tangent = _Transforms(self.N, 8)
        tr = self._tr_tangent
        _fill_synthesis(w, self._k1row, self._k2col, self.inv_lap, tr.spec[:4])
        _fill_synthesis(h, self._k1row, self._k2col, self.inv_lap, tr.spec[4:])
        tr.backward()
        _dot_pairs_tangent(tr.phys, tr.phys1)
        tr.forward()
        return -tr.spec1 * self.mask / (self.N * self.N)

    # time stepping
    def advance_hat(self, w, xi, step_index=0, t=0.0):
        """One in-place step of the vorticity coefficients ``w``."""
        if self.nonlinear:
            tr = self._tr
            _fill_synthesis(w, self._k1row, self._k2col, self.inv_lap, tr.spec)
            tr.backward()
            _dot_pairs(tr.phys, tr.phys1)
            tr.forward()
            ok = _exp_euler_update(w, self.E, self._cN, tr.spec1)
        else:
            w *= self.E
            ok = bool(np.isfinite(w).all())
        if not ok:
            raise BlowUpError("non-finite vorticity coefficients", {"t": t, "step": step_index})
        if self.debug:
            before = w.copy()
        _inject_noise(w, self.noise_scale * xi, self._nz_ip, self._nz_im,
                      self._nz_rows, self._nz_cols, self._nz_crows)
        if self.debug:
            touched = w != before
            assert not np.any(touched & ~self._forced_flat), "noise reached an unforced mode"
        return w

    def step(self, state, rng):
        """One stochastic step; returns a new SnsState."""
        w = self.to_hat(state.u)
        self.advance_hat(w, rng.next(), t=state.t)
        return SnsState(self.to_velocity(w), state.t + self.dt)

    def burn_in(self, state, rng, T_burn):
        """Advance round(T_burn/dt) steps."""
        if T_burn < 0:
            raise DomainError("T_burn must be non-negative")
        n = int(round(T_burn / self.dt))
        if n == 0:
            return state
        w = self.to_hat(state.u)
        for i in range(n):
            self.advance_hat(w, rng.next(), i, state.t + i * self.dt)
        return SnsState(self.to_velocity(w), state.t + n * self.dt)

    # helpers for particle evaluation
    def stream_dense(self, w):
        """Stream-function coefficients over Z^2_+ as dense (2K+1, K+1) real/imag arrays."""
        K = self.kmax
        if not hasattr(self, "_dense_rows"):
            self._dense_rows = np.arange(-K, K + 1) % self.N
            inv = self.inv_lap[self._dense_rows, :K + 1].copy()
            inv[:K + 1, 0] = 0.0  # (k1 <= 0, k2 = 0) lies in Z^2_-
            self._dense_inv = inv
        return _stream_dense(w, self._dense_rows, self._dense_inv)


def default_solver(amplitude=None, **overrides):
    """Solver at the default desk configuration, with optional overrides."""
    cfg_keys = {"nu", "dt", "kmax", "gridsize", "dealias"}
    cfg = SolverConfig(**{k: v for k, v in overrides.items() if k in cfg_keys})
    fkw = {k: v for k, v in overrides.items() if k in {"nstar", "alpha"}}
    forcing = ForcingSpec(amplitude=DEFAULT_AMPLITUDE if amplitude is None else amplitude, **fkw)
    return NavierStokes2D(cfg, forcing)


__all__ = ["SolverConfig", "ForcingSpec", "SnsState", "NavierStokes2D", "NoiseStream",
           "energy", "enstrophy", "default_solver", "WaveVector", "DEFAULT_AMPLITUDE"]

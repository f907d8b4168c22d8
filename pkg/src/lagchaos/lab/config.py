"""Experiment configuration: flat ``key = value`` files plus CLI overrides."""

import hashlib
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from ..errors import ConfigurationError
from ..solver import DEFAULT_AMPLITUDE, ForcingSpec, NavierStokes2D, SolverConfig

EXPERIMENTS = ("simulate", "lyapunov", "spectrum", "malliavin", "spanning", "validate")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "lyapunov"
    # solver
    nu: float = 0.05
    dt: float = 1e-3
    kmax: int = 21
    gridsize: int = 64
    dealias: float = 2.0 / 3.0
    # forcing
    nstar: int = 4
    alpha: float = 5.5
    amplitude: float = DEFAULT_AMPLITUDE
    # run
    horizon: float = 200.0
    ensemble: int = 1
    seed: int = 0
    burn_in: float = 20.0
    renorm_interval: float = 1.0
    tau0: float = 0.1
    T0: float = 0.5
    quadrature_dt: float = 1e-3
    points: int = 100
    checkpoint_every: float = 0.0
    stop_at: float = 0.0
    resume: bool = False
    v_sigma: float = 1e-2
    v_alpha: float = 1.0
    moment_eta: float = 1e-3
    out: str = "out"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {self.experiment!r}")
        for name in ("nu", "dt", "horizon", "renorm_interval", "quadrature_dt", "v_sigma", "v_alpha"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        for name in ("ensemble", "points", "kmax", "gridsize", "nstar"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be at least 1")
        for name in ("burn_in", "checkpoint_every", "stop_at", "amplitude", "moment_eta"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        if self.experiment == "malliavin" and not 0 < self.tau0 < self.T0 < 1:
            raise ConfigurationError("malliavin runs need 0 < tau0 < T0 < 1")

    def solver_config(self):
        return SolverConfig(nu=self.nu, dt=self.dt, kmax=self.kmax, gridsize=self.gridsize,
                            dealias=self.dealias)

    def forcing_spec(self):
        return ForcingSpec(nstar=self.nstar, alpha=self.alpha, amplitude=self.amplitude)

    def make_solver(self):
        return NavierStokes2D(self.solver_config(), self.forcing_spec())

    def to_text(self):
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))

    def execution_keys(self):
        """Keys that change how a run executes but not what it computes."""
        keys = {"out", "stop_at", "resume"}
        if self.experiment != "simulate":
            keys.add("checkpoint_every")  # sampling cadence only for simulate
        return keys

    def digest(self):
        """sha256 over the canonical text of the result-relevant keys."""
        skip = self.execution_keys()
        text = "".join(f"{f.name} = {_format(getattr(self, f.name))}\n"
                       for f in fields(self) if f.name not in skip)
        return hashlib.sha256(text.encode()).hexdigest()

    def as_dict(self):
        return asdict(self)


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_ALIASES = {"output_path": "out"}


def canonical_key(key):
    """Accept ``checkpoint-every`` style spellings and documented aliases."""
    k = key.strip().replace("-", "_")
    return _ALIASES.get(k, k)


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key, raw):
    kind = _TYPES[key]
    text = str(raw).strip()
    try:
        if kind in ("bool", bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind in ("int", int):
            return int(text, 0)
        if kind in ("float", float):
            return float(text)
        return text
    except ValueError:
        raise ConfigurationError(f"bad value for {key}: {text!r}") from None


def parse_text(text, source="<config>"):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = canonical_key(key)
        if key not in _TYPES:
            raise ConfigurationError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_config(path=None, overrides=None):
    """Defaults, then the file at ``path``, then non-None ``overrides``."""
    values = {}
    if path is not None:
        p = Path(path)
        try:
            values.update(parse_text(p.read_text(), str(p)))
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {p}: {exc}") from exc
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        key = canonical_key(key)
        if key not in _TYPES:
            raise ConfigurationError(f"unknown key {key!r}")
        values[key] = _coerce(key, val)
    return ExperimentConfig(**values)


def with_overrides(config, **kw):
    return replace(config, **{k: v for k, v in kw.items() if v is not None})

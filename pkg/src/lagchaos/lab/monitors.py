"""Super-Lyapunov function and empirical exponential-moment monitors."""

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError
from ..spectral import sobolev_norm

GROWTH_FACTOR = 1.5
GROWTH_RUN = 3


def super_lyapunov_V(u, sigma=1e-2, alpha_V=1.0):
    """V(u) = sigma (|u|_{H^1}^2 + alpha |u|_{H^5}^{1/3})."""
    if not (sigma > 0 and alpha_V > 0):
        raise DomainError("sigma and alpha_V must be positive")
    return sigma * (sobolev_norm(u, 1) ** 2 + alpha_V * sobolev_norm(u, 5) ** (1.0 / 3.0))


@dataclass(frozen=True)
class MomentReport:
    times: np.ndarray
    V_series: np.ndarray
    window_sup_grad: np.ndarray
    window_sup_V: np.ndarray
    exp_moment_grad: float
    exp_moment_V: float
    flagged: bool


class MomentMonitor:
    """Streaming window sups of |grad u|^2 and V(u).

    Samples arrive at a fixed cadence; every ``window`` samples close a
    window. The run is flagged when GROWTH_RUN consecutive windows each
    exceed the previous one by GROWTH_FACTOR. Flagging never aborts.
    """

    def __init__(self, window, eta=1e-3, sigma=1e-2, alpha_V=1.0):
        if window < 1:
            raise DomainError("window must hold at least one sample")
        self.window = int(window)
        self.eta = eta
        self.sigma = sigma
        self.alpha_V = alpha_V
        self.times, self.V = [], []
        self.sup_grad, self.sup_V = [], []
        self._g = self._v = -np.inf
        self._n = 0

    def update(self, t, u):
        g = sobolev_norm(u, 1) ** 2
        V = super_lyapunov_V(u, self.sigma, self.alpha_V)
        self.times.append(float(t))
        self.V.append(V)
        self._g = max(self._g, g)
        self._v = max(self._v, V)
        self._n += 1
        if self._n == self.window:
            self.sup_grad.append(self._g)
            self.sup_V.append(self._v)
            self._g = self._v = -np.inf
            self._n = 0

    def report(self):
        sg = np.array(self.sup_grad)
        sv = np.array(self.sup_V)
        return MomentReport(np.array(self.times), np.array(self.V), sg, sv,
                            float(np.mean(np.exp(self.eta * sg))) if sg.size else float("nan"),
                            float(np.mean(np.exp(self.eta * sv))) if sv.size else float("nan"),
                            growth_flag(sg))


def growth_flag(sups, factor=GROWTH_FACTOR, run=GROWTH_RUN):
    run_len = 0
    for prev, cur in zip(sups[:-1], sups[1:]):
        run_len = run_len + 1 if cur > factor * prev else 0
        if run_len >= run:
            return True
    return False


def moment_monitor(trajectory, eta=1e-3, window=10, sigma=1e-2, alpha_V=1.0):
    """Monitor a sequence of (t, u) samples taken at a fixed cadence."""
    mon = MomentMonitor(window, eta, sigma, alpha_V)
    for t, u in trajectory:
        mon.update(t, u)
    return mon.report()

"""Markov martingale with Gaussian marginals built from nested barrier stops.

For variances increasing in t the barrier maps of N(0, t) are ordered, so a
single Brownian path stopped successively at each barrier gives a process
X_t = B_{tau_t} with the marginals of Brownian motion whose law is not
Wiener measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate

from .embedding import EmbeddingMap, build_psi
from .errors import ConfigError, OrderingViolation, ZeroSpot
from .marginal import DensitySpec, Gaussian, RealLine
from .simulate import EmpiricalCDF, SimConfig, barrier_tables, ks_distance, run_nested

ORDER_TOL = 1e-8


@dataclass(frozen=True)
class TestFunction:
    """A smooth test function with its derivative, both vectorised."""

    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    name: str = ""

    __test__ = False  # not a pytest class


class PeacockFamily:
    """Barrier maps of N(0, t) on a time grid, built lazily and cached."""

    def __init__(self, horizon: float, times, closed_form: bool = True):
        times = np.asarray(times, dtype=float)
        if not horizon > 0:
            raise ConfigError(f"horizon must be positive, got {horizon!r}")
        if times.size < 2 or np.any(np.diff(times) <= 0) or times[0] <= 0 or times[-1] > horizon:
            raise ConfigError("time grid must be increasing inside (0, horizon]")
        self.horizon = float(horizon)
        self.times = times
        self.closed_form = closed_form
        self._embedding = lru_cache(maxsize=256)(self._build)

    @staticmethod
    def _build(t: float) -> EmbeddingMap:
        return build_psi(Gaussian(DensitySpec.builtin("gaussian", t=t)), method="log_ratio")

    def marginal(self, t: float) -> Gaussian:
        return self.embedding(t).marginal

    def embedding(self, t: float) -> EmbeddingMap:
        return self._embedding(float(t))

    @property
    def maps(self) -> list[EmbeddingMap]:
        return [self.embedding(t) for t in self.times]

    def psi(self, t: float, x):
        return self.embedding(t).psi(x)

    def dt_psi(self, t: float, x):
        """Time derivative of psi_t at |x|.

        For the Gaussian family psi_t(x) = sqrt(t) psi_1(x/sqrt(t)), which
        gives (psi_t(x) - x psi_t'(x)) / (2t).  Otherwise a centred
        difference over the neighbouring grid times is used.
        """
        x = np.abs(np.asarray(x, dtype=float))
        if self.closed_form:
            e = self.embedding(t)
            return (e.psi(x) - x * e.dpsi(x)) / (2.0 * t)
        k = int(np.argmin(np.abs(self.times - t)))
        if not (0 < k < self.times.size - 1) or abs(self.times[k] - t) > 1e-12:
            raise ConfigError("finite-difference time derivative needs an interior grid time")
        lo, hi = self.times[k - 1], self.times[k + 1]
        return (self.psi(hi, x) - self.psi(lo, x)) / (hi - lo)

    def check_ordering(self, tol: float = ORDER_TOL) -> float:
        """Largest increase of psi_t(x) between consecutive grid times."""
        maps = self.maps
        x_hi = min(m.x_max for m in maps)
        x = np.geomspace(1e-4 * x_hi, x_hi, 512)
        worst = -math.inf
        for a, b in zip(maps[:-1], maps[1:]):
            pa, pb = a.psi(x), b.psi(x)
            rise = (pb - pa) / np.maximum(1.0, pa)
            worst = max(worst, float(rise.max()))
        if worst > tol:
            raise OrderingViolation(f"psi_t increases in t by {worst:.3g} on the grid")
        return worst


def build_peacock(horizon: float, n_times: int, closed_form: bool = True) -> PeacockFamily:
    """Gaussian family on the grid T k / n, k = 1..n, with ordering verified."""
    if int(n_times) != n_times or n_times < 2:
        raise ConfigError(f"n_times must be an integer >= 2, got {n_times!r}")
    times = horizon * np.arange(1, n_times + 1) / n_times
    fam = PeacockFamily(horizon, times, closed_form)
    fam.check_ordering()
    return fam


def conditional_expectation(fam: PeacockFamily, f: TestFunction | Callable, x: float,
                            t: float, s: float) -> float:
    """E[f(X_s) | X_t = x] for t < s, from the state (x, psi_t(|x|)).

    Uses the linear-in-x form a(l) x^+ + b(l) x^- + c(l) of the expectation
    of f at the exit of the time-s barrier.
    """
    if not s > t:
        raise ConfigError("conditional expectation needs t < s")
    fn = f.f if isinstance(f, TestFunction) else f
    es = fam.embedding(s)
    l = float(fam.psi(t, np.array([x]))[0])
    y_l = float(es.phi(np.array([l]))[0])
    g_l = float(es.gamma_at_psi(np.array([y_l]))[0])
    m = es.marginal

    # c(l) in y = phi_s(m) coordinates: dm = psi_s'(y) dy and psi_s'(y)/y is the hazard
    def integrand(y):
        ya = np.array([y])
        w = m.hazard(ya) * np.exp(g_l - es.gamma_at_psi(ya))
        return float(((fn(ya) + fn(-ya)) * w)[0]) / 2.0

    c, _ = integrate.quad(integrand, y_l, es.x_max, epsabs=1e-13, epsrel=1e-12, limit=400)
    if y_l == 0.0:
        return c
    a = (float(fn(np.array([y_l]))[0]) - c) / y_l
    b = (float(fn(np.array([-y_l]))[0]) - c) / y_l
    return a * max(x, 0.0) + b * max(-x, 0.0) + c


def generator_apply(fam: PeacockFamily, f: TestFunction, t: float, x: float,
                    n_grid: int = 8192) -> float:
    """Generator of the nested-stop process applied to f at (t, x), x != 0.

    The jump part integrates f(y) + f(-y) - 2 f(x) against the increments of
    the grid function y -> exp(-gamma_t(psi_t(y))) on [|x|, x_max], with the
    remaining mass beyond x_max assigned to the last node.
    """
    if x == 0:
        raise ZeroSpot("the generator is not defined at x = 0")
    e = fam.embedding(t)
    ax = abs(x)
    xa = np.array([x])
    y = np.concatenate(([ax], np.geomspace(ax, e.x_max, n_grid)[1:])) if ax < e.x_max else np.array([ax])
    surv = np.exp(-e.gamma_at_psi(y))
    d_surv = np.append(np.diff(surv), -surv[-1])
    mid = np.append(0.5 * (y[:-1] + y[1:]), y[-1])
    jump = f.f(mid) + f.f(-mid) - 2.0 * f.f(xa)[0]
    g_x = float(e.gamma_at_psi(np.array([ax]))[0])
    integral = float(np.sum(jump * d_surv * np.exp(g_x)))
    speed = float(fam.dt_psi(t, xa)[0] / e.dpsi(xa)[0])
    return -speed * (math.copysign(1.0, x) * float(f.df(xa)[0]) - integral / (2.0 * ax))


# --- simulation ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FakeBM:
    times: np.ndarray
    values: np.ndarray        # n_paths x n_times
    local_times: np.ndarray
    censored: np.ndarray

    def column(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-12:
            raise ConfigError(f"time {t} is not on the grid")
        return self.values[~self.censored, k]

    def increments(self, s: float, t: float) -> np.ndarray:
        return self.column(t) - self.column(s)

    @property
    def censor_rate(self) -> float:
        return float(self.censored.mean())


def simulate_fake_bm(fam: PeacockFamily, cfg: SimConfig, path_offset: int = 0) -> FakeBM:
    """One path per sample, stopped in turn at each grid time's barrier."""
    fam.check_ordering()
    upper, lower = barrier_tables(fam.maps, cfg)
    b, n, _, _, cens = run_nested(upper, lower, cfg, path_offset=path_offset)
    return FakeBM(fam.times.copy(), b, n * cfg.dl, cens)


def excess_kurtosis(x: np.ndarray, n_batches: int = 32) -> tuple[float, float]:
    """Sample excess kurtosis and its standard error from batch means."""
    x = np.asarray(x, dtype=float)

    def kurt(v):
        c = v - v.mean()
        m2 = np.mean(c * c)
        return float(np.mean(c**4) / (m2 * m2) - 3.0)

    batches = np.array_split(x, n_batches)
    k = np.array([kurt(v) for v in batches])
    return kurt(x), float(k.std(ddof=1) / math.sqrt(n_batches))


def diagnostics(res: FakeBM, fam: PeacockFamily, exclusion=(-0.1, 0.1),
                increment=None) -> dict:
    """KS distance per grid time, increment moments and censoring."""
    ks = {}
    for t in res.times:
        emp = EmpiricalCDF(res.column(t))
        ks[f"{t:g}"] = ks_distance(emp, RealLine(fam.marginal(t)), exclusion)
    s, t = increment or (res.times[-2], res.times[-1])
    inc = res.increments(s, t)
    kurt, kurt_se = excess_kurtosis(inc)
    return {
        "ks": ks,
        "increment": [float(s), float(t)],
        "increment_mean": float(inc.mean()),
        "increment_se": float(inc.std(ddof=1) / math.sqrt(inc.size)),
        "excess_kurtosis": kurt,
        "excess_kurtosis_se": kurt_se,
        "censor_rate": res.censor_rate,
    }

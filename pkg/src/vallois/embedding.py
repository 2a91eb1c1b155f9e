"""Local-time barrier maps (psi, phi, gamma) for symmetric and general marginals.

A map stops Brownian motion the first time ``|B| >= phi(L)`` where ``L`` is
the local time at zero.  ``psi`` is the inverse of ``phi`` and
``exp(-gamma(l))`` is the law of the stopped local time, ``P(L_tau > l)``.
"""

from __future__ import annotations

import csv
import math
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import PchipInterpolator

from .errors import AssumptionViolation, GammaDivergence, OdeStall
from .marginal import SymmetricMarginal, validate_marginal
from .numerics import HermiteCurve, cumulative_integral, integrate_segments

GRID_POINTS = 4096
BRACKET_TOL = 1e-10


class EmbeddingMap:
    """Symmetric barrier map with nondecreasing phi (the super-hedging side).

    Built from values on an x-grid: ``psi`` and its slope, ``g = gamma(psi(x))``
    and its slope, and ``m`` = int_0^{psi(x)} e^{gamma(l)} dl.
    """

    reversed = False

    def __init__(self, x, psi, dpsi, g, dg, m=None, marginal=None, metadata=None):
        self.x = np.asarray(x, dtype=float)
        self.psi_values = np.asarray(psi, dtype=float)
        self.g_values = np.asarray(g, dtype=float)
        self.marginal = marginal
        self.metadata = dict(metadata or {})
        # slopes are node arrays, or (left, right) per-segment pairs at kinks
        self._dpsi = _segment_slopes(dpsi)
        self._psi = HermiteCurve(self.x, self.psi_values, *self._dpsi, monotone=True)
        self._g = HermiteCurve(self.x, self.g_values, *_segment_slopes(dg), monotone=True)
        self._m_given = m

    @cached_property
    def _m(self) -> HermiteCurve:
        m = self._cumulate_m() if self._m_given is None else self._m_given
        self.m_values = np.asarray(m, dtype=float)
        d0, d1 = self._dpsi
        if d1 is None:
            d0, d1 = d0[:-1], d0[1:]
        eg = np.exp(self.g_values)
        return HermiteCurve(self.x, self.m_values, eg[:-1] * d0, eg[1:] * d1, monotone=True)

    def _cumulate_m(self):
        return cumulative_integral(lambda y: np.exp(self._g(y)) * self._psi.derivative(y), self.x)

    @property
    def x_max(self) -> float:
        return float(self.x[-1])

    @property
    def l_max(self) -> float:
        return float(self.psi_values[-1])

    def psi(self, x):
        return self._psi(np.abs(np.asarray(x, dtype=float)))

    def dpsi(self, x):
        return self._psi.derivative(np.abs(np.asarray(x, dtype=float)))

    def phi(self, l):
        return self._psi.inverse(np.asarray(l, dtype=float))

    def gamma_at_psi(self, x):
        """gamma(psi(x)), i.e. int_0^x psi'(y)/y dy."""
        return self._g(np.abs(np.asarray(x, dtype=float)))

    def gamma(self, l):
        l = np.asarray(l, dtype=float)
        g = self._g(self.phi(l))
        # beyond the grid gamma keeps growing with slope 1/phi
        return np.where(l > self.l_max, self.g_values[-1] + (l - self.l_max) / self.x_max, g)

    def local_time_tail(self, l):
        return np.exp(-self.gamma(l))

    def exp_gamma_integral(self, l):
        """int_0^l e^{gamma(z)} dz."""
        return self._m(self.phi(l))

    # Interface shared with GeneralEmbedding, used by the hedging module.
    def phi_plus(self, l):
        return self.phi(l)

    def phi_minus(self, l):
        return -self.phi(l)

    def psi_plus(self, y):
        return self.psi(y)

    def psi_minus(self, y):
        return self.psi(y)

    def k_plus(self, l):
        """int_0^l e^{gamma}/phi_plus = e^{gamma(l)} - 1, since gamma' = 1/phi."""
        return np.expm1(self.gamma(l))

    def k_minus(self, l):
        return -np.expm1(self.gamma(l))

    def tail_plus(self, y):
        return self.marginal.tail(y)

    def tail_minus(self, y):
        return self.marginal.tail(y)

    @property
    def x_max_minus(self) -> float:
        return self.x_max

    @property
    def symmetric(self) -> bool:
        return True

    def __repr__(self) -> str:
        src = self.marginal.spec.label() if self.marginal is not None else "imported"
        return f"{type(self).__name__}({src}, x_max={self.x_max:g}, l_max={self.l_max:g})"


class ReversedEmbedding(EmbeddingMap):
    """Symmetric barrier map with nonincreasing phi (the sub-hedging side).

    ``psi`` decreases from a finite value at 0 to 0 at x_max, and gamma
    diverges as l approaches psi(0).  Below the first positive grid node the
    map is extended with its small-x asymptotics ``y mu(y)/mu([0,y]) ~ kappa``.
    """

    reversed = True

    def __init__(self, x, psi, dpsi, g, dg, kappa, m=None, marginal=None, metadata=None):
        self.kappa = float(kappa)
        x = np.asarray(x, dtype=float)
        g = np.asarray(g, dtype=float)
        self.x = x
        self.psi_values = np.asarray(psi, dtype=float)
        self.g_values = g
        self.marginal = marginal
        self.metadata = dict(metadata or {})
        self._psi = HermiteCurve(x, self.psi_values, dpsi, monotone=True)
        # gamma(psi(x)) is infinite at x = 0; keep only the positive nodes
        self._g = HermiteCurve(x[1:], g[1:], np.asarray(dg)[1:], monotone=True)
        if m is None:
            m = np.concatenate(([math.inf], self._cumulate_from_top()))
        self.m_values = np.asarray(m, dtype=float)
        dm = np.exp(g[1:]) * np.asarray(dpsi)[1:]
        self._m = HermiteCurve(x[1:], self.m_values[1:], dm, monotone=True)

    def _cumulate_from_top(self):
        xs = self.x[1:]
        f = lambda y: -np.exp(self._g(y)) * self._psi.derivative(y)
        seg = integrate_segments(f, xs[:-1], xs[1:])
        return np.concatenate((np.cumsum(seg[::-1])[::-1], [0.0]))

    @property
    def x_min(self) -> float:
        return float(self.x[1])

    @property
    def l_max(self) -> float:
        return float(self.psi_values[0])

    def gamma_at_psi(self, x):
        x = np.abs(np.asarray(x, dtype=float))
        with np.errstate(divide="ignore"):
            small = self.g_values[1] + self.kappa * np.log(self.x_min / x)
        return np.where(x >= self.x_min, self._g(np.maximum(x, self.x_min)), small)

    def gamma(self, l):
        l = np.asarray(l, dtype=float)
        g = self.gamma_at_psi(self.phi(l))
        return np.where(l >= self.l_max, math.inf, np.where(l <= 0, 0.0, g))

    def exp_gamma_integral(self, l):
        x = self.phi(l)
        inside = self._m(np.maximum(x, self.x_min))
        # e^{gamma} ~ c y^{-kappa} and -psi' ~ kappa below x_min
        c = math.exp(self.g_values[1]) * self.x_min**self.kappa
        xs = np.maximum(x, 1e-300)
        if abs(self.kappa - 1.0) < 1e-12:
            extra = c * np.log(self.x_min / xs)
        else:
            extra = c * self.kappa * (self.x_min ** (1 - self.kappa) - xs ** (1 - self.kappa)) / (1 - self.kappa)
        return np.where(x >= self.x_min, inside, self.m_values[1] + extra)


def _segment_slopes(d):
    if isinstance(d, tuple):
        return np.asarray(d[0], dtype=float), np.asarray(d[1], dtype=float)
    return np.asarray(d, dtype=float), None


def _probe_gamma(hazard, x_min: float) -> None:
    """Raise GammaDivergence unless int_0 hazard converges at the origin."""
    pieces = []
    for k in range(1, 4):
        a = x_min * 10.0 ** (-2 * k)
        b = x_min * 10.0 ** (-2 * (k - 1))
        edges = np.geomspace(a, b, 33)
        pieces.append(float(integrate_segments(hazard, edges[:-1], edges[1:]).sum()))
    if not all(np.isfinite(pieces)):
        raise GammaDivergence("hazard is not finite near the origin")
    # for an integrable hazard each finer band contributes far less
    if pieces[2] > 0.5 * pieces[1] + 1e-14 or pieces[1] > 0.5 * pieces[0] + 1e-14:
        raise GammaDivergence(f"gamma probe does not settle near 0: band integrals {pieces}")


def _require_valid(m: SymmetricMarginal) -> None:
    report = validate_marginal(m)
    if not report.passed:
        raise AssumptionViolation(f"marginal fails validation: {report.failures()}")


def build_psi(m: SymmetricMarginal, method: str = "ratio", n_grid: int = GRID_POINTS,
              validate: bool = True) -> EmbeddingMap:
    """Barrier map embedding ``m``: psi(x) = int_0^x y mu(y)/mu([y, inf)) dy.

    ``method="log_ratio"`` uses the equivalent form
    psi(x) = int_0^x log(R(y)/R(x)) dy, which is better conditioned far in
    the tail.
    """
    if validate:
        _require_valid(m)
    x = m.grid(n_grid)
    hazard = m.hazard(x)
    if not np.all(np.isfinite(hazard)):
        raise GammaDivergence("hazard is not finite on the grid")
    _probe_gamma(m.hazard, x[1])
    dpsi = x * hazard
    if method == "ratio":
        psi = cumulative_integral(lambda y: y * m.hazard(y), x)
    elif method == "log_ratio":
        lam = cumulative_integral(m.log_tail, x)
        psi = lam - x * m.log_tail(x)
        psi[0] = 0.0
        psi = np.maximum.accumulate(psi)
    else:
        raise ValueError(f"unknown method {method!r}")
    g = cumulative_integral(m.hazard, x)
    return EmbeddingMap(x, psi, dpsi, g, hazard, marginal=m,
                        metadata={"construction": "vallois", "method": method})


def build_reversed_psi(m: SymmetricMarginal, n_grid: int = GRID_POINTS,
                       validate: bool = True) -> ReversedEmbedding:
    """Nonincreasing barrier map embedding ``m``.

    psi(x) = int_x^{x_max} y mu(y)/mu([0, y]) dy and
    gamma(psi(x)) = int_x^{x_max} mu(y)/mu([0, y]) dy, so that
    exp(-gamma(psi(x))) = mu([0,x]) / mu([0,x_max]).  This map is a derived
    construction and is flagged as such in ``metadata``.
    """
    if validate:
        _require_valid(m)
    x = m.grid(n_grid)

    def rate(y):
        with np.errstate(divide="ignore", invalid="ignore"):
            return m.density(y) / m.lower_mass(y)

    xs = x[1:]
    r = rate(xs)
    if not np.all(np.isfinite(r)):
        raise GammaDivergence("mu/mu([0,y]) is not finite on the grid")
    y0 = xs[0] * 1e-3
    kappa = float(y0 * rate(np.array([y0]))[0])
    if not math.isfinite(kappa) or kappa <= 0:
        raise GammaDivergence("cannot resolve the small-x behaviour of the reversed map")
    seg_psi = integrate_segments(lambda y: y * rate(y), x[:-1], x[1:])
    psi = np.concatenate((np.cumsum(seg_psi[::-1])[::-1], [0.0]))
    seg_g = integrate_segments(rate, xs[:-1], xs[1:])
    g = np.concatenate(([math.inf], np.cumsum(seg_g[::-1])[::-1], [0.0]))
    dpsi = -np.concatenate(([kappa], xs * r))
    dg = -np.concatenate(([math.inf], r))
    return ReversedEmbedding(x, psi, dpsi, g, dg, kappa, marginal=m,
                             metadata={"construction": "reversed", "derived": True})


def local_time_tail(e, l):
    """P(L_tau > l) = exp(-gamma(l)) under the stopping rule of ``e``."""
    return e.local_time_tail(l)


class GeneralEmbedding:
    """Barrier pair phi_minus < 0 < phi_plus for an asymmetric law.

    The maps are parametrised by x = phi_plus; the state carried along is
    l(x), phi_minus(x), gamma(x), K_plus(x), K_minus(x) and M(x), where
    K_pm = int_0^l e^{gamma}/phi_pm and M = int_0^l e^{gamma}.
    """

    reversed = False

    def __init__(self, x, state, slopes, law, metadata=None):
        self.x = np.asarray(x, dtype=float)
        self.state = np.asarray(state, dtype=float)
        self.law = law
        self.marginal = law
        self.metadata = dict(metadata or {})
        self._curves = [HermiteCurve(self.x, self.state[i], slopes[i], monotone=True)
                        for i in range(self.state.shape[0])]
        self._l, self._phim, self._g, self._kp, self._km, self._m = self._curves

    @property
    def x_max(self) -> float:
        return float(self.x[-1])

    @property
    def x_max_minus(self) -> float:
        return float(-self.state[1, -1])

    @property
    def l_max(self) -> float:
        return float(self.state[0, -1])

    @property
    def symmetric(self) -> bool:
        return False

    def phi_plus(self, l):
        return self._l.inverse(np.asarray(l, dtype=float))

    def phi_minus(self, l):
        return self._phim(self.phi_plus(l))

    def gamma(self, l):
        return self._g(self.phi_plus(l))

    def local_time_tail(self, l):
        return np.exp(-self.gamma(l))

    def psi_plus(self, y):
        return self._l(np.asarray(y, dtype=float))

    def psi_minus(self, y):
        """Local-time level at which the lower barrier reaches y < 0."""
        x = self._phim.inverse(np.asarray(y, dtype=float))
        return self._l(x)

    def k_plus(self, l):
        return self._kp(self.phi_plus(l))

    def k_minus(self, l):
        return self._km(self.phi_plus(l))

    def exp_gamma_integral(self, l):
        return self._m(self.phi_plus(l))

    def tail_plus(self, y):
        return self.law.upper_tail(np.asarray(y, dtype=float))

    def tail_minus(self, y):
        return self.law.lower_tail(-np.asarray(y, dtype=float))

    def __repr__(self) -> str:
        return f"GeneralEmbedding({self.law!r}, x_max={self.x_max:g}, l_max={self.l_max:g})"


def build_phi_general(law, n_grid: int = GRID_POINTS, x0: float = 1e-7,
                      rtol: float = 1e-11) -> GeneralEmbedding:
    """Solve the barrier ODE for a centered law with a positive density.

    ``law`` needs ``density``, ``upper_tail`` and ``lower_tail`` on the real
    line.  The ODE is integrated in s = log(phi_plus) with an explicit
    adaptive Runge-Kutta scheme until the mass outside the bracket drops
    below 1e-10.
    """
    dens = lambda v: float(law.density(np.array([v]))[0])
    mu_p, mu_m = dens(0.0), dens(-0.0 - 1e-300)
    if mu_p <= 0 or mu_m <= 0:
        raise OdeStall("density must be positive at the origin")
    ratio = math.sqrt(mu_p / mu_m)

    def outside(x, pm):
        return float(law.upper_tail(np.array([x]))[0] + law.lower_tail(np.array([pm]))[0])

    def rhs_x(x, y):
        l, pm, g = y[0], y[1], y[2]
        mx = dens(x)
        mm = dens(pm)
        dl = 2.0 * x * mx / outside(x, pm)
        dpm = x * mx / (pm * mm)
        dg = 0.5 * (1.0 / x - 1.0 / pm) * dl
        e = math.exp(g)
        return np.array([dl, dpm, dg, e / x * dl, e / pm * dl, e * dl])

    def rhs(s, y):
        x = math.exp(s)
        return x * rhs_x(x, y)

    def bracket(s, y):
        return outside(math.exp(s), y[1]) - BRACKET_TOL
    bracket.terminal = True
    bracket.direction = -1

    g0 = mu_p * (1.0 + 1.0 / ratio) * x0
    y0 = np.array([mu_p * x0 * x0, -ratio * x0, g0,
                   2.0 * mu_p * x0, -2.0 * mu_p * x0 / ratio, mu_p * x0 * x0])
    s0, s1 = math.log(x0), math.log(1e6)
    sol = solve_ivp(rhs, (s0, s1), y0, method="DOP853", rtol=rtol,
                    atol=1e-14, events=bracket, dense_output=True)
    if sol.status == -1:
        raise OdeStall(f"barrier ODE failed: {sol.message}")
    if sol.status != 1:
        raise OdeStall("bracket mass did not fall below tolerance")
    s_end = float(sol.t_events[0][0])
    xs = np.geomspace(x0, math.exp(s_end), n_grid)
    states = sol.sol(np.log(xs))
    slopes = np.array([rhs_x(x, states[:, i]) for i, x in enumerate(xs)]).T
    zero_state = np.zeros((6, 1))
    zero_slope = np.array([[0.0], [-ratio], [mu_p * (1 + 1 / ratio)], [2 * mu_p],
                           [-2 * mu_p / ratio], [0.0]])
    x = np.concatenate(([0.0], xs))
    return GeneralEmbedding(x, np.hstack((zero_state, states)), np.hstack((zero_slope, slopes)),
                            law, metadata={"construction": "general", "x0": x0})


# --- CSV exchange -------------------------------------------------------------

def write_embedding_csv(e: EmbeddingMap, path, extra_points=None) -> None:
    """Write columns x, psi, gamma_at_psi at 17 significant digits."""
    x = e.x
    if extra_points is not None:
        pts = np.asarray(extra_points, dtype=float)
        pts = pts[(pts >= 0) & (pts <= e.x_max)]
        x = np.unique(np.concatenate((x, pts)))
    psi = e.psi(x)
    g = e.gamma_at_psi(x)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "psi", "gamma_at_psi"])
        for row in zip(x, psi, g):
            w.writerow([f"{v:.17g}" for v in row])


def read_embedding_csv(path) -> EmbeddingMap:
    """Rebuild a map from a CSV written by :func:`write_embedding_csv`."""
    data = np.genfromtxt(Path(path), delimiter=",", names=True)
    x, psi, g = (np.atleast_1d(data[k]) for k in ("x", "psi", "gamma_at_psi"))
    if psi[-1] >= psi[0]:
        dpsi = PchipInterpolator(x, psi).derivative()(x)
        dg = PchipInterpolator(x, g).derivative()(x)
        return EmbeddingMap(x, psi, dpsi, g, dg, metadata={"source": str(path)})
    dpsi = np.empty_like(x)
    dg = np.empty_like(x)
    dpsi[:] = PchipInterpolator(x, psi).derivative()(x)
    dg[1:] = PchipInterpolator(x[1:], g[1:]).derivative()(x[1:])
    dg[0] = -math.inf
    kappa = -dpsi[0]
    return ReversedEmbedding(x, psi, dpsi, g, dg, kappa, metadata={"source": str(path)})

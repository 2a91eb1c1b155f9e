"""Symmetric marginal laws on the real line, stored on the half-line.

A :class:`SymmetricMarginal` exposes the half-line density ``density(x)``
(the full density is its even extension) and the tail
``tail(x) = mu([x, inf))``, so ``tail(0) == 0.5``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import integrate, optimize, special
from scipy.interpolate import PchipInterpolator

from .errors import ConfigError, NonFiniteDensity
from .numerics import (TRUNCATION_TAIL, bisect_monotone, cumulative_integral,
                       integrate_segments, truncation_point)

BUILTINS = ("sym_exp", "gaussian", "bimodal")
_BUILTIN_PARAMS = {"sym_exp": (), "gaussian": ("t",), "bimodal": ()}

QUAD_EPSREL = 1e-8
QUAD_EPSABS = 1e-14


@dataclass(frozen=True)
class DensitySpec:
    """Declarative description of a symmetric marginal."""

    kind: str
    name: str | None = None
    params: Mapping[str, float] = field(default_factory=dict)
    points: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if self.kind == "builtin":
            if self.name not in BUILTINS:
                raise ConfigError(f"unknown builtin marginal {self.name!r}; "
                                  f"expected one of {', '.join(BUILTINS)}")
            allowed = _BUILTIN_PARAMS[self.name]
            for key in self.params:
                if key not in allowed:
                    raise ConfigError(f"unknown parameter {key!r} for builtin {self.name!r}")
            if self.name == "gaussian" and float(self.params.get("t", 1.0)) <= 0:
                raise ConfigError("gaussian variance t must be positive")
        elif self.kind == "tabulated":
            if not self.points or len(self.points) < 2:
                raise ConfigError("tabulated marginal needs at least two points")
            xs = np.array([p[0] for p in self.points], dtype=float)
            if np.any(xs < 0) or np.any(np.diff(xs) <= 0):
                raise ConfigError("tabulated x values must be >= 0 and strictly increasing")
            ds = np.array([p[1] for p in self.points], dtype=float)
            if not np.all(np.isfinite(ds)):
                raise ConfigError("tabulated densities must be finite")
        else:
            raise ConfigError(f"unknown marginal kind {self.kind!r}")

    @classmethod
    def builtin(cls, name: str, **params: float) -> "DensitySpec":
        return cls("builtin", name, dict(params))

    @classmethod
    def tabulated(cls, x: Sequence[float], density: Sequence[float]) -> "DensitySpec":
        return cls("tabulated", points=tuple((float(a), float(b)) for a, b in zip(x, density)))

    @classmethod
    def from_json(cls, doc: Mapping[str, Any] | str) -> "DensitySpec":
        if isinstance(doc, str):
            doc = json.loads(doc)
        unknown = set(doc) - {"kind", "name", "params", "points"}
        if unknown:
            raise ConfigError(f"unknown key(s) in marginal document: {sorted(unknown)}")
        kind = doc.get("kind")
        if kind == "builtin":
            return cls("builtin", doc.get("name"), dict(doc.get("params", {})))
        if kind == "tabulated":
            pts = doc.get("points")
            if pts is None:
                raise ConfigError("tabulated marginal requires 'points'")
            return cls("tabulated", points=tuple((float(a), float(b)) for a, b in pts))
        raise ConfigError(f"unknown marginal kind {kind!r}")

    @classmethod
    def parse(cls, text: str) -> "DensitySpec":
        """Parse ``sym_exp``, ``gaussian:t=0.5``, inline JSON or a JSON file path."""
        text = text.strip()
        if text.startswith("{"):
            return cls.from_json(text)
        if text.endswith(".json"):
            return cls.from_json(Path(text).read_text())
        name, _, rest = text.partition(":")
        params: dict[str, float] = {}
        for item in filter(None, rest.split(",")):
            key, eq, value = item.partition("=")
            if not eq:
                raise ConfigError(f"malformed marginal parameter {item!r}")
            try:
                params[key.strip()] = float(value)
            except ValueError:
                raise ConfigError(f"marginal parameter {key!r} is not a number") from None
        return cls("builtin", name, params)

    def to_json(self) -> dict:
        if self.kind == "builtin":
            doc = {"kind": "builtin", "name": self.name}
            if self.params:
                doc["params"] = dict(self.params)
            return doc
        return {"kind": "tabulated", "points": [list(p) for p in self.points]}

    def label(self) -> str:
        if self.kind == "tabulated":
            return f"tabulated[{len(self.points)}]"
        if self.params:
            args = ",".join(f"{k}={v:g}" for k, v in self.params.items())
            return f"{self.name}:{args}"
        return str(self.name)


class SymmetricMarginal:
    """Centered symmetric law with a positive density, stored on x >= 0."""

    def __init__(self, spec: DensitySpec):
        self.spec = spec

    # --- half-line primitives, overridden by concrete laws -----------------
    def density(self, x):
        raise NotImplementedError

    def tail(self, x):
        raise NotImplementedError

    def lower_mass(self, x):
        """mu([0, x]) for x >= 0."""
        return 0.5 - self.tail(x)

    def log_tail(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.tail(x))

    def hazard(self, x):
        """density / tail on the half-line."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.density(x) / self.tail(x)

    # points where the density is not smooth; grids include them as nodes
    breakpoints: tuple[float, ...] = ()

    @property
    def support_end(self) -> float:
        return math.inf

    # --- full-line helpers --------------------------------------------------
    def full_density(self, x):
        return self.density(np.abs(np.asarray(x, dtype=float)))

    def upper_tail(self, x):
        """mu([x, inf)) for any real x."""
        x = np.asarray(x, dtype=float)
        r = self.tail(np.abs(x))
        return np.where(x >= 0, r, 1.0 - r)

    def lower_tail(self, x):
        """mu((-inf, x]) for any real x."""
        x = np.asarray(x, dtype=float)
        r = self.tail(np.abs(x))
        return np.where(x <= 0, r, 1.0 - r)

    def cdf(self, x):
        return self.lower_tail(x)

    @cached_property
    def x_max(self) -> float:
        """Truncation point: the tail beyond it is below TRUNCATION_TAIL."""
        return truncation_point(self.tail, TRUNCATION_TAIL, support_end=self.support_end)

    def grid(self, n: int = 4096) -> np.ndarray:
        """0, then n log-spaced points up to x_max, plus any breakpoints."""
        x = np.geomspace(1e-6 * self.x_max, self.x_max, n)
        extra = [b for b in self.breakpoints if x[0] < b < x[-1]]
        return np.unique(np.concatenate(([0.0], x, extra)))

    @cached_property
    def abs_moment(self) -> float:
        """E|X| = 2 * int_0^inf x density(x) dx."""
        seg = integrate_segments(lambda y: y * self.density(y),
                                 self.grid()[:-1], self.grid()[1:])
        return float(2.0 * seg.sum())

    def quantile_abs(self, u):
        """Inverse of the law of |X|: returns x with P(|X| <= x) = u."""
        u = np.asarray(u, dtype=float)
        return bisect_monotone(lambda x: 1.0 - 2.0 * self.tail(x), u, 0.0, self.x_max, 64)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        mag = self.quantile_abs(rng.random(n))
        sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        return sign * mag

    def excess_over(self, other: "SymmetricMarginal"):
        """Exact difference functions relative to ``other``, or None."""
        return None

    @classmethod
    def from_spec(cls, spec: DensitySpec | str | Mapping) -> "SymmetricMarginal":
        if isinstance(spec, str):
            spec = DensitySpec.parse(spec)
        elif isinstance(spec, Mapping):
            spec = DensitySpec.from_json(spec)
        if spec.kind == "tabulated":
            return TabulatedMarginal(spec)
        if spec.name == "sym_exp":
            return SymExp(spec)
        if spec.name == "gaussian":
            return Gaussian(spec)
        return Bimodal(spec)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.spec.label()})"


class SymExp(SymmetricMarginal):
    """Laplace law with density e^{-2|x|}."""

    def __init__(self, spec: DensitySpec | None = None):
        super().__init__(spec or DensitySpec.builtin("sym_exp"))

    def density(self, x):
        return np.exp(-2.0 * np.asarray(x, dtype=float))

    def tail(self, x):
        return 0.5 * np.exp(-2.0 * np.asarray(x, dtype=float))

    def lower_mass(self, x):
        return -0.5 * np.expm1(-2.0 * np.asarray(x, dtype=float))

    def log_tail(self, x):
        return -2.0 * np.asarray(x, dtype=float) - math.log(2.0)

    def hazard(self, x):
        return np.full_like(np.asarray(x, dtype=float), 2.0)


class Gaussian(SymmetricMarginal):
    """Centered normal law with variance t."""

    def __init__(self, spec: DensitySpec | None = None):
        super().__init__(spec or DensitySpec.builtin("gaussian", t=1.0))
        self.t = float(self.spec.params.get("t", 1.0))
        self.sd = math.sqrt(self.t)

    def density(self, x):
        z = np.asarray(x, dtype=float) / self.sd
        return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi * self.t)

    def tail(self, x):
        return special.ndtr(-np.asarray(x, dtype=float) / self.sd)

    def lower_mass(self, x):
        return 0.5 * special.erf(np.asarray(x, dtype=float) / (self.sd * math.sqrt(2.0)))

    def log_tail(self, x):
        return special.log_ndtr(-np.asarray(x, dtype=float) / self.sd)

    def hazard(self, x):
        z = np.asarray(x, dtype=float) / self.sd
        log_pdf = -0.5 * z * z - 0.5 * math.log(2.0 * math.pi * self.t)
        return np.exp(log_pdf - special.log_ndtr(-z))


# Constants of the bimodal law at the junction x = 1.
_BIMODAL_DMU1 = 2.5 * math.exp(-1.25) - math.exp(-2.0)
_BIMODAL_DR1 = 0.5 * (math.exp(-1.25) - math.exp(-2.0))


def solve_alpha(tol: float = 1e-10) -> float:
    """Exponent of the bimodal law's excess tail.

    Root of a -> dmu(1) - a * dR(1) on [2, 50], where the tail excess dR(1)
    is obtained by quadrature from mass conservation.
    """
    inner, _ = integrate.quad(lambda x: 2.5 * x**3 * math.exp(-1.25 * x**4), 0.0, 1.0,
                              epsabs=1e-15, epsrel=1e-13)
    outer, _ = integrate.quad(lambda x: math.exp(-2.0 * x), 1.0, math.inf,
                              epsabs=1e-15, epsrel=1e-13)
    d_tail = (0.5 - inner) - outer
    return float(optimize.brentq(lambda a: _BIMODAL_DMU1 - a * d_tail, 2.0, 50.0,
                                 xtol=tol * 1e-2, rtol=4 * np.finfo(float).eps))


class Bimodal(SymmetricMarginal):
    """Law whose density vanishes at zero and matches e^{-2x} plus a fast excess tail.

    On [0, 1] the density is 2.5 x^3 exp(-5x^4/4); beyond 1 it is
    e^{-2x} + dmu(1) x^{a-2} exp(-a (x^{a-1} - 1)/(a-1)).
    """

    breakpoints = (1.0,)

    def __init__(self, spec: DensitySpec | None = None):
        super().__init__(spec or DensitySpec.builtin("bimodal"))
        self.alpha = solve_alpha()

    def _excess_log(self, x):
        a = self.alpha
        return -a * (np.power(x, a - 1.0) - 1.0) / (a - 1.0)

    def density(self, x):
        x = np.asarray(x, dtype=float)
        inner = 2.5 * x**3 * np.exp(-1.25 * x**4)
        xo = np.maximum(x, 1.0)
        outer = np.exp(-2.0 * xo) + _BIMODAL_DMU1 * xo ** (self.alpha - 2.0) * np.exp(self._excess_log(xo))
        return np.where(x <= 1.0, inner, outer)

    def tail(self, x):
        x = np.asarray(x, dtype=float)
        inner = 0.5 * np.exp(-1.25 * x**4)
        xo = np.maximum(x, 1.0)
        outer = 0.5 * np.exp(-2.0 * xo) + _BIMODAL_DR1 * np.exp(self._excess_log(xo))
        return np.where(x <= 1.0, inner, outer)

    def log_tail(self, x):
        x = np.asarray(x, dtype=float)
        xo = np.maximum(x, 1.0)
        outer = np.logaddexp(-2.0 * xo - math.log(2.0), math.log(_BIMODAL_DR1) + self._excess_log(xo))
        return np.where(x <= 1.0, -1.25 * x**4 - math.log(2.0), outer)

    def lower_mass(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= 1.0, -0.5 * np.expm1(-1.25 * x**4), 0.5 - self.tail(x))

    def hazard(self, x):
        x = np.asarray(x, dtype=float)
        xo = np.maximum(x, 1.0)
        return np.where(x <= 1.0, 5.0 * x**3, self.density(xo) * np.exp(-self.log_tail(xo)))

    def excess_over(self, other):
        if isinstance(other, SymExp):
            return _BimodalExcess(self)
        return None


class _BimodalExcess:
    """Closed-form (bimodal - sym_exp) difference, free of cancellation."""

    def __init__(self, m: Bimodal):
        self.m = m

    def density(self, x):
        x = np.asarray(x, dtype=float)
        xo = np.maximum(x, 1.0)
        inner = 2.5 * x**3 * np.exp(-1.25 * x**4) - np.exp(-2.0 * x)
        outer = _BIMODAL_DMU1 * xo ** (self.m.alpha - 2.0) * np.exp(self.m._excess_log(xo))
        return np.where(x <= 1.0, inner, outer)

    def tail(self, x):
        x = np.asarray(x, dtype=float)
        xo = np.maximum(x, 1.0)
        inner = 0.5 * (np.exp(-1.25 * x**4) - np.exp(-2.0 * x))
        outer = _BIMODAL_DR1 * np.exp(self.m._excess_log(xo))
        return np.where(x <= 1.0, inner, outer)

    def log_tail(self, x):
        x = np.asarray(x, dtype=float)
        xo = np.maximum(x, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = np.log(0.5 * (np.exp(-1.25 * x**4) - np.exp(-2.0 * x)))
        return np.where(x <= 1.0, inner, math.log(_BIMODAL_DR1) + self.m._excess_log(xo))

    def hazard(self, x):
        x = np.asarray(x, dtype=float)
        xo = np.maximum(x, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = self.density(x) / self.tail(x)
        return np.where(x <= 1.0, inner, self.m.alpha * xo ** (self.m.alpha - 2.0))


class TabulatedMarginal(SymmetricMarginal):
    """Density given at points; monotone cubic interpolation in log-density."""

    def __init__(self, spec: DensitySpec):
        super().__init__(spec)
        xs = np.array([p[0] for p in spec.points], dtype=float)
        ds = np.array([p[1] for p in spec.points], dtype=float)
        if xs[0] > 0:
            # flat extension down to the origin
            xs = np.concatenate(([0.0], xs))
            ds = np.concatenate(([ds[0]], ds))
        self.nodes, self.values = xs, ds
        self._log = bool(np.all(ds > 0))
        self._interp = PchipInterpolator(xs, np.log(ds) if self._log else ds, extrapolate=False)
        seg = integrate_segments(self._eval, xs[:-1], xs[1:], order=10)
        self._node_tail = np.concatenate((np.cumsum(seg[::-1])[::-1], [0.0]))

    @property
    def support_end(self) -> float:
        return float(self.nodes[-1])

    def _eval(self, x):
        v = self._interp(x)
        v = np.exp(v) if self._log else v
        return np.nan_to_num(v, nan=0.0)

    def density(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > self.nodes[-1], 0.0, self._eval(np.minimum(x, self.nodes[-1])))

    def tail(self, x):
        x = np.clip(np.asarray(x, dtype=float), 0.0, self.nodes[-1])
        j = np.clip(np.searchsorted(self.nodes, x, side="right") - 1, 0, self.nodes.size - 2)
        part = integrate_segments(self._eval, x, self.nodes[j + 1], order=10)
        return part + self._node_tail[j + 1]


def tail_mass(m: SymmetricMarginal, x: float) -> float:
    """mu([x, inf)) by adaptive quadrature of the density."""
    if x < 0:
        raise ValueError("tail_mass requires x >= 0")

    def f(y):
        v = float(m.density(np.array([y]))[0])
        if not math.isfinite(v):
            raise NonFiniteDensity(f"density is {v} at x={y:.6g}")
        return v

    end = m.support_end
    if x >= end:
        return 0.0
    # split at kinks and at the truncation point so quad sees each smooth piece
    return _quad_pieces(f, m, x, end)


def lower_tail_mass(m: SymmetricMarginal, x: float) -> float:
    """mu([0, x]) by adaptive quadrature of the density."""
    return _quad_pieces(lambda y: float(m.density(np.array([y]))[0]), m, 0.0, x)


def _quad_pieces(f, m: SymmetricMarginal, a: float, b: float) -> float:
    cuts = [c for c in (*m.breakpoints, m.x_max) if a < c < b]
    edges = [a, *sorted(cuts), b]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(f, lo, hi, epsrel=QUAD_EPSREL, epsabs=QUAD_EPSABS, limit=500)
        total += val
    return float(total)


@dataclass(frozen=True)
class Check:
    passed: bool
    value: float
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: dict[str, Check]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failures(self) -> list[str]:
        return [k for k, c in self.checks.items() if not c.passed]


def validate_marginal(m: SymmetricMarginal, mass_tol: float = 1e-6) -> ValidationReport:
    """Unit mass, positivity on the support and finite first absolute moment."""
    checks: dict[str, Check] = {}
    try:
        grid = m.grid()
        dens = m.density(grid)
        if not np.all(np.isfinite(dens)):
            raise NonFiniteDensity("density is not finite on the grid")
        mass = 2.0 * integrate_segments(m.density, grid[:-1], grid[1:]).sum()
        checks["unit_mass"] = Check(bool(abs(mass - 1.0) <= mass_tol), float(mass),
                                    "2 * int_0^x_max density")
        # the origin is a single point; a zero there keeps the law equivalent
        # to Lebesgue measure
        inside = (grid > 0) & (grid < m.support_end)
        neg = float(np.min(dens[inside]))
        if isinstance(m, TabulatedMarginal):
            neg = min(neg, float(np.min(m.values)))
        checks["positivity"] = Check(neg > 0.0, neg, "minimum density on the support")
        moment = m.abs_moment
        checks["finite_abs_moment"] = Check(bool(np.isfinite(moment)), float(moment), "E|X|")
    except Exception as exc:  # report, never raise
        for name in ("unit_mass", "positivity", "finite_abs_moment"):
            checks.setdefault(name, Check(False, math.nan, f"{type(exc).__name__}: {exc}"))
    return ValidationReport(checks)


class DeltaMu:
    """Signed difference mu2 - mu1 of two symmetric marginals."""

    def __init__(self, mu1: SymmetricMarginal, mu2: SymmetricMarginal):
        self.mu1, self.mu2 = mu1, mu2
        self._exact = mu2.excess_over(mu1)

    @property
    def exact(self) -> bool:
        return self._exact is not None

    def delta_density(self, x):
        if self._exact is not None:
            return self._exact.density(x)
        return self.mu2.density(x) - self.mu1.density(x)

    def delta_tail(self, x):
        if self._exact is not None:
            return self._exact.tail(x)
        return self.mu2.tail(x) - self.mu1.tail(x)

    def delta_log_tail(self, x):
        if self._exact is not None:
            return self._exact.log_tail(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(self.delta_tail(x))

    def delta_hazard(self, x):
        if self._exact is not None:
            return self._exact.hazard(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.delta_density(x) / self.delta_tail(x)

    @property
    def x_max(self) -> float:
        return max(self.mu1.x_max, self.mu2.x_max)


@dataclass(frozen=True)
class ConvexOrderReport:
    strikes: np.ndarray
    differences: np.ndarray
    min_difference: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.min_difference >= -self.tolerance


def convex_order_check(pair: DeltaMu, strikes: Sequence[float],
                       tolerance: float = 1e-9) -> ConvexOrderReport:
    """Call-price differences int (x-K)^+ d(mu2 - mu1) on a strike grid."""
    strikes = np.asarray(strikes, dtype=float)
    if strikes.size == 0:
        raise ValueError("strike grid must be nonempty")
    # For a centered symmetric pair the difference at K equals the integral of
    # the tail difference over [|K|, inf).
    x_hi = pair.x_max
    grid = np.concatenate(([0.0], np.geomspace(1e-6 * x_hi, x_hi, 4096)))
    cum = cumulative_integral(pair.delta_tail, grid)
    total = cum[-1]
    k = np.abs(strikes)
    j = np.clip(np.searchsorted(grid, k, side="right") - 1, 0, grid.size - 2)
    part = integrate_segments(pair.delta_tail, grid[j], np.minimum(k, x_hi))
    diffs = np.where(k >= x_hi, 0.0, total - cum[j] - part)
    return ConvexOrderReport(strikes, diffs, float(diffs.min()), tolerance)


# --- asymmetric laws for the general embedding ------------------------------

class TwoSidedExponential:
    """Centered law with density p a e^{-a x} on x > 0 and (1-p) b e^{b x} on x < 0."""

    def __init__(self, a: float, b: float):
        if a <= 0 or b <= 0:
            raise ConfigError("rates must be positive")
        self.a, self.b = float(a), float(b)
        self.p = self.a / (self.a + self.b)

    def density(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, self.p * self.a * np.exp(-self.a * np.abs(x)),
                        (1 - self.p) * self.b * np.exp(-self.b * np.abs(x)))

    def upper_tail(self, x):
        x = np.asarray(x, dtype=float)
        right = self.p * np.exp(-self.a * np.maximum(x, 0.0))
        left = 1.0 - (1 - self.p) * np.exp(-self.b * np.maximum(-x, 0.0))
        return np.where(x >= 0, right, left)

    def lower_tail(self, x):
        x = np.asarray(x, dtype=float)
        left = (1 - self.p) * np.exp(-self.b * np.maximum(-x, 0.0))
        right = 1.0 - self.p * np.exp(-self.a * np.maximum(x, 0.0))
        return np.where(x <= 0, left, right)

    def cdf(self, x):
        return self.lower_tail(x)

    def __repr__(self) -> str:
        return f"TwoSidedExponential(a={self.a:g}, b={self.b:g})"


class RealLine:
    """Full-line view of a symmetric marginal, for the general embedding."""

    def __init__(self, m: SymmetricMarginal):
        self.m = m

    def density(self, x):
        return self.m.full_density(x)

    def upper_tail(self, x):
        return self.m.upper_tail(x)

    def lower_tail(self, x):
        return self.m.lower_tail(x)

    def cdf(self, x):
        return self.m.cdf(x)

"""Semi-static super- and sub-hedges of convex local-time payoffs.

A payoff F(L) is hedged by a static claim H(X) plus a dynamic position
Delta(X, L) in the underlying.  For piecewise-linear convex F every integral
in the hedge ratios reduces to a finite sum over the kinks of F.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainExceeded
from .numerics import HermiteCurve, integrate_segments


@dataclass(frozen=True)
class ConvexPayoff:
    """F(l) = f0 + slope0 * l + sum_i w_i (l - k_i)^+ with w_i > 0."""

    f0: float = 0.0
    slope0: float = 0.0
    atoms: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        atoms = tuple((float(k), float(w)) for k, w in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        ks = [k for k, _ in atoms]
        if any(w <= 0 for _, w in atoms):
            raise ConfigError("payoff atom weights must be positive")
        if any(k <= 0 for k in ks):
            raise ConfigError("payoff kinks must be positive (fold a kink at 0 into slope0)")
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise ConfigError("payoff kinks must be strictly increasing")
        if not all(math.isfinite(v) for v in (self.f0, self.slope0, *ks)):
            raise ConfigError("payoff parameters must be finite")

    @property
    def kinks(self) -> np.ndarray:
        return np.array([k for k, _ in self.atoms], dtype=float)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.atoms], dtype=float)

    @property
    def slope_inf(self) -> float:
        return self.slope0 + float(self.weights.sum())

    @property
    def lipschitz(self) -> float:
        return max(abs(self.slope0), abs(self.slope_inf))

    def __call__(self, l):
        l = np.asarray(l, dtype=float)
        out = self.f0 + self.slope0 * l
        for k, w in self.atoms:
            out = out + w * np.maximum(l - k, 0.0)
        return out

    def derivative(self, l):
        """Right derivative F'(l)."""
        l = np.asarray(l, dtype=float)
        out = np.full_like(l, self.slope0)
        for k, w in self.atoms:
            out = out + w * (l >= k)
        return out

    @classmethod
    def linear(cls) -> "ConvexPayoff":
        return cls(0.0, 1.0)

    @classmethod
    def call(cls, strike: float) -> "ConvexPayoff":
        return cls(0.0, 0.0, ((strike, 1.0),))

    @classmethod
    def parse(cls, text: str) -> "ConvexPayoff":
        """Parse ``linear``, ``constant:c=<c>``, ``call_on_L:K=<k>`` or ``pwl:[(k,w),...]``.

        ``pwl`` accepts optional ``;f0=<v>`` and ``;slope0=<v>`` suffixes.
        """
        text = text.strip()
        head, _, rest = text.partition(":")
        try:
            if head == "linear" and not rest:
                return cls.linear()
            if head == "constant":
                key, _, val = rest.partition("=")
                if key.strip() != "c":
                    raise ConfigError(f"constant payoff expects c=<value>, got {rest!r}")
                return cls(float(val), 0.0)
            if head == "call_on_L":
                key, _, val = rest.partition("=")
                if key.strip() != "K":
                    raise ConfigError(f"call_on_L expects K=<strike>, got {rest!r}")
                return cls.call(float(val))
            if head == "pwl":
                parts = rest.split(";")
                atoms = ast.literal_eval(parts[0].strip())
                extra: dict[str, float] = {}
                for item in parts[1:]:
                    key, _, val = item.partition("=")
                    key = key.strip()
                    if key not in ("f0", "slope0"):
                        raise ConfigError(f"unknown pwl option {key!r}")
                    extra[key] = float(val)
                atoms = sorted((float(k), float(w)) for k, w in atoms)
                return cls(extra.get("f0", 0.0), extra.get("slope0", 0.0), tuple(atoms))
        except (ValueError, SyntaxError, TypeError) as exc:
            raise ConfigError(f"cannot parse payoff {text!r}: {exc}") from None
        raise ConfigError(f"unknown payoff {text!r}; expected linear, constant:c=, "
                          "call_on_L:K= or pwl:[(k,w),...]")

    def to_json(self) -> dict:
        return {"f0": self.f0, "slope0": self.slope0, "atoms": [list(a) for a in self.atoms]}


@dataclass(frozen=True, eq=False)
class HedgePlan:
    """Hedge ratios A+, A-, static claim H and its price for one side."""

    side: str
    payoff: ConvexPayoff
    embedding: object
    h0: float
    price: float
    _h_plus: HermiteCurve = field(repr=False)
    _h_minus: HermiteCurve = field(repr=False)

    def A_plus(self, l):
        return _a_plus(self.side, self.payoff, self.embedding, l)

    def A_minus(self, l):
        return _a_minus(self.side, self.payoff, self.embedding, l)

    def H(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, self._h_plus(np.abs(x)), self._h_minus(np.abs(x)))

    def H_prime(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, self._h_plus.derivative(np.abs(x)),
                        -self._h_minus.derivative(np.abs(x)))

    def delta(self, x, l):
        return eval_delta(self, x, l)

    def u(self, x, l):
        return eval_u(self, x, l)

    def sup_norms(self) -> tuple[float, float]:
        """(sup |A+-|, sup |H'|) on the embedding's local-time range."""
        e = self.embedding
        l = np.concatenate(([0.0], np.geomspace(1e-8, e.l_max, 2048), self.payoff.kinks))
        l = l[l <= e.l_max]
        a = max(np.max(np.abs(self.A_plus(l))), np.max(np.abs(self.A_minus(l))))
        hp = max(np.max(np.abs(self._h_plus.derivative(self._h_plus.x))),
                 np.max(np.abs(self._h_minus.derivative(self._h_minus.x))))
        return float(a), float(hp)


def _kink_terms(F: ConvexPayoff, e):
    ks, ws = F.kinks, F.weights
    gk = e.gamma(ks) if ks.size else ks
    return ks, ws, gk


def _a_plus(side, F, e, l):
    l = np.asarray(l, dtype=float)
    ks, ws, gk = _kink_terms(F, e)
    if not ks.size:
        return np.full_like(l, F.slope0 if side == "super" else F.slope_inf)
    lk = l[..., None]
    if side == "super":
        z = np.minimum(lk, ks)
        if e.symmetric:
            terms = np.exp(e.gamma(z) - gk)
        else:
            terms = np.exp(-gk) * (1.0 + e.k_plus(z))
        return F.slope0 + (ws * terms).sum(axis=-1)
    # sub side, symmetric reversed map: the kinks above l are discounted
    gl = e.gamma(l)[..., None]
    with np.errstate(invalid="ignore"):
        decay = np.where(np.isinf(gk), 0.0, np.exp(np.minimum(gl - gk, 0.0)))
    terms = np.where(ks > lk, 1.0 - decay, 0.0)
    return F.slope_inf - (ws * terms).sum(axis=-1)


def _a_minus(side, F, e, l):
    if e.symmetric:
        return -_a_plus(side, F, e, l)
    l = np.asarray(l, dtype=float)
    ks, ws, gk = _kink_terms(F, e)
    if not ks.size:
        return np.full_like(l, -F.slope0)
    z = np.minimum(l[..., None], ks)
    terms = np.exp(-gk) * (e.k_minus(z) - 1.0)
    return -F.slope0 + (ws * terms).sum(axis=-1)


def _grids(e):
    """Magnitude grids on the positive and negative half-lines."""
    if e.symmetric:
        return e.x, e.x
    return e.x, -e.state[1]


def _h_curve(h0, slope_fn, grid, kinks_x):
    nodes = np.unique(np.concatenate((grid, kinks_x[(kinks_x > 0) & (kinks_x < grid[-1])])))
    seg = integrate_segments(slope_fn, nodes[:-1], nodes[1:])
    values = h0 + np.concatenate(([0.0], np.cumsum(seg)))
    return HermiteCurve(nodes, values, slope_fn(nodes))


def _assemble(side, F, e, h0):
    gp, gm = _grids(e)
    ks = F.kinks
    ks_in = ks[ks < e.l_max]
    slope_p = lambda y: _a_plus(side, F, e, e.psi_plus(y))
    # on the negative side H(-y) = h0 - int_0^y A_-(psi_-(-s)) ds
    slope_m = lambda y: -_a_minus(side, F, e, e.psi_minus(-y))
    hp = _h_curve(h0, slope_p, gp, e.phi_plus(ks_in))
    hm = _h_curve(h0, slope_m, gm, np.abs(e.phi_minus(ks_in)))
    # mu(H) = H(0) + int_0^inf H'(y) mu([y,inf)) dy - int_0^inf H'(-y) mu((-inf,-y]) dy
    up = integrate_segments(lambda y: slope_p(y) * e.tail_plus(y), hp.x[:-1], hp.x[1:]).sum()
    dn = integrate_segments(lambda y: slope_m(y) * e.tail_minus(y), hm.x[:-1], hm.x[1:]).sum()
    price = h0 + up + dn
    return HedgePlan(side, F, e, float(h0), float(price), hp, hm)


def build_super_hedge(F: ConvexPayoff, e) -> HedgePlan:
    """Super-hedge of F(L) built on a nondecreasing barrier map."""
    if getattr(e, "reversed", False):
        raise ConfigError("the super-hedge needs a nondecreasing (non-reversed) map")
    if F.kinks.size and F.kinks[-1] > e.l_max:
        raise DomainExceeded(f"payoff kink {F.kinks[-1]:g} exceeds l_max={e.l_max:g}")
    return _assemble("super", F, e, F.f0)


def build_sub_hedge(F: ConvexPayoff, r) -> HedgePlan:
    """Sub-hedge of F(L) built on a nonincreasing (reversed) barrier map.

    Kinks at or beyond the map's l_max are admissible: the stopped local
    time never reaches them, and their weight enters A+- as a constant.
    """
    if not getattr(r, "reversed", False):
        raise ConfigError("the sub-hedge needs a reversed barrier map")
    ks, ws = F.kinks, F.weights
    inside = ks < r.l_max
    # H(0) = F(0) - sum_i w_i e^{-gamma(k_i)} int_0^{k_i} e^{gamma}
    h0 = F.f0 - float(np.sum(ws[inside] * np.exp(-r.gamma(ks[inside]))
                             * r.exp_gamma_integral(ks[inside])))
    return _assemble("sub", F, r, h0)


def eval_delta(p: HedgePlan, x, l):
    """Shares held at spot x with running local time l.

    Delta is the spatial derivative of the value function u, which gives
    -A+(l) for x > 0 and -A-(l) for x <= 0.
    """
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, -p.A_plus(l), -p.A_minus(l))


def eval_u(p: HedgePlan, x, l):
    """u(x,l) = -A+ x^+ + A- x^- + A+ phi+ - H(phi+) + F(l)."""
    x = np.asarray(x, dtype=float)
    l = np.asarray(l, dtype=float)
    e = p.embedding
    ap, am = p.A_plus(l), p.A_minus(l)
    ph = e.phi_plus(l)
    return (-ap * np.maximum(x, 0.0) + am * np.maximum(-x, 0.0)
            + ap * ph - p.H(ph) + p.payoff(l))


@dataclass(frozen=True)
class RelationsReport:
    ratio_residual: float
    barrier_residual: float
    level_residual: float
    n_points: int

    @property
    def max_residual(self) -> float:
        return max(self.ratio_residual, self.barrier_residual, self.level_residual)


def check_relations(p: HedgePlan, n: int = 512) -> RelationsReport:
    """Residuals of the identities linking A+-, H and the barriers.

    * ratio: (A+ - A-)/2 = F'(l) + e^{gamma(l)} sum_{k_i > l} w_i e^{-gamma(k_i)}
    * barrier: H(phi+) - A+ phi+ = H(phi-) - A- phi-
    * level: H(phi+) - A+ phi+ = F(0) - sum_i w_i e^{-gamma(k_i)} int_0^{l ^ k_i} e^{gamma}
    """
    e, F = p.embedding, p.payoff
    lo = e.psi_plus(np.array([e.x[1] * 10.0]))[0]
    hi = e.l_max * (1 - 1e-3)
    if e.reversed:
        lo, hi = e.psi_plus(np.array([e.x_max * 0.999]))[0], e.psi_plus(np.array([e.x[1] * 10.0]))[0]
    l = np.geomspace(lo, hi, n)
    ks, ws = F.kinks, F.weights
    g = e.gamma(l)
    gk = e.gamma(ks)
    with np.errstate(over="ignore", invalid="ignore"):
        disc = np.where(ks > l[:, None], np.exp(g[:, None] - gk), 0.0)
    rhs1 = F.derivative(l) + (ws * np.nan_to_num(disc)).sum(axis=1)
    ap, am = p.A_plus(l), p.A_minus(l)
    r1 = np.max(np.abs(0.5 * (ap - am) - rhs1))
    php, phm = e.phi_plus(l), e.phi_minus(l)
    left = p.H(php) - ap * php
    r2 = np.max(np.abs(left - (p.H(phm) - am * phm)))
    inside = np.isfinite(gk)
    z = np.minimum(l[:, None], ks[inside])
    mz = e.exp_gamma_integral(z)
    rhs3 = F.f0 - (ws[inside] * np.exp(-gk[inside]) * mz).sum(axis=1)
    r3 = np.max(np.abs(left - rhs3))
    return RelationsReport(float(r1), float(r2), float(r3), n)


def analytic_price(F: ConvexPayoff, e) -> float:
    """E[F(L_tau)] = F(0) + int_0^inf F'(l) exp(-gamma(l)) dl under the map's rule.

    Integrated in the local-time variable using only the map's local-time
    tail, so it is independent of the x-space quadrature behind
    ``HedgePlan.price``.
    """
    l_top = e.l_max
    ks = F.kinks
    knots = e.psi_plus(e.x[::16])
    knots = np.unique(np.concatenate(([0.0, l_top], knots, ks[ks < l_top])))
    knots = knots[(knots >= 0) & (knots <= l_top)]
    seg = integrate_segments(e.local_time_tail, knots[:-1], knots[1:], order=16)
    # T(k) = int_k^{l_top} e^{-gamma}
    tail_from = np.concatenate((np.cumsum(seg[::-1])[::-1], [0.0]))
    idx = np.searchsorted(knots, ks[ks < l_top])
    total = F.f0 + F.slope0 * tail_from[0]
    total += float(np.sum(F.weights[ks < l_top] * tail_from[idx]))
    return float(total)

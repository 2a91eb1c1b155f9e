"""Second barrier for embedding a pair of marginals in sequence.

The first stop uses the map of ``mu1``.  The second barrier alternates
between two regimes: it follows the map of ``mu2`` while it stays below
``psi1`` and switches to the map of the excess ``mu2 - mu1`` while it stays
above.  Breakpoints are the crossings of the two curves.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .embedding import EmbeddingMap, build_psi
from .errors import (AssumptionViolation, DegenerateBreakpoint, DeltaTailVanishes,
                     NonIncreasingPsi2)
from .marginal import (Check, ConvexOrderReport, DeltaMu, convex_order_check)
from .numerics import TRUNCATION_TAIL, integrate_segments

SCAN_POINTS = 8192
BISECT_XTOL = 1e-9
TANGENCY_GAP = 1e-6
MAX_BREAKPOINTS = 64
PROBE_FRACTION = 0.01
CERTIFY_MARGIN = 1e-6


class Regime(str, enum.Enum):
    MU2 = "mu2"
    DELTA = "delta"


@dataclass(eq=False)
class TwoMarginalEmbedding:
    """psi1, the piecewise psi2 and its breakpoints.

    ``breakpoints`` holds the finite crossings x_1 < x_2 < ...; the regime on
    [x_j, x_{j+1}] is ``regimes[j]`` with x_0 = 0 and a last piece running to
    the end of the grid.  ``psi1`` is None for the degenerate case where the
    first stop is immediate.
    """

    pair: DeltaMu
    psi1: EmbeddingMap | None
    psi2: EmbeddingMap
    breakpoints: tuple[float, ...]
    regimes: tuple[Regime, ...]
    certified_margin: float = math.nan
    metadata: dict = field(default_factory=dict)

    @property
    def levels(self) -> np.ndarray:
        """l_j = psi1(x_j) = psi2(x_j) at the finite breakpoints."""
        return self.psi2.psi(np.asarray(self.breakpoints, dtype=float))

    @property
    def l_max(self) -> float:
        return self.psi2.l_max

    def regime(self, x):
        x = np.abs(np.asarray(x, dtype=float))
        j = np.searchsorted(np.asarray(self.breakpoints, dtype=float), x, side="left")
        codes = np.array([r.value for r in self.regimes])
        return codes[j]

    def phi2(self, l):
        return self.psi2.phi(l)

    def gamma2(self, l):
        return self.psi2.gamma(l)

    # barrier interface used by the simulator
    def phi_plus(self, l):
        return self.psi2.phi_plus(l)

    def phi_minus(self, l):
        return self.psi2.phi_minus(l)

    def __repr__(self) -> str:
        bps = ", ".join(f"{b:.10g}" for b in self.breakpoints) or "none"
        return f"TwoMarginalEmbedding(breakpoints=[{bps}], regimes={[r.value for r in self.regimes]})"


def _probe_points(pair: DeltaMu) -> np.ndarray:
    hi = PROBE_FRACTION * pair.x_max
    return np.geomspace(1e-6 * pair.x_max, hi, 257)


def _check_near_zero(pair: DeltaMu) -> Check:
    d = pair.delta_density(_probe_points(pair))
    scale = float(np.max(np.abs(pair.mu1.density(_probe_points(pair))))) or 1.0
    worst = float(np.max(d))
    nonzero = bool(np.min(d) < -1e-12 * scale)
    ok = worst <= 1e-14 * scale and nonzero
    if ok:
        detail = "delta mu <= 0 and not identically 0 near zero"
    elif not nonzero and worst <= 1e-14 * scale:
        detail = "delta mu vanishes identically near zero"
    else:
        detail = "delta mu > 0 near zero"
    return Check(ok, worst, detail)


def _scan_grid(pair: DeltaMu, n: int) -> np.ndarray:
    x_hi = pair.mu2.x_max
    pts = [np.array([0.0]), np.geomspace(1e-6 * x_hi, x_hi, n)]
    for m in (pair.mu1, pair.mu2):
        bp = np.asarray(getattr(m, "breakpoints", ()), dtype=float)
        pts.append(bp[(bp > 0) & (bp < x_hi)])
    return np.unique(np.concatenate(pts))


class _Piece:
    """Values of psi2 and gamma2 on one regime, before assembly."""

    def __init__(self, regime, x, psi, g, rate):
        self.regime, self.x, self.psi, self.g, self.rate = regime, x, psi, g, rate


def _rate(pair: DeltaMu, regime: Regime):
    if regime is Regime.MU2:
        return pair.mu2.hazard
    return pair.delta_hazard


def _delta_guard(pair: DeltaMu, nodes: np.ndarray) -> int:
    """Index past the last usable node of a delta regime; raises on violations."""
    rate = pair.delta_hazard(nodes)
    log_tail = pair.delta_log_tail(nodes)
    bulk = pair.mu2.tail(nodes) >= TRUNCATION_TAIL
    bad_tail = ~np.isfinite(log_tail) | ~np.isfinite(rate)
    # the hazard has the sign of delta mu and survives underflow of the density
    bad_sign = np.isfinite(rate) & (rate <= 0)
    fatal = (bad_tail | bad_sign) & bulk
    if np.any(fatal):
        i = int(np.argmax(fatal))
        if bad_tail[i]:
            raise DeltaTailVanishes(f"tail of delta mu is not positive at x={nodes[i]:.6g}")
        raise NonIncreasingPsi2(f"delta mu <= 0 at x={nodes[i]:.6g} inside a delta regime")
    # past the bulk of mu2 the excess may be unresolvable; stop the grid there
    bad = bad_tail | bad_sign
    return int(np.argmax(bad)) if np.any(bad) else nodes.size


def build_psi2(pair: DeltaMu, psi1: EmbeddingMap | None = None,
               n_scan: int = SCAN_POINTS) -> TwoMarginalEmbedding:
    """Alternate the mu2 and delta-mu regimes, switching where psi2 meets psi1."""
    near_zero = _check_near_zero(pair)
    if not near_zero.passed:
        raise AssumptionViolation(f"construction needs delta mu <= 0, not identically 0, "
                                  f"near zero: {near_zero.detail}")
    if psi1 is None:
        psi1 = build_psi(pair.mu1)
    grid = _scan_grid(pair, n_scan)

    pieces: list[_Piece] = []
    breakpoints: list[float] = []
    start, level, g_start = 0.0, 0.0, 0.0
    regime = Regime.MU2
    margin = math.nan
    while True:
        rate = _rate(pair, regime)
        nodes = np.concatenate(([start], grid[grid > start * (1 + 1e-15)]))
        if regime is Regime.DELTA:
            nodes = nodes[:max(_delta_guard(pair, nodes), 2)]
        seg = integrate_segments(lambda y: y * rate(y), nodes[:-1], nodes[1:])
        cand = level + np.concatenate(([0.0], np.cumsum(seg)))
        gap = cand - psi1.psi(nodes)
        sign = 1.0 if regime is Regime.MU2 else -1.0
        tol = 1e-12 * np.maximum(np.abs(cand), 1e-300)
        crossed = np.nonzero(sign * gap[1:] > tol[1:])[0]
        if crossed.size == 0:
            g_seg = integrate_segments(rate, nodes[:-1], nodes[1:])
            g = g_start + np.concatenate(([0.0], np.cumsum(g_seg)))
            pieces.append(_Piece(regime, nodes, cand, g, rate(nodes)))
            margin = float(-sign * gap[-1] / max(abs(psi1.psi(nodes[-1:])[0]), 1e-300))
            break
        j = crossed[0] + 1
        left = nodes[j - 1]

        def f(x, j=j, left=left):
            extra = integrate_segments(lambda y: y * rate(y), np.array([left]), np.array([x]))[0]
            return sign * (cand[j - 1] + extra - float(psi1.psi(np.array([x]))[0]))

        if f(left) > 0:
            x_b = left
        else:
            x_b = optimize.bisect(f, left, nodes[j], xtol=BISECT_XTOL)
        # snap to a grid node closer than the root tolerance
        near = grid[np.argmin(np.abs(grid - x_b))]
        if abs(near - x_b) <= BISECT_XTOL:
            x_b = float(near)
        if x_b - start < TANGENCY_GAP:
            raise DegenerateBreakpoint(
                f"crossing at x={x_b:.12g} is within {TANGENCY_GAP:g} of the previous "
                f"breakpoint {start:.12g}; treated as a tangency")
        keep = nodes < x_b
        px = np.concatenate((nodes[keep], [x_b]))
        seg = integrate_segments(lambda y: y * rate(y), px[:-1], px[1:])
        psi = level + np.concatenate(([0.0], np.cumsum(seg)))
        g_seg = integrate_segments(rate, px[:-1], px[1:])
        g = g_start + np.concatenate(([0.0], np.cumsum(g_seg)))
        # the curves meet exactly at the breakpoint
        psi[-1] = float(psi1.psi(np.array([x_b]))[0])
        pieces.append(_Piece(regime, px, psi, g, rate(px)))
        breakpoints.append(float(x_b))
        if len(breakpoints) > MAX_BREAKPOINTS:
            raise AssumptionViolation(f"more than {MAX_BREAKPOINTS} crossings; "
                                      "the alternation does not terminate on the grid")
        start, level, g_start = float(x_b), psi[-1], g[-1]
        regime = Regime.DELTA if regime is Regime.MU2 else Regime.MU2

    psi2 = _assemble(pieces, pair)
    return TwoMarginalEmbedding(pair, psi1, psi2, tuple(breakpoints),
                                tuple(p.regime for p in pieces), margin,
                                {"scan_points": int(grid.size)})


def _assemble(pieces: list[_Piece], pair: DeltaMu) -> EmbeddingMap:
    xs, ps, gs, d0, d1, r0, r1 = [], [], [], [], [], [], []
    for k, p in enumerate(pieces):
        sl = slice(0 if k == 0 else 1, None)
        xs.append(p.x[sl])
        ps.append(p.psi[sl])
        gs.append(p.g[sl])
        slope = p.x * p.rate
        d0.append(slope[:-1])
        d1.append(slope[1:])
        r0.append(p.rate[:-1])
        r1.append(p.rate[1:])
    cat = np.concatenate
    with np.errstate(over="ignore"):
        return EmbeddingMap(cat(xs), cat(ps), (cat(d0), cat(d1)), cat(gs), (cat(r0), cat(r1)),
                            marginal=pair.mu2, metadata={"construction": "two_marginal"})


def single_marginal(pair: DeltaMu) -> TwoMarginalEmbedding:
    """Degenerate case: immediate first stop, psi2 from mu2 alone."""
    psi2 = build_psi(pair.mu2)
    return TwoMarginalEmbedding(pair, None, psi2, (), (Regime.MU2,))


# --- assumption report -----------------------------------------------------------

@dataclass(frozen=True)
class AssumptionReport:
    checks: dict[str, Check]
    convex_order: ConvexOrderReport
    certification: str = "finite-probe certification"

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values()) and self.convex_order.passed

    def failures(self) -> list[str]:
        out = [k for k, c in self.checks.items() if not c.passed]
        if not self.convex_order.passed:
            out.append("convex_order")
        return out


def check_assumptions(pair: DeltaMu, strikes=None) -> AssumptionReport:
    """Sign of delta mu near zero, its sign on the delta regimes and termination.

    Termination can only be certified on the finite grid: it passes when the
    last regime keeps psi2 on one side of psi1 up to x_max with a relative
    margin of at least CERTIFY_MARGIN.
    """
    checks = {"near_zero": _check_near_zero(pair)}
    if strikes is None:
        strikes = np.linspace(0.0, pair.x_max, 65)
    convex = convex_order_check(pair, strikes)
    if not checks["near_zero"].passed:
        msg = "not evaluated: construction needs the near-zero condition"
        checks["delta_positive"] = Check(False, math.nan, msg)
        checks["terminates"] = Check(False, math.nan, msg)
        return AssumptionReport(checks, convex)
    try:
        t = build_psi2(pair)
    except (NonIncreasingPsi2, DeltaTailVanishes) as exc:
        checks["delta_positive"] = Check(False, math.nan, f"{type(exc).__name__}: {exc}")
        checks["terminates"] = Check(False, math.nan, "construction stopped")
        return AssumptionReport(checks, convex)
    except (DegenerateBreakpoint, AssumptionViolation) as exc:
        checks["delta_positive"] = Check(True, math.nan, "no violation before the failure")
        checks["terminates"] = Check(False, math.nan, f"{type(exc).__name__}: {exc}")
        return AssumptionReport(checks, convex)

    lo = [0.0, *t.breakpoints]
    hi = [*t.breakpoints, t.psi2.x_max]
    worst = math.inf
    for a, b, r in zip(lo, hi, t.regimes):
        if r is Regime.DELTA:
            x = np.linspace(a, b, 258)[1:-1]
            x = x[pair.mu2.tail(x) >= TRUNCATION_TAIL]
            if x.size:
                worst = min(worst, float(np.min(pair.delta_hazard(x))))
    if math.isinf(worst):
        checks["delta_positive"] = Check(True, math.nan, "no delta regime")
    else:
        checks["delta_positive"] = Check(worst > 0, worst,
                                         "minimum of delta mu / delta mu([x, inf)) on delta regimes")
    ok = bool(t.certified_margin >= CERTIFY_MARGIN)
    checks["terminates"] = Check(ok, t.certified_margin,
                                 f"finite-probe certification up to x_max={t.psi2.x_max:g}; "
                                 f"{len(t.breakpoints)} finite breakpoint(s)")
    return AssumptionReport(checks, convex)


# --- implied terminal density ------------------------------------------------------

def implied_density(t: TwoMarginalEmbedding, x):
    """Density of B at the second stop implied by the two barriers.

    Reproduces mu2 when the construction is correct.  With ``t.psi1`` None
    the first stop is immediate and the formula reduces to the mu2 map alone.
    """
    x = np.abs(np.atleast_1d(np.asarray(x, dtype=float)))
    p2 = t.psi2
    l2 = p2.psi(x)
    d2 = p2.dpsi(x)
    g2 = p2.gamma_at_psi(x)
    if t.psi1 is None:
        return d2 / (2 * x) * np.exp(-g2)
    p1 = t.psi1
    g1_at_l2 = p1.gamma(l2)
    bps = np.asarray(t.breakpoints, dtype=float)
    # exponent gamma2 - gamma1 at the breakpoints, where both maps share the level
    e_bp = p2.gamma_at_psi(bps) - p1.gamma_at_psi(bps)
    ends = np.concatenate(([0.0], bps))
    e_ends = np.concatenate(([0.0], e_bp))
    # psi2' is the right derivative at a node, so a breakpoint takes the regime on its right
    j = np.searchsorted(bps, x, side="right")
    regime = np.array([r.value for r in t.regimes])[j]

    s = np.zeros_like(x)
    # mu2 regimes are the pieces [x_{2i}, x_{2i+1}]; sum their increments up to x
    for i in range(0, len(t.regimes), 2):
        a = ends[i]
        inside = x > a
        if i + 1 < ends.size:
            b = ends[i + 1]
            full = x >= b
            s -= np.where(full, np.exp(e_ends[i + 1] - g2), 0.0)
            partial = inside & ~full
        else:
            partial = inside
        s -= np.where(partial, np.exp(-g1_at_l2), 0.0)
        s += np.where(inside, np.exp(e_ends[i] - g2), 0.0)

    above = regime == Regime.MU2.value
    nu_mu2 = d2 / (2 * x) * (s + np.exp(-g1_at_l2))
    nu_delta = p1.dpsi(x) / (2 * x) * np.exp(-p1.gamma_at_psi(x)) + d2 / (2 * x) * s
    return np.where(above, nu_mu2, nu_delta)

"""Quadrature, monotone cubic interpolation and truncation helpers."""

from __future__ import annotations

from functools import lru_cache
from typing import Callable

import numpy as np

TRUNCATION_TAIL = 1e-13

ArrayFn = Callable[[np.ndarray], np.ndarray]


@lru_cache(maxsize=8)
def _legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    # map to [0, 1]
    return 0.5 * (nodes + 1.0), 0.5 * weights


def integrate_segments(f: ArrayFn, a, b, order: int = 8) -> np.ndarray:
    """Gauss-Legendre estimate of the integral of f over each [a_i, b_i]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t, w = _legendre(order)
    h = b - a
    pts = a[..., None] + h[..., None] * t
    vals = np.asarray(f(pts.ravel()), dtype=float).reshape(pts.shape)
    return h * (vals @ w)


def cumulative_integral(f: ArrayFn, edges: np.ndarray, order: int = 8) -> np.ndarray:
    """Cumulative integral of f from edges[0] to each edge."""
    edges = np.asarray(edges, dtype=float)
    seg = integrate_segments(f, edges[:-1], edges[1:], order)
    return np.concatenate(([0.0], np.cumsum(seg)))


def truncation_point(tail: ArrayFn, threshold: float = TRUNCATION_TAIL,
                     start: float = 1.0, support_end: float = np.inf) -> float:
    """Smallest doubling of ``start`` where ``tail`` falls below ``threshold``."""
    x = start
    while float(tail(np.array([x]))[0]) >= threshold:
        if x >= support_end:
            return float(support_end)
        x *= 2.0
        if x > 1e8:
            raise ValueError("tail does not decay below the truncation threshold")
    return float(min(x, support_end))


class HermiteCurve:
    """Piecewise cubic Hermite curve with per-segment end slopes.

    ``d0[j]`` and ``d1[j]`` are the slopes used by segment ``j`` at its left
    and right end, so kinks at nodes are represented exactly.  With
    ``monotone`` set, slopes are limited (Fritsch-Carlson) so the curve is
    monotone between nodes and can be inverted by bisection.
    """

    def __init__(self, x, y, d0, d1=None, monotone: bool = False):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        d0 = np.asarray(d0, dtype=float)
        if d0.shape == x.shape:
            d1 = d0[1:].copy() if d1 is None else np.asarray(d1, dtype=float)
            d0 = d0[:-1].copy()
        else:
            d0 = d0.copy()
            d1 = np.asarray(d1, dtype=float).copy()
        if x.ndim != 1 or x.size < 2 or np.any(np.diff(x) <= 0):
            raise ValueError("nodes must be strictly increasing")
        h = np.diff(x)
        secant = np.diff(y) / h
        if monotone:
            d0, d1 = _limit_slopes(secant, d0, d1)
        self.x, self.y, self.h = x, y, h
        self.d0, self.d1 = d0, d1
        self.monotone = monotone
        self.increasing = bool(y[-1] >= y[0])

    @property
    def lo(self) -> float:
        return float(self.x[0])

    @property
    def hi(self) -> float:
        return float(self.x[-1])

    def _locate(self, xq):
        i = np.searchsorted(self.x, xq, side="right") - 1
        return np.clip(i, 0, self.x.size - 2)

    def _eval_in(self, i, t):
        h = self.h[i]
        t2 = t * t
        t3 = t2 * t
        h00 = 2 * t3 - 3 * t2 + 1
        h10 = t3 - 2 * t2 + t
        h01 = -2 * t3 + 3 * t2
        h11 = t3 - t2
        return (h00 * self.y[i] + h10 * h * self.d0[i]
                + h01 * self.y[i + 1] + h11 * h * self.d1[i])

    def __call__(self, xq):
        xq = np.asarray(xq, dtype=float)
        i = self._locate(xq)
        t = (xq - self.x[i]) / self.h[i]
        out = self._eval_in(i, np.clip(t, 0.0, 1.0))
        # linear extension outside the node range
        below = xq < self.x[0]
        above = xq > self.x[-1]
        if np.any(below) or np.any(above):
            out = np.where(below, self.y[0] + self.d0[0] * (xq - self.x[0]), out)
            out = np.where(above, self.y[-1] + self.d1[-1] * (xq - self.x[-1]), out)
        return out

    def derivative(self, xq):
        xq = np.asarray(xq, dtype=float)
        i = self._locate(xq)
        t = np.clip((xq - self.x[i]) / self.h[i], 0.0, 1.0)
        h = self.h[i]
        t2 = t * t
        dy = (self.y[i + 1] - self.y[i]) / h
        return ((6 * t - 6 * t2) * dy + (3 * t2 - 4 * t + 1) * self.d0[i]
                + (3 * t2 - 2 * t) * self.d1[i])

    def inverse(self, yq, iterations: int = 60):
        """Invert a monotone curve by bisection inside the bracketing segment."""
        if not self.monotone:
            raise ValueError("inverse requires a monotone curve")
        yq = np.asarray(yq, dtype=float)
        sign = 1.0 if self.increasing else -1.0
        ys = sign * self.y
        target = sign * yq
        i = np.searchsorted(ys, target, side="right") - 1
        i = np.clip(i, 0, self.x.size - 2)
        lo = np.zeros_like(target)
        hi = np.ones_like(target)
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            val = sign * self._eval_in(i, mid)
            go_right = val < target
            lo = np.where(go_right, mid, lo)
            hi = np.where(go_right, hi, mid)
        out = self.x[i] + 0.5 * (lo + hi) * self.h[i]
        below = target <= ys[0]
        above = target >= ys[-1]
        out = np.where(below, self.x[0], out)
        out = np.where(above, self.x[-1], out)
        return out


def _limit_slopes(secant, d0, d1):
    d0 = np.where(np.sign(d0) * np.sign(secant) < 0, 0.0, d0)
    d1 = np.where(np.sign(d1) * np.sign(secant) < 0, 0.0, d1)
    flat = secant == 0
    d0 = np.where(flat, 0.0, d0)
    d1 = np.where(flat, 0.0, d1)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(flat, 0.0, d0 / secant)
        b = np.where(flat, 0.0, d1 / secant)
        r = a * a + b * b
        scale = np.where(r > 9.0, 3.0 / np.sqrt(r), 1.0)
    return d0 * scale, d1 * scale


def bisect_monotone(f: ArrayFn, target, lo, hi, iterations: int = 80):
    """Vectorised bisection for an increasing function f on [lo, hi]."""
    target = np.asarray(target, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), target.shape).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), target.shape).copy()
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        go_right = f(mid) < target
        lo = np.where(go_right, mid, lo)
        hi = np.where(go_right, hi, mid)
    return 0.5 * (lo + hi)

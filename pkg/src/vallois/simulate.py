"""Monte-Carlo engine: Brownian paths with window local time and barrier stops."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from . import _kernels
from .errors import ConfigError, EmptySample


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1.0 / 4000.0
    eps: float = 0.04
    n_paths: int = 2**17
    seed: int = 0
    t_budget: float = 64.0

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError(f"dt must be positive, got {self.dt!r}")
        if not (self.eps > 0 and math.isfinite(self.eps)):
            raise ConfigError(f"eps must be positive, got {self.eps!r}")
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise ConfigError(f"n_paths must be a positive integer, got {self.n_paths!r}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an integer in [0, 2^64), got {self.seed!r}")
        if not self.t_budget > 0:
            raise ConfigError(f"t_budget must be positive, got {self.t_budget!r}")

    @property
    def dl(self) -> float:
        """Local-time increment per step spent inside the window."""
        return self.dt / (2.0 * self.eps)

    @property
    def max_steps(self) -> int:
        return int(round(self.t_budget / self.dt))

    @property
    def key(self) -> tuple[np.uint32, np.uint32]:
        s = int(self.seed)
        return np.uint32(s & 0xFFFFFFFF), np.uint32((s >> 32) & 0xFFFFFFFF)


def set_threads(n: int) -> int:
    """Set the number of worker threads (0 = all available); returns the count used."""
    avail = numba.config.NUMBA_NUM_THREADS
    n = avail if n <= 0 else min(int(n), avail)
    numba.set_num_threads(n)
    return n


def step_local_time(prev_l: float, prev_b: float, cfg: SimConfig) -> float:
    """One step of the window scheme: add dt/(2 eps) if |B| was within eps."""
    return prev_l + cfg.dl if abs(prev_b) <= cfg.eps else prev_l


@dataclass(frozen=True)
class StoppedSample:
    b_tau: float
    l_tau: float
    tau: float
    gains: float
    slack: float
    censored: bool


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Column store of stopped samples, in path order."""

    b_tau: np.ndarray
    l_tau: np.ndarray
    tau: np.ndarray
    gains: np.ndarray
    slack: np.ndarray
    censored: np.ndarray

    def __len__(self) -> int:
        return self.b_tau.size

    def __getitem__(self, i: int) -> StoppedSample:
        return StoppedSample(float(self.b_tau[i]), float(self.l_tau[i]), float(self.tau[i]),
                             float(self.gains[i]), float(self.slack[i]), bool(self.censored[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def n_censored(self) -> int:
        return int(self.censored.sum())

    @property
    def censor_rate(self) -> float:
        return self.n_censored / len(self)

    def uncensored(self, column: str = "b_tau") -> np.ndarray:
        return getattr(self, column)[~self.censored]


def _lattice_size(maps, cfg: SimConfig) -> int:
    need = max(int(math.ceil(m.l_max / cfg.dl)) + 2 for m in maps)
    return max(2, min(cfg.max_steps + 2, need))


def barrier_tables(maps, cfg: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """Upper/lower barriers on the local-time lattice n * dl, one row per map."""
    n_lat = _lattice_size(maps, cfg)
    levels = np.arange(n_lat) * cfg.dl
    upper = np.empty((len(maps), n_lat))
    lower = np.empty((len(maps), n_lat))
    for k, m in enumerate(maps):
        upper[k] = m.phi_plus(levels)
        lower[k] = m.phi_minus(levels)
    return upper, lower


def run_nested(upper, lower, cfg: SimConfig, a_up=None, a_dn=None, path_offset: int = 0,
               n_paths: int | None = None):
    """Raw kernel call; returns (b, n, steps, gains, censored) arrays."""
    n_paths = cfg.n_paths if n_paths is None else n_paths
    K = upper.shape[0]
    hedge = a_up is not None
    if not hedge:
        a_up = a_dn = np.zeros(1)
    out_b = np.empty((n_paths, K))
    out_n = np.empty((n_paths, K), dtype=np.int64)
    out_steps = np.empty((n_paths, K), dtype=np.int64)
    out_gains = np.empty(n_paths)
    out_cens = np.empty(n_paths, dtype=np.bool_)
    k0, k1 = cfg.key
    _kernels.nested_exits(k0, k1, np.int64(path_offset), n_paths, math.sqrt(cfg.dt), cfg.eps,
                          cfg.max_steps, np.ascontiguousarray(upper), np.ascontiguousarray(lower),
                          np.ascontiguousarray(a_up, dtype=float),
                          np.ascontiguousarray(a_dn, dtype=float), hedge,
                          out_b, out_n, out_steps, out_gains, out_cens)
    return out_b, out_n, out_steps, out_gains, out_cens


def _samples(b, n, steps, gains, cens, cfg, plan=None) -> SampleSet:
    l = n * cfg.dl
    tau = steps * cfg.dt
    if plan is not None:
        slack = gains + plan.H(b) - plan.payoff(l)
    else:
        gains = np.full_like(b, np.nan)
        slack = np.full_like(b, np.nan)
    return SampleSet(b, l, tau, gains, slack, cens)


def simulate_stopped(barrier, cfg: SimConfig, plan=None, path_offset: int = 0) -> SampleSet:
    """Stop each path when B leaves (phi_minus(L), phi_plus(L)).

    With ``plan`` the gains of the predictable strategy Delta are
    accumulated and the slack gains + H(B) - F(L) is reported.
    """
    upper, lower = barrier_tables([barrier], cfg)
    a_up = a_dn = None
    if plan is not None:
        levels = np.arange(upper.shape[1]) * cfg.dl
        a_up = plan.A_plus(levels)
        a_dn = plan.A_minus(levels)
    b, n, steps, gains, cens = run_nested(upper, lower, cfg, a_up, a_dn, path_offset)
    return _samples(b[:, 0], n[:, 0], steps[:, 0], gains, cens, cfg, plan)


def simulate_sequential(psi1, psi2, cfg: SimConfig,
                        path_offset: int = 0) -> tuple[SampleSet, SampleSet]:
    """Stop at tau1 on psi1's barrier, then continue to psi2's barrier.

    The second stop reuses the running local time of the same path.
    """
    upper, lower = barrier_tables([psi1, psi2], cfg)
    b, n, steps, gains, cens = run_nested(upper, lower, cfg, path_offset=path_offset)
    first = _samples(b[:, 0], n[:, 0], steps[:, 0], gains, cens, cfg)
    second = _samples(b[:, 1], n[:, 1], steps[:, 1], gains.copy(), cens, cfg)
    return first, second


def free_path_state(t: float, cfg: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """(B_t, L_t) of unstopped paths at Brownian time t."""
    steps = int(round(t / cfg.dt))
    inf = np.full((1, 2), np.inf)
    local = SimConfig(cfg.dt, cfg.eps, cfg.n_paths, cfg.seed, steps * cfg.dt)
    b, n, _, _, _ = run_nested(inf, -inf, local)
    return b[:, 0], n[:, 0] * cfg.dl


def tolerance(plan, cfg: SimConfig) -> float:
    """Declared discretisation tolerance 5 (|A|_inf + |H'|_inf) sqrt(dt)."""
    a, h = plan.sup_norms()
    return 5.0 * (a + h) * math.sqrt(cfg.dt)


class EmpiricalCDF:
    """Right-continuous step CDF of a sample, or a tabulated CDF when ``levels`` is given."""

    def __init__(self, values, levels=None):
        values = np.asarray(values, dtype=float)
        order = np.argsort(values, kind="stable")
        self.values = values[order]
        self.levels = None if levels is None else np.asarray(levels, dtype=float)[order]

    @classmethod
    def from_samples(cls, samples: SampleSet) -> "EmpiricalCDF":
        return cls(samples.uncensored())

    def __len__(self) -> int:
        return self.values.size

    def query(self, x):
        x = np.asarray(x, dtype=float)
        i = np.searchsorted(self.values, x, side="right")
        if self.levels is None:
            return i / max(self.values.size, 1)
        lv = np.concatenate(([0.0], self.levels))
        return lv[i]

    __call__ = query


def ks_distance(emp: EmpiricalCDF, analytic, exclusion=None) -> float:
    """sup |emp - analytic CDF| over sample points outside ``exclusion``."""
    x = emp.values
    n = x.size
    if n == 0:
        raise EmptySample("empty sample")
    keep = np.ones(n, dtype=bool)
    if exclusion is not None:
        lo, hi = exclusion
        keep = (x < lo) | (x > hi)
    if not keep.any():
        raise EmptySample("no sample points outside the exclusion interval")
    F = analytic.cdf(x)
    if emp.levels is not None:
        d = np.abs(emp.levels - F)
    else:
        after = np.arange(1, n + 1) / n
        before = np.arange(n) / n
        d = np.maximum(np.abs(after - F), np.abs(F - before))
    return float(d[keep].max())

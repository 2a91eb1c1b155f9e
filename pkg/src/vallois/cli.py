"""Command-line front end.

Every run resolves its flags into a flat config, writes the outputs and a
``manifest.json`` echoing that config into ``--out``, and can be replayed
with ``--manifest``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .embedding import build_psi, build_reversed_psi, write_embedding_csv
from .errors import AssumptionViolation, ConfigError, DomainExceeded, ValloisError
from .fake_bm import build_peacock, diagnostics, simulate_fake_bm
from .hedging import ConvexPayoff, build_sub_hedge, build_super_hedge
from .marginal import DeltaMu, RealLine, SymmetricMarginal, validate_marginal
from .simulate import (EmpiricalCDF, SimConfig, ks_distance, set_threads, simulate_sequential,
                       simulate_stopped)
from .two_marginal import build_psi2, check_assumptions, implied_density

log = logging.getLogger("vallois")

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG = 0, 1, 2

_GLOBAL = {"seed": 0, "out": "vallois-out", "format": "csv", "threads": None}
_SIM = {"paths": 2**17, "dt": 1.0 / 4000.0, "eps": 0.04, "t_budget": 64.0}
DEFAULTS = {
    "embed": {"marginal": "sym_exp", "side": "super", "n_grid": 4096},
    "price": {"marginal": "sym_exp", "payoff": "linear"},
    "simulate": {"marginal": "sym_exp", "payoff": None, **_SIM},
    "two-marginal": {"mu1": "sym_exp", "mu2": "bimodal", "n_points": 512},
    "figure2": {"mu1": "sym_exp", "mu2": "bimodal", "exclusion": 0.1, "n_points": 401, **_SIM},
    "fake-bm": {"horizon": 1.0, "n_times": 4, "exclusion": 0.1, **_SIM},
}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path: Path, header, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_fmt(v) for v in row])


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serialisable: {type(o).__name__}")


# --- argument parsing ----------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    common.add_argument("--format", choices=("csv", "json"))
    common.add_argument("--threads", type=int, help="worker threads, 0 = all (env VALLOIS_THREADS)")
    common.add_argument("--manifest", help="replay the config stored in a manifest.json")
    common.add_argument("-v", "--verbose", action="store_true")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--paths", type=int)
    sim.add_argument("--dt", type=float)
    sim.add_argument("--eps", type=float)
    sim.add_argument("--t-budget", dest="t_budget", type=float)

    p = argparse.ArgumentParser(prog="vallois", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"vallois {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("embed", parents=[common], help="barrier map of a marginal")
    s.add_argument("--marginal")
    s.add_argument("--side", choices=("super", "sub"))
    s.add_argument("--n-grid", dest="n_grid", type=int)

    s = sub.add_parser("price", parents=[common], help="upper and lower hedge prices")
    s.add_argument("--marginal")
    s.add_argument("--payoff")

    s = sub.add_parser("simulate", parents=[common, sim], help="stopped Brownian samples")
    s.add_argument("--marginal")
    s.add_argument("--payoff")

    s = sub.add_parser("two-marginal", parents=[common], help="second barrier and implied density")
    s.add_argument("--mu1")
    s.add_argument("--mu2")
    s.add_argument("--n-points", dest="n_points", type=int)

    s = sub.add_parser("figure2", parents=[common, sim], help="CDFs of both stops against mu1, mu2")
    s.add_argument("--mu1")
    s.add_argument("--mu2")
    s.add_argument("--exclusion", type=float)
    s.add_argument("--n-points", dest="n_points", type=int)

    s = sub.add_parser("fake-bm", parents=[common, sim], help="nested stops with Gaussian marginals")
    s.add_argument("--horizon", type=float)
    s.add_argument("--n-times", dest="n_times", type=int)
    s.add_argument("--exclusion", type=float)
    return p


def resolve_config(ns: argparse.Namespace) -> dict:
    """Defaults, then manifest values, then explicit flags."""
    cmd = ns.command
    allowed = {**_GLOBAL, **DEFAULTS[cmd]}
    cfg = dict(allowed)
    if ns.manifest:
        try:
            doc = json.loads(Path(ns.manifest).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read manifest {ns.manifest!r}: {exc}") from None
        if doc.get("command") != cmd:
            raise ConfigError(f"manifest is for {doc.get('command')!r}, not {cmd!r}")
        stored = doc.get("config", {})
        for key, val in stored.items():
            if key not in allowed:
                raise ConfigError(f"unknown config key {key!r} for {cmd!r}")
            cfg[key] = val
    for key in allowed:
        val = getattr(ns, key, None)
        if val is not None:
            cfg[key] = val
    if cfg["threads"] is None:
        env = os.environ.get("VALLOIS_THREADS")
        if env is not None:
            try:
                cfg["threads"] = int(env)
            except ValueError:
                raise ConfigError(f"threads: VALLOIS_THREADS={env!r} is not an integer") from None
    _validate(cmd, cfg)
    return cfg


def _validate(cmd: str, cfg: dict) -> None:
    def positive(key, cast=float):
        try:
            v = cast(cfg[key])
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {cfg[key]!r}") from None
        if not (v > 0 and math.isfinite(v)):
            raise ConfigError(f"{key}: must be positive, got {cfg[key]!r}")
        cfg[key] = v

    if cfg["format"] not in ("csv", "json"):
        raise ConfigError(f"format: expected csv or json, got {cfg['format']!r}")
    if not isinstance(cfg["seed"], int) or not 0 <= cfg["seed"] < 2**64:
        raise ConfigError(f"seed: expected an integer in [0, 2^64), got {cfg['seed']!r}")
    if cfg["threads"] is not None and (not isinstance(cfg["threads"], int) or cfg["threads"] < 0):
        raise ConfigError(f"threads: expected a nonnegative integer, got {cfg['threads']!r}")
    for key in ("dt", "eps", "t_budget", "horizon", "exclusion"):
        if key in cfg:
            positive(key)
    for key in ("paths", "n_grid", "n_points", "n_times"):
        if key in cfg:
            if not isinstance(cfg[key], int) or isinstance(cfg[key], bool):
                raise ConfigError(f"{key}: expected an integer, got {cfg[key]!r}")
            positive(key, int)
    if cmd == "embed" and cfg["side"] not in ("super", "sub"):
        raise ConfigError(f"side: expected super or sub, got {cfg['side']!r}")


def _marginal(text: str, key: str) -> SymmetricMarginal:
    try:
        m = SymmetricMarginal.from_spec(text)
    except ConfigError as exc:
        raise ConfigError(f"{key}: {exc}") from None
    report = validate_marginal(m)
    if not report.passed:
        raise AssumptionViolation(f"{key}: marginal fails checks {report.failures()}")
    return m


def _payoff(text: str) -> ConvexPayoff:
    try:
        return ConvexPayoff.parse(text)
    except ConfigError as exc:
        raise ConfigError(f"payoff: {exc}") from None


def _sim_config(cfg: dict) -> SimConfig:
    return SimConfig(dt=cfg["dt"], eps=cfg["eps"], n_paths=cfg["paths"], seed=cfg["seed"],
                     t_budget=cfg["t_budget"])


# --- subcommands -----------------------------------------------------------------

def cmd_embed(cfg: dict, out: Path) -> dict:
    m = _marginal(cfg["marginal"], "marginal")
    if cfg["side"] == "super":
        e = build_psi(m, n_grid=cfg["n_grid"])
    else:
        e = build_reversed_psi(m, n_grid=cfg["n_grid"])
    extra = np.arange(0.0, e.x_max, 0.25)
    if cfg["format"] == "csv":
        write_embedding_csv(e, out / "embedding.csv", extra_points=extra)
    else:
        x = np.unique(np.concatenate((e.x, extra)))
        write_json(out / "embedding.json",
                   {"x": x, "psi": e.psi(x), "gamma_at_psi": e.gamma_at_psi(x)})
    return {"x_max": e.x_max, "l_max": e.l_max, "side": cfg["side"],
            "marginal": m.spec.label()}


def cmd_price(cfg: dict, out: Path) -> dict:
    m = _marginal(cfg["marginal"], "marginal")
    F = _payoff(cfg["payoff"])
    sup = build_super_hedge(F, build_psi(m))
    try:
        low = build_sub_hedge(F, build_reversed_psi(m))
        lower = low.price
    except DomainExceeded as exc:
        low, lower = None, None
        log.warning("lower bound unavailable: %s", exc)
    doc = {"upper": sup.price, "lower": lower, "payoff": F.to_json(),
           "marginal": m.spec.label()}
    l = np.linspace(0.0, min(sup.embedding.l_max, 4.0 * max(F.kinks.max(initial=0.0), 1.0)), 401)
    x = np.linspace(-sup.embedding.x_max, sup.embedding.x_max, 801)
    if cfg["format"] == "csv":
        write_csv(out / "hedge_ratios.csv", ["l", "A_plus", "A_minus"],
                  [l, sup.A_plus(l), sup.A_minus(l)])
        write_csv(out / "static_claim.csv", ["x", "H"], [x, sup.H(x)])
    write_json(out / "price.json", doc)
    return doc


def cmd_simulate(cfg: dict, out: Path) -> dict:
    m = _marginal(cfg["marginal"], "marginal")
    e = build_psi(m)
    sc = _sim_config(cfg)
    plan = build_super_hedge(_payoff(cfg["payoff"]), e) if cfg["payoff"] else None
    s = simulate_stopped(e, sc, plan)
    ids = np.arange(len(s))
    cols = [ids, s.b_tau, s.l_tau, s.tau, s.gains, s.slack, s.censored]
    header = ["path_id", "b_tau", "l_tau", "tau", "gains", "slack", "censored"]
    if cfg["format"] == "csv":
        write_csv(out / "samples.csv", header, cols)
    else:
        write_json(out / "samples.json", dict(zip(header, cols)))
    b = s.uncensored()
    summary = {
        "n_paths": len(s),
        "censor_rate": s.censor_rate,
        "mean_b": float(b.mean()),
        "se_b": float(b.std(ddof=1) / math.sqrt(b.size)),
        "ks_outside_0.1": ks_distance(EmpiricalCDF(b), RealLine(m), (-0.1, 0.1)),
    }
    if plan is not None:
        fl = plan.payoff(s.uncensored("l_tau"))
        summary.update(price=plan.price, mc_payoff_mean=float(fl.mean()),
                       mc_payoff_se=float(fl.std(ddof=1) / math.sqrt(fl.size)))
    write_json(out / "summary.json", summary)
    return summary


def _pair(cfg: dict) -> DeltaMu:
    return DeltaMu(_marginal(cfg["mu1"], "mu1"), _marginal(cfg["mu2"], "mu2"))


def cmd_two_marginal(cfg: dict, out: Path) -> dict:
    pair = _pair(cfg)
    report = check_assumptions(pair)
    if not report.passed:
        raise AssumptionViolation(f"pair fails assumption checks {report.failures()}")
    t = build_psi2(pair)
    x = np.linspace(0.0, pair.mu2.x_max, cfg["n_points"] + 1)[1:]
    cols = [x, t.psi1.psi(x), t.psi2.psi(x), t.regime(x), implied_density(t, x),
            pair.mu2.density(x)]
    header = ["x", "psi1", "psi2", "regime", "nu", "mu2_density"]
    if cfg["format"] == "csv":
        write_csv(out / "two_marginal.csv", header, cols)
    else:
        write_json(out / "two_marginal.json", dict(zip(header, cols)))
    doc = {
        "breakpoints": list(t.breakpoints) + [math.inf],
        "levels": t.levels,
        "regimes": [r.value for r in t.regimes],
        "alpha": getattr(pair.mu2, "alpha", None),
        "certification": report.certification,
        "certified_margin": t.certified_margin,
        "checks": {k: {"passed": c.passed, "value": c.value, "detail": c.detail}
                   for k, c in report.checks.items()},
        "convex_order_min": report.convex_order.min_difference,
    }
    # JSON has no infinity; the last breakpoint is reported as a string
    doc["breakpoints"] = [b if math.isfinite(b) else "inf" for b in doc["breakpoints"]]
    write_json(out / "breakpoints.json", doc)
    return doc


def cmd_figure2(cfg: dict, out: Path) -> dict:
    pair = _pair(cfg)
    t = build_psi2(pair)
    first, second = simulate_sequential(t.psi1, t, _sim_config(cfg))
    ok = ~first.censored
    if np.any(second.tau[ok] < first.tau[ok]):
        raise ValloisError("second stop precedes the first on some path")
    e1, e2 = EmpiricalCDF(first.uncensored()), EmpiricalCDF(second.uncensored())
    lim = 3.0
    x = np.linspace(-lim, lim, cfg["n_points"])
    cols = [x, pair.mu1.cdf(x), e1(x), pair.mu2.cdf(x), e2(x)]
    header = ["x", "cdf_mu1", "cdf_emp1", "cdf_mu2", "cdf_emp2"]
    if cfg["format"] == "csv":
        write_csv(out / "figure2.csv", header, cols)
    else:
        write_json(out / "figure2.json", dict(zip(header, cols)))
    ex = (-cfg["exclusion"], cfg["exclusion"])
    ks1, ks2 = ks_distance(e1, RealLine(pair.mu1), ex), ks_distance(e2, RealLine(pair.mu2), ex)
    doc = {"ks_mu1": ks1, "ks_mu2": ks2, "exclusion": list(ex), "threshold": 0.02,
           "pass_mu1": ks1 <= 0.02, "pass_mu2": ks2 <= 0.02,
           "censor_rate": first.censor_rate, "n_paths": len(first)}
    write_json(out / "ks.json", doc)
    return doc


def cmd_fake_bm(cfg: dict, out: Path) -> dict:
    fam = build_peacock(cfg["horizon"], cfg["n_times"])
    res = simulate_fake_bm(fam, _sim_config(cfg))
    n, k = res.values.shape
    ids = np.repeat(np.arange(n), k)
    ts = np.tile(res.times, n)
    vals = res.values.ravel()
    if cfg["format"] == "csv":
        write_csv(out / "fake_bm.csv", ["path_id", "t", "value"], [ids, ts, vals])
    else:
        write_json(out / "fake_bm.json", {"times": res.times, "values": res.values})
    ex = (-cfg["exclusion"], cfg["exclusion"])
    doc = diagnostics(res, fam, ex)
    write_json(out / "diagnostics.json", doc)
    return doc


COMMANDS = {
    "embed": cmd_embed,
    "price": cmd_price,
    "simulate": cmd_simulate,
    "two-marginal": cmd_two_marginal,
    "figure2": cmd_figure2,
    "fake-bm": cmd_fake_bm,
}


def run(argv=None) -> int:
    parser = _parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(ns)
        if cfg["threads"] is not None:
            set_threads(cfg["threads"])
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[ns.command](cfg, out)
        write_json(out / "manifest.json",
                   {"command": ns.command, "config": cfg, "version": __version__})
        print(json.dumps(result, sort_keys=True, default=_json_default))
        return EXIT_OK
    except (ConfigError, AssumptionViolation) as exc:
        print(f"vallois: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report and map to the internal-error code
        log.debug("internal error", exc_info=True)
        print(f"vallois: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

"""Command-line entry point: ``esohedge {value,simulate,frontier,limit,converge}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import shutil
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import ValidationError

from . import closedform as cf
from . import frontier as fr
from . import lattice as lt
from . import simulate as sim
from .config import ConfigError, RunConfig, load_config
from .model import ModelError, validate
from .reports import (
    ConvergeReport,
    ConvergeRow,
    FrontierReport,
    LimitReport,
    SimulateReport,
    StrategyRow,
    ValueReport,
)

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_OWN_ENDOWMENT = {"mv": "star", "bs": "rn", "sr": "sr"}


def _fmt(v: float) -> str:
    return f"{v:.10g}"


def _write_json(path: Path, payload) -> None:
    path.write_text(payload.model_dump_json(indent=2) + "\n", encoding="utf-8")


def _out_dir(args, command: str) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        stamp = time.strftime("%Y%m%dT%H%M%S")
        out = Path("out") / command / stamp
    out.mkdir(parents=True, exist_ok=True)
    if args.config:
        shutil.copyfile(args.config, out / "config.json")
    return out


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "steps", None):
        cfg.lattice.n_steps = args.steps
        cfg.converge.n_steps = args.steps
    if getattr(args, "seed", None) is not None:
        cfg.simulate.seed = args.seed
    if getattr(args, "paths", None):
        cfg.simulate.n_paths = args.paths
    if getattr(args, "workers", None):
        cfg.simulate.workers = args.workers
    return cfg


class Solved:
    """Lattice solutions shared by the commands."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.market = cfg.market_params()
        self.contract = cfg.contract_spec()
        self.lattice = lt.build(self.market, self.contract, cfg.lattice.n_steps)
        self.mv = lt.solve_mv(self.lattice, self.market, self.contract)
        self.rn = lt.rn_value(self.lattice, self.market, self.contract)
        self.sr = lt.sr_value(self.lattice, self.market, self.contract)

    def endowment(self, source: str, explicit: Optional[float] = None) -> float:
        if source == "star":
            return self.mv.g0
        if source == "rn":
            return self.rn.v0
        if source == "sr":
            return self.sr.v0
        return float(explicit)

    def run(self, strategy: str, x0: float, n_paths: Optional[int] = None) -> sim.HedgeRun:
        sc = self.cfg.simulate
        config = sim.SimConfig(
            n_paths=n_paths or sc.n_paths,
            seed=sc.seed,
            n_time_steps=sc.n_time_steps or self.cfg.lattice.n_steps,
            strategy=strategy,
            initial_endowment=x0,
            workers=sc.workers,
            bs_delta_mode=sc.bs_delta_mode,
            path_model=sc.path_model,
            hazard_rule=sc.hazard_rule,
        )
        return sim.simulate(self.market, self.contract, config, self.mv, self.rn, self.sr)


def cmd_value(cfg: RunConfig) -> ValueReport:
    s = Solved(cfg)
    report = validate(s.market, s.contract)
    return ValueReport(
        x_star=s.mv.g0,
        x_rn=s.rn.v0,
        x_sr=s.sr.v0,
        f0=s.mv.f0,
        h0=s.mv.h0,
        rmshe_star=math.sqrt(s.mv.h0),
        n_steps=s.lattice.n_steps,
        dt=s.lattice.dt,
        vesting_snapped=s.lattice.vesting_time,
        warnings=list(report.warnings),
    )


def _histogram_bins(cfg: RunConfig) -> np.ndarray:
    lo, hi = cfg.simulate.histogram_range
    w = cfg.simulate.histogram_bin_width
    return np.arange(lo, hi + 0.5 * w, w)


def cmd_simulate(cfg: RunConfig, out: Optional[Path] = None) -> tuple[SimulateReport, dict]:
    s = Solved(cfg)
    sc = cfg.simulate
    rows, hists = [], {}
    for strategy in sc.strategies:
        source = _OWN_ENDOWMENT[strategy] if sc.endowment == "auto" else sc.endowment
        x0 = s.endowment(source, sc.endowment_value)
        run = s.run(strategy, x0)
        st = sim.error_stats(run)
        hist = sim.histogram(run, bins=_histogram_bins(cfg))
        hists[strategy] = hist
        p = st.percentiles
        rows.append(StrategyRow(
            strategy=strategy, x0=x0, MHE=st.mhe, RMSHE=st.rmshe,
            p1=p[1], p5=p[5], p10=p[10], p50=p[50], p90=p[90], p95=p[95], p99=p[99],
            mse_stderr=st.mse_stderr, n_modes=hist.n_modes, exact_percentiles=st.exact,
        ))
    report = SimulateReport(
        seed=sc.seed,
        n_paths=sc.n_paths,
        n_steps=cfg.lattice.n_steps,
        n_time_steps=sc.n_time_steps or cfg.lattice.n_steps,
        path_model=sc.path_model,
        hazard_rule=sc.hazard_rule,
        bs_delta_mode=sc.bs_delta_mode,
        h0=s.mv.h0,
        rows=rows,
    )
    if out is not None:
        write_stats_csv(report, out / "stats.csv")
        for name, hist in hists.items():
            write_histogram_csv(hist, out / f"histogram_{name}.csv")
        _write_json(out / "report.json", report)
    return report, hists


def write_stats_csv(report: SimulateReport, path: Path) -> None:
    cols = ["strategy", "x0", "MHE", "RMSHE", "p1", "p5", "p10", "p50", "p90", "p95", "p99"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in report.rows:
            d = row.model_dump()
            w.writerow([d["strategy"]] + [_fmt(d[c]) for c in cols[1:]])


def write_histogram_csv(hist: sim.Histogram, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left", "bin_right", "count"])
        for lo, hi, c in zip(hist.edges[:-1], hist.edges[1:], hist.counts):
            w.writerow([_fmt(lo), _fmt(hi), int(c)])


def format_table(report: SimulateReport) -> str:
    head = f"{'endowment':>18} {'MHE':>7} {'RMSHE':>7}" + "".join(
        f"{p:>8}" for p in ("1%", "5%", "10%", "50%", "90%", "95%", "99%"))
    lines = [head, "-" * len(head)]
    labels = {"mv": "x*", "bs": "x_rn", "sr": "x_sr"}
    for r in report.rows:
        label = f"{labels.get(r.strategy, r.strategy)} = {r.x0:.1f}"
        vals = (r.p1, r.p5, r.p10, r.p50, r.p90, r.p95, r.p99)
        lines.append(f"{label:>18} {r.MHE:7.1f} {r.RMSHE:7.1f}" + "".join(f"{v:8.1f}" for v in vals))
    return "\n".join(lines)


def cmd_frontier(cfg: RunConfig, out: Optional[Path] = None) -> tuple[FrontierReport, fr.FrontierCurve]:
    s = Solved(cfg)
    fb = cfg.frontier
    special = {}
    if fb.simulate_points:
        for label, strategy, x0 in (("rn", "bs", s.rn.v0), ("sr", "sr", s.sr.v0)):
            special[label] = (x0, sim.error_stats(s.run(strategy, x0)).rmshe)
    curve = fr.frontier(s.mv, fb.x_min, fb.x_max, fb.n_samples, special)
    report = FrontierReport(
        n_steps=cfg.lattice.n_steps,
        x_star=curve.apex.x,
        rmshe_star=curve.apex.rmshe,
        x_rn=special.get("rn", (None, None))[0],
        rmshe_rn=special.get("rn", (None, None))[1],
        x_sr=special.get("sr", (None, None))[0],
        rmshe_sr=special.get("sr", (None, None))[1],
        seed=cfg.simulate.seed if special else None,
        n_paths=cfg.simulate.n_paths if special else None,
    )
    if out is not None:
        fr.write_csv(curve, out / "frontier.csv")
        _write_json(out / "report.json", report)
    return report, curve


def _limit_solution(cfg: RunConfig) -> cf.LimitSolution:
    market = cfg.market_params()
    contract = cfg.contract_spec()
    rep = validate(market, contract, infinite_horizon=True)
    if not rep.infinite_horizon_ok:
        raise ConfigError(f"stationary limit unavailable: {rep.infinite_horizon_reason}")
    params = cf.LimitParams(contract.intensity.constant_value, market, contract.payoff)
    return cf.solve_limit(params, cfg.limit.method)


def cmd_limit(cfg: RunConfig) -> LimitReport:
    sol = _limit_solution(cfg)
    s = cfg.limit.s or cfg.market.s0
    return LimitReport(s0=s, lam=sol.params.lam, method=sol.method, **cf.limit_report(sol, s))


def cmd_converge(cfg: RunConfig, out: Optional[Path] = None) -> ConvergeReport:
    sol = _limit_solution(cfg)
    market = cfg.market_params()
    s0 = market.s0
    g_inf, h_inf = float(cf.g_infinity(sol, s0)), float(cf.h_infinity(sol, s0))
    rows = []
    for T in cfg.converge.T_list:
        contract = cfg.contract_spec(maturity=T)
        lat = lt.build(market, contract, cfg.converge.n_steps)
        mv = lt.solve_mv(lat, market, contract)
        rows.append(ConvergeRow(
            T=T, f0=mv.f0, g0=mv.g0, h0=mv.h0,
            f_closed=cf.f_const_lambda(T, sol.params.lam, market.theta),
            g_inf=g_inf, h_inf=h_inf,
        ))
    report = ConvergeReport(n_steps=cfg.converge.n_steps, rows=rows)
    if out is not None:
        cols = ["T", "f0", "g0", "h0", "f_closed", "g_inf", "h_inf"]
        with open(out / "converge.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in rows:
                d = r.model_dump()
                w.writerow([_fmt(d[c]) for c in cols])
        _write_json(out / "report.json", report)
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="esohedge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("value", "mean-variance, risk-neutral and super-replication values"),
        ("simulate", "Monte Carlo hedging-error statistics"),
        ("frontier", "mean-variance frontier with simulated comparison points"),
        ("limit", "stationary infinite-horizon solution"),
        ("converge", "tree solutions for growing maturities against the stationary limit"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory (default out/<command>/<timestamp>)")
        p.add_argument("--seed", type=int, help="override simulate.seed")
        p.add_argument("--paths", type=int, help="override simulate.n_paths")
        p.add_argument("--steps", type=int, help="override lattice.n_steps")
        p.add_argument("--workers", type=int, help="override simulate.workers")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        RunConfig.model_validate(cfg.model_dump(by_alias=True))
        out = _out_dir(args, args.command)
        if args.command == "value":
            report = cmd_value(cfg)
            _write_json(out / "report.json", report)
            print(report.model_dump_json(indent=2))
        elif args.command == "simulate":
            report, _ = cmd_simulate(cfg, out)
            print(format_table(report))
        elif args.command == "frontier":
            report, _ = cmd_frontier(cfg, out)
            print(report.model_dump_json(indent=2))
        elif args.command == "limit":
            report = cmd_limit(cfg)
            _write_json(out / "report.json", report)
            print(report.model_dump_json(indent=2))
        else:
            report = cmd_converge(cfg, out)
            print(report.model_dump_json(indent=2))
    except (ConfigError, ModelError, cf.DivergenceError, sim.SimulationError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (lt.LatticeError, lt.NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


if __name__ == "__main__":
    sys.exit(main())

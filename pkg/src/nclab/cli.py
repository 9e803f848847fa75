"""Command line: ``nclab {analyze,simulate,compare,sweep,calibrate} CONFIG``.

Exit codes: 0 success, 1 config error, 2 model-domain/stability error,
3 solver non-convergence, 4 simulation failure.  Table commands keep going
past failed rows and exit with the code of the first failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .analytic import analyze
from .collision import INTERFERENCE_MODES
from .errors import ConfigError, NCLabError
from .harness import (FORMATS, calibrate_delta, format_rows, load_config, make_params,
                      resolve_deltas, run_compare, run_sweep)
from .sim import replication_seed, run_replications, simulate


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="YAML experiment config")
    common.add_argument("--format", choices=FORMATS, help="output format (default: from config)")
    common.add_argument("--out", help="write results here instead of stdout")
    g = common.add_argument_group("solver")
    g.add_argument("--damping", type=float)
    g.add_argument("--tolerance", type=float)
    g.add_argument("--max-iterations", type=int)
    g.add_argument("--interference-rate", choices=INTERFERENCE_MODES)
    g = common.add_argument_group("simulation")
    g.add_argument("--horizon", type=float, help="seconds")
    g.add_argument("--warmup", type=float, help="seconds")
    g.add_argument("--seed", type=int, help="master seed")
    g.add_argument("--replications", type=int)
    g.add_argument("--workers", type=int, help="processes for replications")
    g.add_argument("--queue-cap", type=int)
    g.add_argument("--defer-mean", type=float, help="mean re-sense delay after deferring, seconds")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="nclab", description="Throughput of XOR network coding on a "
                                "wireless chain: analysis, simulation, experiment tables.",
                                epilog="exit codes: 0 ok, 1 config, 2 model domain/stability, "
                                       "3 no convergence, 4 simulation failure")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("analyze", parents=[common], help="analytic throughput per scenario and rate")
    s = sub.add_parser("simulate", parents=[common], help="simulated throughput per scenario and rate")
    s.add_argument("--trace", help="write the event trace of replication 0 of every cell here")
    c = sub.add_parser("compare", parents=[common], help="analysis vs simulation table")
    c.add_argument("--no-sim", action="store_true", help="analysis columns only")
    sub.add_parser("sweep", parents=[common], help="sweep one axis from the config's sweep section")
    sub.add_parser("calibrate", parents=[common], help="fit delta to the calibration targets")
    return p


def _apply_overrides(cfg, a):
    solver = cfg.solver
    for name, attr in (("damping", "damping"), ("tolerance", "tolerance"),
                       ("max_iterations", "max_iterations")):
        if getattr(a, name) is not None:
            solver = replace(solver, **{attr: getattr(a, name)})
    opts = cfg.sim.options
    for name, attr in (("horizon", "horizon_s"), ("warmup", "warmup_s"), ("seed", "seed"),
                       ("queue_cap", "queue_cap"), ("defer_mean", "defer_mean_s")):
        if getattr(a, name) is not None:
            opts = replace(opts, **{attr: getattr(a, name)})
    sim = replace(cfg.sim, options=opts)
    if a.replications is not None:
        if a.replications < 1:
            raise ConfigError("--replications must be >= 1")
        sim = replace(sim, replications=a.replications)
    if a.workers is not None:
        sim = replace(sim, workers=max(1, a.workers))
    if getattr(a, "no_sim", False):
        sim = replace(sim, enabled=False)
    cfg = replace(cfg, solver=solver, sim=sim)
    if a.interference_rate:
        cfg = replace(cfg, interference=a.interference_rate)
    if a.format:
        cfg = replace(cfg, output_format=a.format)
    return cfg


def _analyze_rows(cfg):
    rows = []
    deltas = resolve_deltas(cfg)
    for sc in cfg.scenarios:
        for g in cfg.gammas:
            params = make_params(cfg, sc, g, deltas.get(sc.flows, float("nan")))
            row = {"scenario": sc.label(), "step": sc.step, "gamma_1": params.gamma_1,
                   "gamma_k": params.gamma_k, "delta": params.delta}
            try:
                rep = analyze(cfg.topo, sc, params, cfg.solver, cfg.interference)
            except NCLabError as e:
                row.update(status="failed", reason=f"{type(e).__name__}: {e}", exit_code=e.exit_code)
                rows.append(row)
                continue
            row.update(theta=rep.theta, max_rho=float(rep.utilization[1:].max()),
                       iterations=rep.diagnostics.iterations, residual=rep.diagnostics.residual)
            row.update(rep.p.as_dict())
            row.update(status="ok", reason="")
            rows.append(row)
    return rows


def _simulate_rows(cfg, trace_path=None):
    rows = []
    deltas = resolve_deltas(cfg)
    trace = open(trace_path, "w") if trace_path else None
    try:
        for sc in cfg.scenarios:
            for g in cfg.gammas:
                params = make_params(cfg, sc, g, deltas.get(sc.flows, float("nan")))
                row = {"scenario": sc.label(), "step": sc.step, "gamma_1": params.gamma_1,
                       "gamma_k": params.gamma_k, "delta": params.delta}
                try:
                    if trace:
                        trace.write(f"# {sc.label()} gamma={g:g} delta={params.delta:g}\n")
                        seed0 = replication_seed(cfg.sim.options.seed, 0)
                        simulate(cfg.topo, sc, params, replace(cfg.sim.options, seed=seed0), trace)
                    res = run_replications(cfg.topo, sc, params, cfg.sim.options,
                                           cfg.sim.replications, cfg.sim.workers)
                except NCLabError as e:
                    row.update(status="failed", reason=f"{type(e).__name__}: {e}",
                               exit_code=e.exit_code)
                    rows.append(row)
                    continue
                att = sum(c.attempts for c in res.links.values())
                col = sum(c.collisions for c in res.links.values())
                row.update(theta_sim=res.theta, ci_halfwidth=res.ci_halfwidth, stderr=res.stderr,
                           replications=res.replications,
                           collision_ratio=col / att if att else 0.0,
                           coded_tx=res.coded_tx, status="ok", reason="")
                rows.append(row)
    finally:
        if trace:
            trace.close()
    return rows


def _calibrate_rows(cfg):
    if not cfg.calibration:
        raise ConfigError("calibration: section missing or empty")
    rows = []
    for c in cfg.calibration:
        sc = c.scenario()
        row = {"scenario": sc.label(), "gamma": c.gamma, "target": c.target,
               "lo": c.bounds[0], "hi": c.bounds[1]}
        try:
            d = calibrate_delta(cfg.topo, sc, c.gamma, c.target, c.bounds, cfg.mu, cfg.solver,
                                cfg.interference)
            theta = analyze(cfg.topo, sc, make_params(cfg, sc, c.gamma, d), cfg.solver,
                            cfg.interference).theta
            row.update(delta=d, theta=theta, status="ok", reason="")
        except NCLabError as e:
            row.update(delta=None, theta=None, status="failed", reason=f"{type(e).__name__}: {e}",
                       exit_code=e.exit_code)
        rows.append(row)
    return rows


def _exit_code(rows) -> int:
    for r in rows:
        code = r.get("exit_code", 0) if isinstance(r, dict) else getattr(r, "exit_code", 0)
        if code:
            return code
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "analyze":
            rows = _analyze_rows(cfg)
        elif args.command == "simulate":
            rows = _simulate_rows(cfg, args.trace)
        elif args.command == "compare":
            rows = run_compare(cfg)
        elif args.command == "sweep":
            rows = run_sweep(cfg)
        else:
            rows = _calibrate_rows(cfg)
    except NCLabError as e:
        print(f"nclab: error: {e}", file=sys.stderr)
        return e.exit_code

    text = format_rows(rows, cfg.output_format)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    for r in rows:
        status = r.get("status") if isinstance(r, dict) else r.status
        if status != "ok":
            reason = r.get("reason") if isinstance(r, dict) else r.reason
            print(f"nclab: row failed: {reason}", file=sys.stderr)
    return _exit_code(rows)


if __name__ == "__main__":
    sys.exit(main())

"""Experiment configs, delta calibration, analysis-vs-simulation tables, sweeps.

Config files are YAML.  Recognised keys (everything but ``scenarios`` and a
rate grid is optional)::

    topology:    {k: 5}
    params:      {mu: 250, delta: 6.8e-4, gamma: [10, 20]}
    calibration:                      # delta per flow count, overrides params.delta
      - {flows: 1, gamma: 10, target: 9.37, bounds: [0, 0.005]}
    scenarios:
      - {flows: 2, retransmission: true, coding: true, beta: 7, p_mix: 0.5}
    solver:      {damping: 0.5, tolerance: 1e-10, max_iterations: 10000,
                  interference_rate: total}
    sim:         {enabled: true, horizon: 170, warmup: 10, seed: 42,
                  replications: 10, queue_cap: 100000, defer_mean: null, workers: 1}
    sweep:       {axis: delta, values: [0, 1e-4, 1e-3], simulate: false,
                  targets: null}
    output:      {format: table}

``gamma`` is the rate of every active source (gamma_1 = gamma_k for two
flows).  A calibration entry may also carry ``retransmission``/``coding``
flags for its reference scenario; it defaults to the plain scenario.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import yaml

from .analytic import analyze
from .collision import INTERFERENCE_MODES, SolverOptions
from .errors import CalibrationError, ConfigError, NCLabError
from .sim import SimOptions, run_replications
from .topology import ChainTopology, ModelParams, Scenario, build_chain, validate, DEFAULT_MU

log = logging.getLogger(__name__)

DEFAULT_BOUNDS = (0.0, 5e-3)
SWEEP_AXES = ("gamma", "delta", "beta", "p_mix")
FORMATS = ("table", "csv", "json")


@dataclass(frozen=True)
class CalibrationSpec:
    flows: int
    gamma: float
    target: float
    retransmission: bool = False
    coding: bool = False
    bounds: Tuple[float, float] = DEFAULT_BOUNDS

    def scenario(self, template: Optional[Scenario] = None) -> Scenario:
        base = template or Scenario()
        return replace(base, flows=self.flows, retransmission=self.retransmission,
                       coding=self.coding)


@dataclass(frozen=True)
class SimSettings:
    enabled: bool = True
    replications: int = 10
    workers: int = 1
    options: SimOptions = SimOptions()


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: Tuple[float, ...]
    simulate: bool = False
    targets: Optional[Tuple[float, ...]] = None


@dataclass(frozen=True)
class ExperimentConfig:
    k: int = 5
    scenarios: Tuple[Scenario, ...] = ()
    gammas: Tuple[float, ...] = (10.0,)
    delta: Optional[float] = None
    mu: float = DEFAULT_MU
    calibration: Tuple[CalibrationSpec, ...] = ()
    solver: SolverOptions = SolverOptions()
    interference: str = "total"
    sim: SimSettings = SimSettings()
    sweep: Optional[SweepSpec] = None
    output_format: str = "table"

    @property
    def topo(self) -> ChainTopology:
        return build_chain(self.k)


# -- config parsing ---------------------------------------------------------

def _locate(text: str, key: str) -> str:
    for n, line in enumerate(text.splitlines(), 1):
        if line.strip().startswith(f"{key}:") or line.strip().startswith(f"- {key}:") \
                or f" {key}:" in line or f"{{{key}:" in line:
            return f"line {n}"
    return "unknown line"


class _Fields:
    """Pulls typed values out of a mapping, reporting the dotted path on failure."""

    def __init__(self, data, path, text=""):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
        self.data = data
        self.path = path
        self.text = text
        self.used = set()

    def _where(self, key):
        return f"{self.path + '.' if self.path else ''}{key} ({_locate(self.text, key)})"

    def get(self, key, kind, default=None):
        self.used.add(key)
        if key not in self.data or self.data[key] is None:
            return default
        v = self.data[key]
        try:
            if kind is bool:
                if not isinstance(v, bool):
                    raise TypeError
                return v
            if kind is int:
                if isinstance(v, bool) or int(v) != v:
                    raise TypeError
                return int(v)
            if kind is float:
                if isinstance(v, bool):
                    raise TypeError
                return float(v)
            if kind is str:
                if not isinstance(v, str):
                    raise TypeError
                return v
            if kind is list:
                if isinstance(v, (int, float)) and not isinstance(v, bool):
                    return [float(v)]
                if not isinstance(v, list):
                    raise TypeError
                return [float(x) for x in v]
        except (TypeError, ValueError):
            raise ConfigError(f"{self._where(key)}: expected {kind.__name__}, got {v!r}") from None
        raise AssertionError(kind)

    def finish(self):
        extra = set(self.data) - self.used
        if extra:
            key = sorted(extra)[0]
            raise ConfigError(f"{self._where(key)}: unknown key")


def _wrap(where: str, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ConfigError as e:
        raise ConfigError(f"{where}: {e}") from None


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"config is not valid YAML ({where}): {getattr(e, 'problem', e)}") from None
    root = _Fields(data, "", text)

    topo = _Fields(root.data.get("topology"), "topology", text)
    root.used.add("topology")
    k = topo.get("k", int, 5)
    topo.finish()
    _wrap("topology.k", build_chain, k)

    params = _Fields(root.data.get("params"), "params", text)
    root.used.add("params")
    mu = params.get("mu", float, DEFAULT_MU)
    delta = params.get("delta", float, None)
    gammas = tuple(params.get("gamma", list, [10.0]))
    params.finish()
    if not gammas:
        raise ConfigError(f"params.gamma ({_locate(text, 'gamma')}): grid must not be empty")

    scenarios = []
    raw = root.data.get("scenarios", [])
    root.used.add("scenarios")
    if raw is None:
        raw = []
    if not isinstance(raw, list):
        raise ConfigError(f"scenarios ({_locate(text, 'scenarios')}): expected a list")
    for n, item in enumerate(raw):
        f = _Fields(item, f"scenarios[{n}]", text)
        kw = dict(flows=f.get("flows", int, 1),
                  retransmission=f.get("retransmission", bool, False),
                  coding=f.get("coding", bool, False))
        beta = f.get("beta", int, None)
        pmix = f.get("p_mix", float, None)
        f.finish()
        if beta is not None:
            kw["beta"] = beta
        if pmix is not None:
            kw["p_mix"] = pmix
        scenarios.append(_wrap(f"scenarios[{n}]", Scenario, **kw))

    cal = []
    raw = root.data.get("calibration", []) or []
    root.used.add("calibration")
    if not isinstance(raw, list):
        raise ConfigError(f"calibration ({_locate(text, 'calibration')}): expected a list")
    for n, item in enumerate(raw):
        f = _Fields(item, f"calibration[{n}]", text)
        bounds = f.get("bounds", list, list(DEFAULT_BOUNDS))
        spec = CalibrationSpec(flows=f.get("flows", int, 1), gamma=f.get("gamma", float, 10.0),
                               target=f.get("target", float, None),
                               retransmission=f.get("retransmission", bool, False),
                               coding=f.get("coding", bool, False))
        f.finish()
        if spec.target is None:
            raise ConfigError(f"calibration[{n}].target ({_locate(text, 'target')}): required")
        if len(bounds) != 2 or not (0 <= bounds[0] < bounds[1]):
            raise ConfigError(f"calibration[{n}].bounds: need [lo, hi] with 0 <= lo < hi")
        cal.append(replace(spec, bounds=(bounds[0], bounds[1])))
        _wrap(f"calibration[{n}]", spec.scenario)

    s = _Fields(root.data.get("solver"), "solver", text)
    root.used.add("solver")
    solver = _wrap("solver", SolverOptions,
                   damping=s.get("damping", float, 0.5),
                   tolerance=s.get("tolerance", float, 1e-10),
                   max_iterations=s.get("max_iterations", int, 10_000))
    interference = s.get("interference_rate", str, "total")
    s.finish()
    if interference not in INTERFERENCE_MODES:
        raise ConfigError(f"solver.interference_rate ({_locate(text, 'interference_rate')}): "
                          f"must be one of {INTERFERENCE_MODES}")

    s = _Fields(root.data.get("sim"), "sim", text)
    root.used.add("sim")
    sim_opts = _wrap("sim", SimOptions,
                     horizon_s=s.get("horizon", float, 170.0),
                     warmup_s=s.get("warmup", float, 10.0),
                     seed=s.get("seed", int, 42),
                     queue_cap=s.get("queue_cap", int, 100_000),
                     defer_mean_s=s.get("defer_mean", float, None))
    sim = SimSettings(enabled=s.get("enabled", bool, True),
                      replications=s.get("replications", int, 10),
                      workers=s.get("workers", int, 1),
                      options=sim_opts)
    s.finish()
    if sim.replications < 1:
        raise ConfigError(f"sim.replications ({_locate(text, 'replications')}): must be >= 1")

    sweep = None
    if root.data.get("sweep") is not None:
        s = _Fields(root.data.get("sweep"), "sweep", text)
        axis = s.get("axis", str, None)
        values = s.get("values", list, [])
        targets = s.get("targets", list, None)
        sweep = SweepSpec(axis=axis, values=tuple(values), simulate=s.get("simulate", bool, False),
                          targets=tuple(targets) if targets is not None else None)
        s.finish()
        if axis not in SWEEP_AXES:
            raise ConfigError(f"sweep.axis ({_locate(text, 'axis')}): must be one of {SWEEP_AXES}")
        if not values:
            raise ConfigError(f"sweep.values ({_locate(text, 'values')}): must not be empty")
        if targets is not None and (axis != "gamma" or len(targets) != len(values)):
            raise ConfigError("sweep.targets: only for a gamma sweep, one target per value")
    root.used.add("sweep")

    o = _Fields(root.data.get("output"), "output", text)
    root.used.add("output")
    fmt = o.get("format", str, "table")
    o.finish()
    if fmt not in FORMATS:
        raise ConfigError(f"output.format ({_locate(text, 'format')}): must be one of {FORMATS}")
    root.finish()

    cfg = ExperimentConfig(k=k, scenarios=tuple(scenarios), gammas=gammas, delta=delta, mu=mu,
                           calibration=tuple(cal), solver=solver, interference=interference,
                           sim=sim, sweep=sweep, output_format=fmt)
    per_point = sweep is not None and (sweep.axis == "delta" or sweep.targets is not None)
    for sc in cfg.scenarios:
        if delta is None and not per_point and not any(c.flows == sc.flows for c in cfg.calibration):
            raise ConfigError(f"params.delta: required for {sc.label()} (no calibration entry "
                              f"for flows={sc.flows})")
        for g in gammas:
            _wrap(f"scenario {sc.label()}, gamma={g:g}", validate, sc, make_params(cfg, sc, g, 0.0),
                  cfg.topo)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    return parse_config(text)


def make_params(cfg: ExperimentConfig, scenario: Scenario, gamma: float, delta: float) -> ModelParams:
    return ModelParams(delta=delta, mu=cfg.mu, gamma_1=gamma,
                       gamma_k=gamma if scenario.flows == 2 else 0.0)


# -- calibration ------------------------------------------------------------

def calibrate_delta(topo: ChainTopology, scenario: Scenario, gamma: float, target_theta: float,
                    bounds: Tuple[float, float] = DEFAULT_BOUNDS, mu: float = DEFAULT_MU,
                    opts: SolverOptions = SolverOptions(), interference: str = "total",
                    rel_tol: float = 1e-3, max_bisections: int = 200) -> float:
    """Bisect delta until the analytic throughput is within rel_tol of target_theta.

    Throughput falls with delta.  Points where the model breaks down (window
    saturation, unstable queues) count as 'delta too large'.
    """
    lo, hi = float(bounds[0]), float(bounds[1])
    if not (0 <= lo < hi):
        raise CalibrationError(f"bad bracket {bounds}")
    gk = gamma if scenario.flows == 2 else 0.0

    def theta(d):
        try:
            return analyze(topo, scenario, ModelParams(d, mu, gamma, gk), opts, interference).theta
        except NCLabError:
            return -math.inf

    tol = rel_tol * target_theta
    t_lo = theta(lo)
    if abs(t_lo - target_theta) < tol:
        return lo
    if t_lo < target_theta:
        raise CalibrationError(f"target {target_theta:g} unreachable: theta({lo:g}) = {t_lo:g}")
    t_hi = theta(hi)
    if abs(t_hi - target_theta) < tol:
        return hi
    if t_hi > target_theta:
        raise CalibrationError(f"target {target_theta:g} below bracket: theta({hi:g}) = {t_hi:g}")
    for _ in range(max_bisections):
        mid = 0.5 * (lo + hi)
        t_mid = theta(mid)
        if abs(t_mid - target_theta) < tol:
            return mid
        if t_mid > target_theta:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(f"no convergence after {max_bisections} bisections")


def resolve_deltas(cfg: ExperimentConfig) -> Dict[int, float]:
    """delta per flow count: calibrated where the config asks for it, else params.delta."""
    out = {}
    for c in cfg.calibration:
        out[c.flows] = calibrate_delta(cfg.topo, c.scenario(), c.gamma, c.target, c.bounds, cfg.mu,
                                       cfg.solver, cfg.interference)
    for f in (1, 2):
        if f not in out and cfg.delta is not None:
            out[f] = cfg.delta
    return out


# -- comparison -------------------------------------------------------------

@dataclass
class ComparisonRow:
    scenario: str
    step: int
    gamma_1: float
    gamma_k: float
    delta: float
    theta: Optional[float] = None
    theta_sim: Optional[float] = None
    ci_halfwidth: Optional[float] = None
    stderr: Optional[float] = None
    replications: int = 0
    rel_error: Optional[float] = None
    in_ci: Optional[bool] = None
    status: str = "ok"
    reason: str = ""
    exit_code: int = 0


def _fail(row, exc):
    row.status = "failed"
    row.reason = f"{type(exc).__name__}: {exc}"
    row.exit_code = getattr(exc, "exit_code", 2)
    return row


def compare_cell(cfg: ExperimentConfig, scenario: Scenario, gamma: float, delta: float,
                 simulate: bool = True) -> ComparisonRow:
    params = make_params(cfg, scenario, gamma, delta)
    row = ComparisonRow(scenario.label(), scenario.step, params.gamma_1, params.gamma_k, delta)
    try:
        row.theta = analyze(cfg.topo, scenario, params, cfg.solver, cfg.interference).theta
    except NCLabError as e:
        return _fail(row, e)
    if not simulate:
        return row
    try:
        res = run_replications(cfg.topo, scenario, params, cfg.sim.options, cfg.sim.replications,
                               cfg.sim.workers)
    except NCLabError as e:
        return _fail(row, e)
    row.theta_sim = res.theta
    row.ci_halfwidth = res.ci_halfwidth
    row.stderr = res.stderr
    row.replications = res.replications
    row.rel_error = abs(res.theta - row.theta) / row.theta if row.theta > 0 else math.inf
    row.in_ci = abs(res.theta - row.theta) <= res.ci_halfwidth
    return row


def run_compare(cfg: ExperimentConfig) -> List[ComparisonRow]:
    """One row per (scenario, gamma), in config order; failures are kept as rows."""
    if not cfg.scenarios:
        return []
    try:
        deltas = resolve_deltas(cfg)
    except NCLabError as e:
        deltas = {}
        cal_error = e
    else:
        cal_error = None
    rows = []
    for sc in cfg.scenarios:
        for g in cfg.gammas:
            if sc.flows not in deltas:
                row = ComparisonRow(sc.label(), sc.step, g, g if sc.flows == 2 else 0.0, math.nan)
                rows.append(_fail(row, cal_error or ConfigError("no delta for this flow count")))
                continue
            rows.append(compare_cell(cfg, sc, g, deltas[sc.flows], cfg.sim.enabled))
    return rows


# -- sweeps -----------------------------------------------------------------

@dataclass
class SweepRow:
    scenario: str
    axis: str
    value: float
    gamma: float
    delta: float
    beta: int
    p_mix: float
    theta: Optional[float] = None
    theta_sim: Optional[float] = None
    ci_halfwidth: Optional[float] = None
    alarm: bool = False
    status: str = "ok"
    reason: str = ""
    exit_code: int = 0


def run_sweep(cfg: ExperimentConfig) -> List[SweepRow]:
    """Analytic (and optionally simulated) throughput along one axis.

    Along the delta axis any rise in theta is flagged in ``alarm``; the model
    says throughput can only fall as the vulnerable window widens.
    """
    if cfg.sweep is None:
        raise ConfigError("sweep: section missing")
    sw = cfg.sweep
    deltas = {}
    if sw.axis != "delta" and sw.targets is None:
        deltas = resolve_deltas(cfg)
    rows = []
    for sc in cfg.scenarios:
        prev = None
        for n, v in enumerate(sw.values):
            scenario, gamma = sc, cfg.gammas[0]
            delta = deltas.get(sc.flows, cfg.delta)
            try:
                if sw.axis == "gamma":
                    gamma = v
                elif sw.axis == "delta":
                    delta = v
                elif sw.axis == "beta":
                    if int(v) != v:
                        raise ConfigError(f"beta sweep value {v!r} is not an integer")
                    scenario = replace(sc, beta=int(v))
                else:
                    scenario = replace(sc, p_mix=v)
            except NCLabError as e:
                rows.append(_fail(SweepRow(sc.label(), sw.axis, v, gamma, math.nan, sc.beta,
                                           sc.p_mix), e))
                continue
            row = SweepRow(scenario.label(), sw.axis, v, gamma, math.nan, scenario.beta,
                           scenario.p_mix)
            try:
                if sw.targets is not None:
                    delta = calibrate_delta(cfg.topo, scenario, gamma, sw.targets[n],
                                            DEFAULT_BOUNDS, cfg.mu, cfg.solver, cfg.interference)
                if delta is None:
                    raise ConfigError("params.delta: required for this sweep")
                row.delta = delta
                cell = compare_cell(cfg, scenario, gamma, delta, sw.simulate and cfg.sim.enabled)
            except NCLabError as e:
                rows.append(_fail(row, e))
                continue
            row.theta, row.theta_sim, row.ci_halfwidth = cell.theta, cell.theta_sim, cell.ci_halfwidth
            row.status, row.reason, row.exit_code = cell.status, cell.reason, cell.exit_code
            if sw.axis == "delta" and row.theta is not None and prev is not None \
                    and row.theta > prev * (1 + 1e-12):
                row.alarm = True
                log.warning("theta rose along delta axis: %s at delta=%g", scenario.label(), v)
            if row.theta is not None:
                prev = row.theta
            rows.append(row)
    return rows


# -- output -----------------------------------------------------------------

def _rows_as_dicts(rows) -> List[Dict[str, Any]]:
    out = []
    for r in rows:
        d = dict(r) if isinstance(r, dict) else asdict(r)
        d.pop("exit_code", None)
        out.append(d)
    return out


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if v != 0 and (abs(v) < 1e-3 or abs(v) >= 1e6):
            return f"{v:.4e}"
        return f"{v:.4f}"
    return str(v)


def format_rows(rows, fmt: str = "table") -> str:
    dicts = _rows_as_dicts(rows)
    if fmt == "json":
        return json.dumps(dicts, indent=2, sort_keys=False, allow_nan=True) + "\n"
    cols: List[str] = []
    for d in dicts:
        for key in d:
            if key not in cols:
                cols.append(key)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for d in dicts:
            w.writerow({c: ("" if d.get(c) is None else repr(d[c]) if isinstance(d.get(c), float)
                            else d.get(c)) for c in cols})
        return buf.getvalue()
    if fmt != "table":
        raise ConfigError(f"unknown output format {fmt!r}")
    if not dicts:
        return "(no rows)\n"
    cells = [[_fmt(d.get(c)) for c in cols] for d in dicts]
    widths = [max(len(c), *(len(r[n]) for r in cells)) for n, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for r in cells:
        lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"

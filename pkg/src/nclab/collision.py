"""Per-link success probabilities under the 2*delta vulnerable window.

A transmission i -> j survives when neither j nor any other neighbour of j
starts transmitting within delta of it.  With Poisson transmitters the chance
that node x breaks the window is 2*delta*lambda_x, so

    p_ij = prod_x (1 - 2*delta*lambda_x)

over j and the neighbours of j other than i.  The lambdas depend on the p's
(lost packets never reach the next hop, retransmissions add load), so the
link probabilities and the rate ledger are solved together by damped
fixed-point iteration.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, FrozenSet, Iterable, Mapping, Tuple

from .errors import ConfigError, ModelDomainError, TopologyError
from .topology import ChainTopology, ModelParams, Scenario

log = logging.getLogger(__name__)

Link = Tuple[int, int]

# rate selectors understood by RateLedger.rate()
TOTAL = "total"
FLOW1 = "flow1"
FLOW2 = "flow2"

INTERFERENCE_MODES = ("total", "native_only")


@dataclass(frozen=True)
class LinkProbMap:
    p: Dict[Link, float]

    def __post_init__(self):
        for link, v in self.p.items():
            if not (0.0 < v <= 1.0):
                raise ModelDomainError(f"p{link} = {v!r} is outside (0, 1]")

    def __getitem__(self, link: Link) -> float:
        return self.p[link]

    def __contains__(self, link) -> bool:
        return link in self.p

    def __iter__(self):
        return iter(self.p)

    def __len__(self) -> int:
        return len(self.p)

    def items(self):
        return self.p.items()

    def as_dict(self) -> Dict[str, float]:
        return {f"p{i},{j}": v for (i, j), v in sorted(self.p.items())}


@dataclass(frozen=True)
class SolverOptions:
    damping: float = 0.5
    tolerance: float = 1e-10
    max_iterations: int = 10_000

    def __post_init__(self):
        if not (0.0 < self.damping <= 1.0):
            raise ConfigError(f"damping must be in (0, 1], got {self.damping}")
        if not self.tolerance > 0:
            raise ConfigError(f"tolerance must be > 0, got {self.tolerance}")
        if isinstance(self.max_iterations, bool) or not isinstance(self.max_iterations, int) \
                or self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be an integer >= 1, got {self.max_iterations}")


@dataclass(frozen=True)
class SolverDiagnostics:
    iterations: int
    residual: float
    converged: bool


def active_links(topo: ChainTopology, scenario: Scenario) -> list:
    links = topo.forward_links()
    if scenario.flows == 2:
        links += topo.backward_links()
    return links


def _selector(topo: ChainTopology, x: int, scenario: Scenario):
    """Which of node x's rates loads the channel, or None if x never transmits."""
    if x == 1:
        return FLOW1
    if x == topo.k:
        return FLOW2 if scenario.flows == 2 else None
    return TOTAL


def interferer_set(topo: ChainTopology, i: int, j: int, scenario: Scenario) -> FrozenSet[Tuple[int, str]]:
    if not topo.adjacent(i, j):
        raise TopologyError(f"N{i} and N{j} are not adjacent in a {topo.k}-node chain")
    out = set()
    for x in (j,) + tuple(n for n in topo.neighbors[j] if n != i):
        sel = _selector(topo, x, scenario)
        if sel is not None:
            out.add((x, sel))
    return frozenset(out)


def window_product(rates: Iterable[float], delta: float) -> float:
    p = 1.0
    for lam in rates:
        if lam < 0:
            raise ModelDomainError(f"negative transmit rate {lam!r}")
        w = 2.0 * delta * lam
        if w >= 1.0:
            raise ModelDomainError(
                f"collision window saturated: 2*delta*lambda = {w:.4g} >= 1 (lambda={lam:.4g})")
        p *= 1.0 - w
    return p


def success_probability(interferers, delta: float, ledger, interference: str = "total") -> float:
    return window_product((ledger.rate(x, sel, interference) for x, sel in interferers), delta)


def solve_joint(
    topo: ChainTopology,
    scenario: Scenario,
    params: ModelParams,
    rate_model: Callable[[Mapping[Link, float]], object],
    opts: SolverOptions = SolverOptions(),
    interference: str = "total",
):
    """Return ``(LinkProbMap, ledger, SolverDiagnostics)`` at the joint fixed point.

    Starts from p = 1 on every active link and alternates
    ``ledger = rate_model(p)`` with ``p <- (1 - d) p + d F(ledger)``.  The
    residual is ``max |p - F(rate_model(p))|`` at the returned p, combined
    with any residual the rate model itself reports (its ``residual``
    attribute) so both the p and the lambda sides are covered.
    """
    if interference not in INTERFERENCE_MODES:
        raise ConfigError(f"interference_rate must be one of {INTERFERENCE_MODES}")
    links = active_links(topo, scenario)
    isets = {l: interferer_set(topo, *l, scenario) for l in links}
    d = opts.damping
    p = {l: 1.0 for l in links}

    resid = float("inf")
    for it in range(1, opts.max_iterations + 1):
        ledger = rate_model(p)
        f = {l: success_probability(isets[l], params.delta, ledger, interference) for l in links}
        resid = max(max(abs(p[l] - f[l]) for l in links), getattr(ledger, "residual", 0.0))
        if resid <= opts.tolerance:
            return LinkProbMap(dict(p)), ledger, SolverDiagnostics(it, resid, True)
        p = {l: (1.0 - d) * p[l] + d * f[l] for l in links}

    ledger = rate_model(p)
    f = {l: success_probability(isets[l], params.delta, ledger, interference) for l in links}
    resid = max(abs(p[l] - f[l]) for l in links)
    log.warning("solver stopped after %d iterations, residual %.3g", opts.max_iterations, resid)
    return LinkProbMap(dict(p)), ledger, SolverDiagnostics(opts.max_iterations, resid, False)


def system_residual(topo, scenario, params, p: Mapping[Link, float], ledger,
                    interference: str = "total") -> float:
    """Max-norm residual of the link-probability system at (p, ledger)."""
    return max(
        abs(p[l] - success_probability(interferer_set(topo, *l, scenario), params.delta, ledger,
                                       interference))
        for l in active_links(topo, scenario))

"""Rate propagation and throughput for the six chain scenarios.

Flow 1 travels N1 -> Nk, flow 2 travels Nk -> N1.  Every array in a
:class:`RateLedger` has length ``k + 1`` and is indexed by 1-based node
number; index 0 is padding.  Per-flow arrays have a leading flow axis of
size 3 (flow 1 and flow 2 at indices 1 and 2).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import partial
from typing import Dict, List, Mapping, Optional

import numpy as np

from .collision import (FLOW1, FLOW2, TOTAL, LinkProbMap, SolverDiagnostics, SolverOptions,
                        solve_joint)
from .errors import ConvergenceError, ModelDomainError, ScenarioError, StabilityError
from .topology import ChainTopology, ModelParams, Scenario

log = logging.getLogger(__name__)


@dataclass
class RateLedger:
    k: int
    coding: bool
    flow: np.ndarray          # lambda_i^(j): decoder output / arrival rate of flow j
    native_in: np.ndarray     # lambda_in,i^n(j)
    coded_in: np.ndarray      # lambda_in,i^c(j)
    native_queue: np.ndarray  # lambda_i^n(j)
    native_out: np.ndarray    # lambda_out,i^n(j)
    coded_queue: np.ndarray   # lambda_i^c
    coded_out: np.ndarray     # lambda_out,i^c
    total: np.ndarray         # lambda_i
    residual: float = 0.0     # last sweep change (coding ledgers only)
    sweeps: int = 0

    @classmethod
    def empty(cls, k: int, coding: bool) -> "RateLedger":
        z2 = lambda: np.zeros((3, k + 1))
        z1 = lambda: np.zeros(k + 1)
        return cls(k, coding, z2(), z2(), z2(), z2(), z2(), z1(), z1(), z1())

    def transmit(self, node: int, interference: str = "total") -> float:
        r = self.native_out[1, node] + self.native_out[2, node]
        if interference == "total":
            r += self.coded_out[node]
        return float(r)

    def rate(self, node: int, selector: str, interference: str = "total") -> float:
        if selector == TOTAL:
            return self.transmit(node, interference)
        if selector == FLOW1:
            return float(self.native_out[1, node])
        if selector == FLOW2:
            return float(self.native_out[2, node])
        raise KeyError(selector)

    def as_dict(self) -> Dict[str, List[float]]:
        def row(a):
            return [float(x) for x in a[1:]]
        out = {"lambda": row(self.total), "coded_queue": row(self.coded_queue),
               "coded_out": row(self.coded_out)}
        for j in (1, 2):
            out[f"flow{j}"] = row(self.flow[j])
            out[f"native_in{j}"] = row(self.native_in[j])
            out[f"coded_in{j}"] = row(self.coded_in[j])
            out[f"native_queue{j}"] = row(self.native_queue[j])
            out[f"native_out{j}"] = row(self.native_out[j])
        return out


def _p(p: Mapping, i: int, j: int) -> float:
    return float(p[(i, j)])


def _divide(num: float, p: float, link) -> float:
    if p <= 0.0:
        raise ModelDomainError(f"success probability on link {link} is zero; "
                               "retransmission load is unbounded")
    return num / p


def rates_no_coding(topo: ChainTopology, scenario: Scenario, p: Mapping, params: ModelParams) -> RateLedger:
    if scenario.coding:
        raise ScenarioError("rates_no_coding called on a coding scenario")
    k = topo.k
    led = RateLedger.empty(k, coding=False)
    lam1 = led.flow[1]
    lam2 = led.flow[2]
    retx = scenario.retransmission

    # flow 1, N1 -> Nk.  With retransmission lambda_i = in_i + lambda_i (1 - p_i,i+1)
    # is solved as lambda_i = in_i / p_i,i+1.
    for i in range(1, k + 1):
        arriving = params.gamma_1 if i == 1 else lam1[i - 1] * _p(p, i - 1, i)
        led.native_in[1, i] = arriving
        lam1[i] = _divide(arriving, _p(p, i, i + 1), (i, i + 1)) if retx and i < k else arriving

    if scenario.flows == 2:
        for i in range(k, 0, -1):
            arriving = params.gamma_k if i == k else lam2[i + 1] * _p(p, i + 1, i)
            led.native_in[2, i] = arriving
            lam2[i] = _divide(arriving, _p(p, i, i - 1), (i, i - 1)) if retx and i > 1 else arriving

    led.native_queue[:] = led.flow
    # destinations absorb their flow: nothing of it is queued or sent on
    led.native_queue[1, k] = 0.0
    led.native_queue[2, 1] = 0.0
    led.native_out[:] = led.native_queue
    led.total[:] = lam1 + lam2
    return led


def _clamp(x: float, tol: float, what: str) -> float:
    if x >= 0.0:
        return x
    if -x <= tol:
        log.warning("clamping %s = %.3g to zero", what, x)
        return 0.0
    raise ModelDomainError(f"negative rate {what} = {x!r}")


def rates_coding(topo: ChainTopology, scenario: Scenario, p: Mapping, params: ModelParams,
                 tol: float = 1e-12, max_sweeps: int = 10_000) -> RateLedger:
    """Two-flow ledger with XOR coding at the relays N2..N(k-1).

    Decoder output at node i, flow 1 (flow 2 mirrors it):

    * no retransmission: ``in_n + in_c * p[i+1,i]``
    * retransmission: ``(in_n + in_c * (1 - (1 - p[i+1,i])**beta)) / p[i,i+1]``

    where the factor on ``in_c`` is the chance that the partner packet of the
    opposite flow was received.  At a flow's destination the coded input
    counts in full.  The relays split each decoded flow between the coded
    queue, ``min(lam1, lam2) * p_mix``, and the native queue.  Because flow 1
    depends on coded output produced by flow 2 downstream and vice versa, the
    ledger is found by alternating forward/backward sweeps.
    """
    if not scenario.coding or scenario.flows != 2:
        raise ScenarioError("rates_coding needs a two-flow coding scenario")
    k = topo.k
    retx = scenario.retransmission
    beta = scenario.beta
    pmix = scenario.p_mix
    g1, gk = params.gamma_1, params.gamma_k

    led = RateLedger.empty(k, coding=True)
    n_in, c_in = led.native_in, led.coded_in
    lam = led.flow
    nq, cq = led.native_queue, led.coded_queue

    def decode_factor(q: float) -> float:
        return 1.0 - (1.0 - q) ** beta if retx else q

    def update(i: int) -> float:
        # Native / coded inputs.  Coded input for flow 1 is zero at N1, N2 and
        # for flow 2 at N(k-1), Nk; the source nodes never code.
        n_in[1, i] = g1 if i == 1 else nq[1, i - 1] * _p(p, i - 1, i)
        n_in[2, i] = gk if i == k else nq[2, i + 1] * _p(p, i + 1, i)
        c_in[1, i] = cq[i - 1] * _p(p, i - 1, i) if i > 2 else 0.0
        c_in[2, i] = cq[i + 1] * _p(p, i + 1, i) if i < k - 1 else 0.0

        if i < k:
            l1 = n_in[1, i] + c_in[1, i] * decode_factor(_p(p, i + 1, i))
            if retx:
                l1 = _divide(l1, _p(p, i, i + 1), (i, i + 1))
        else:
            l1 = n_in[1, i] + c_in[1, i]
        if i > 1:
            l2 = n_in[2, i] + c_in[2, i] * decode_factor(_p(p, i - 1, i))
            if retx:
                l2 = _divide(l2, _p(p, i, i - 1), (i, i - 1))
        else:
            l2 = n_in[2, i] + c_in[2, i]

        if i == 1:
            n1, n2, c = l1, 0.0, 0.0
        elif i == k:
            n1, n2, c = 0.0, l2, 0.0
        else:
            c = min(l1, l2) * pmix
            n1 = _clamp(l1 - c, tol, f"lambda_{i}^n(1)")
            n2 = _clamp(l2 - c, tol, f"lambda_{i}^n(2)")

        change = max(abs(l1 - lam[1, i]), abs(l2 - lam[2, i]), abs(c - cq[i]),
                     abs(n1 - nq[1, i]), abs(n2 - nq[2, i]))
        lam[1, i], lam[2, i] = l1, l2
        nq[1, i], nq[2, i], cq[i] = n1, n2, c
        return change

    change = float("inf")
    sweeps = 0
    while change > tol:
        if sweeps >= max_sweeps:
            raise ConvergenceError(f"coding rate sweep did not settle after {max_sweeps} sweeps "
                                   f"(last change {change:.3g})")
        change = 0.0
        order = range(1, k + 1) if sweeps % 2 == 0 else range(k, 0, -1)
        for i in order:
            change = max(change, update(i))
        sweeps += 1

    # stable queues: departures equal arrivals
    led.native_out[:] = nq
    led.coded_out[:] = cq
    led.total[:] = nq[1] + nq[2] + cq
    led.residual = change
    led.sweeps = sweeps
    return led


def rate_model_for(topo: ChainTopology, scenario: Scenario, params: ModelParams, tol: float = 1e-12):
    if scenario.coding:
        return partial(_coding_model, topo, scenario, params, tol)
    return partial(_plain_model, topo, scenario, params)


def _plain_model(topo, scenario, params, p):
    return rates_no_coding(topo, scenario, p, params)


def _coding_model(topo, scenario, params, tol, p):
    return rates_coding(topo, scenario, p, params, tol=tol)


def throughput(ledger: RateLedger, scenario: Scenario) -> float:
    k = ledger.k
    if scenario.flows == 1:
        return float(ledger.flow[1, k])
    return float(ledger.flow[2, 1] + ledger.flow[1, k])


@dataclass
class ThroughputReport:
    theta: float
    utilization: np.ndarray  # rho_i = lambda_i / mu, 1-based
    p: LinkProbMap
    ledger: RateLedger
    diagnostics: SolverDiagnostics
    notes: List[str] = field(default_factory=list)

    def rho(self, node: int) -> float:
        return float(self.utilization[node])


def analyze(topo: ChainTopology, scenario: Scenario, params: ModelParams,
            opts: SolverOptions = SolverOptions(), interference: str = "total",
            check_stability: bool = True) -> ThroughputReport:
    model = rate_model_for(topo, scenario, params, tol=min(opts.tolerance, 1e-12))
    p, ledger, diag = solve_joint(topo, scenario, params, model, opts, interference)
    if not diag.converged:
        raise ConvergenceError(
            f"joint solve did not converge in {diag.iterations} iterations "
            f"(residual {diag.residual:.3g})", diag)
    util = ledger.total / params.mu
    util[0] = 0.0
    if check_stability:
        for i in topo.nodes:
            if util[i] >= 1.0:
                raise StabilityError(i, float(util[i]))
    notes = []
    if scenario.retransmission:
        notes.append("retransmission treated as unlimited in the analysis; "
                     f"the simulator drops after beta={scenario.beta} attempts")
    return ThroughputReport(throughput(ledger, scenario), util, p, ledger, diag, notes)

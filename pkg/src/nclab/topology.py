"""Chain topology, scenario taxonomy and model parameters.

Nodes are 1-based (N1..Nk) everywhere in the package; link maps and rate
ledgers are indexed the same way.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Tuple

from .errors import ConfigError, ScenarioError, TopologyError

LINK_RATE_BPS = 2e6
DATAGRAM_BYTES = 1000
DEFAULT_MU = LINK_RATE_BPS / (DATAGRAM_BYTES * 8)  # 250 packets/s
DEFAULT_BETA = 7
DEFAULT_P_MIX = 0.5

# (flows, retransmission, coding) -> model step
_STEPS = {
    (1, False, False): 1,
    (2, False, False): 2,
    (1, True, False): 3,
    (2, True, False): 4,
    (2, False, True): 5,
    (2, True, True): 6,
}


@dataclass(frozen=True)
class ChainTopology:
    k: int
    neighbors: Dict[int, Tuple[int, ...]] = field(compare=False, repr=False)

    @property
    def nodes(self) -> range:
        return range(1, self.k + 1)

    def adjacent(self, i: int, j: int) -> bool:
        return 1 <= i <= self.k and 1 <= j <= self.k and abs(i - j) == 1

    def forward_links(self):
        return [(i, i + 1) for i in range(1, self.k)]

    def backward_links(self):
        return [(i + 1, i) for i in range(1, self.k)]


def build_chain(k: int) -> ChainTopology:
    if isinstance(k, bool) or not isinstance(k, int):
        raise TopologyError(f"node count must be an integer, got {k!r}")
    if k < 3:
        raise TopologyError(f"a chain needs at least 3 nodes, got k={k}")
    nbrs = {i: tuple(j for j in (i - 1, i + 1) if 1 <= j <= k) for i in range(1, k + 1)}
    return ChainTopology(k=k, neighbors=nbrs)


@dataclass(frozen=True)
class Scenario:
    flows: int = 1
    retransmission: bool = False
    coding: bool = False
    beta: int = DEFAULT_BETA
    p_mix: float = DEFAULT_P_MIX

    def __post_init__(self):
        if self.flows not in (1, 2):
            raise ScenarioError(f"flows must be 1 or 2, got {self.flows!r}")
        if self.coding and self.flows != 2:
            raise ScenarioError("coding requires two opposing flows")
        if isinstance(self.beta, bool) or not isinstance(self.beta, int) or self.beta < 1:
            raise ScenarioError(f"beta must be an integer >= 1, got {self.beta!r}")
        if not (0.0 <= self.p_mix <= 1.0):
            raise ScenarioError(f"p_mix must lie in [0, 1], got {self.p_mix!r}")

    @property
    def step(self) -> int:
        return _STEPS[(self.flows, bool(self.retransmission), bool(self.coding))]

    @property
    def max_attempts(self) -> int:
        """Transmissions allowed per packet; a single shot without retransmission."""
        return self.beta if self.retransmission else 1

    def label(self) -> str:
        parts = [f"{self.flows}flow", "retx" if self.retransmission else "noretx"]
        if self.coding:
            parts.append(f"coding(pmix={self.p_mix:g})")
        if self.retransmission:
            parts.append(f"beta={self.beta}")
        return "/".join(parts)


@dataclass(frozen=True)
class ModelParams:
    delta: float
    mu: float = DEFAULT_MU
    gamma_1: float = 10.0
    gamma_k: float = 0.0

    def __post_init__(self):
        for name in ("delta", "mu", "gamma_1", "gamma_k"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                raise ConfigError(f"{name} must be a finite number, got {v!r}")
        if self.delta < 0:
            raise ConfigError(f"delta must be >= 0, got {self.delta}")
        if self.mu <= 0:
            raise ConfigError(f"mu must be > 0, got {self.mu}")
        if self.gamma_1 < 0 or self.gamma_k < 0:
            raise ConfigError("source rates must be >= 0")
        if self.gamma_1 == 0 and self.gamma_k == 0:
            raise ConfigError("at least one source rate must be positive")

    def with_delta(self, delta: float) -> "ModelParams":
        return replace(self, delta=delta)


@dataclass(frozen=True)
class ValidatedConfig:
    topo: ChainTopology
    scenario: Scenario
    params: ModelParams
    # Offered load against mu only; the real check runs on solved rates.
    maybe_stable: bool


def validate(scenario: Scenario, params: ModelParams, topo: ChainTopology) -> ValidatedConfig:
    if not isinstance(topo, ChainTopology):
        raise TopologyError("topology must be a ChainTopology")
    if not isinstance(scenario, Scenario) or not isinstance(params, ModelParams):
        raise ConfigError("scenario and params must be Scenario/ModelParams instances")
    if scenario.flows == 2 and params.gamma_k <= 0:
        raise ScenarioError("two-flow scenario needs gamma_k > 0")
    if scenario.flows == 1 and params.gamma_1 <= 0:
        raise ScenarioError("one-flow scenario needs gamma_1 > 0")
    if scenario.flows == 1 and params.gamma_k != 0:
        raise ScenarioError("one-flow scenario must have gamma_k = 0")
    offered = params.gamma_1 + (params.gamma_k if scenario.flows == 2 else 0.0)
    return ValidatedConfig(topo, scenario, params, maybe_stable=offered < params.mu)

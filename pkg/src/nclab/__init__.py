"""Throughput of inter-flow XOR network coding on a multi-hop wireless chain.

Analytic queueing model (``analytic``, ``collision``), a packet-level
simulator of the same abstraction (``sim``) and an experiment harness
(``harness``, ``cli``).
"""
from .analytic import RateLedger, ThroughputReport, analyze, rates_coding, rates_no_coding, throughput
from .collision import (LinkProbMap, SolverDiagnostics, SolverOptions, interferer_set, solve_joint,
                        success_probability)
from .errors import (CalibrationError, ConfigError, ConvergenceError, ModelDomainError, NCLabError,
                     ScenarioError, SimulationError, StabilityError, TopologyError)
from .harness import ExperimentConfig, calibrate_delta, load_config, run_compare, run_sweep
from .sim import SimOptions, SimResult, run_replications, simulate
from .topology import ChainTopology, ModelParams, Scenario, build_chain, validate

__version__ = "0.1.0"

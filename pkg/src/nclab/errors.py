"""Exception hierarchy shared by the analytic engine, simulator and CLI."""


class NCLabError(Exception):
    """Base class. ``exit_code`` is what the CLI returns when this escapes."""

    exit_code = 2


class ConfigError(NCLabError, ValueError):
    exit_code = 1


class ScenarioError(ConfigError):
    """A (flows, retransmission, coding) combination that has no model."""


class TopologyError(ConfigError):
    pass


class ModelDomainError(NCLabError, ArithmeticError):
    """The model equations left their domain (e.g. saturated collision window)."""

    exit_code = 2


class StabilityError(ModelDomainError):
    def __init__(self, node, rho, message=None):
        self.node = node
        self.rho = rho
        super().__init__(message or f"queue at N{node} is unstable (rho={rho:.4g} >= 1)")


class ConvergenceError(NCLabError):
    exit_code = 3

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class CalibrationError(NCLabError):
    exit_code = 2


class SimulationError(NCLabError):
    exit_code = 4


class SimulationInstabilityError(SimulationError):
    def __init__(self, node, length, time):
        self.node = node
        self.length = length
        self.time = time
        super().__init__(f"queue at N{node} reached {length} packets at t={time:.3f}s")


class ReplicationError(SimulationError):
    def __init__(self, failures):
        self.failures = failures  # list of (seed, exception)
        seeds = ", ".join(str(s) for s, _ in failures)
        super().__init__(f"{len(failures)} replication(s) failed; seeds: {seeds}")

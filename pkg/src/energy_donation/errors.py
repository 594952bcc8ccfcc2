"""Exception hierarchy shared by the simulator and the CLI."""


class SimulationError(Exception):
    """Base class for all simulator errors."""


class ConfigError(SimulationError):
    """Invalid scenario or matrix configuration."""


class IngestionError(ConfigError):
    """Malformed or incomplete readings input."""


class InvariantError(SimulationError):
    """An internal accounting invariant was violated during a run."""


class UnderflowError(InvariantError):
    """A quantity or balance would have gone negative."""


class GovernanceError(SimulationError):
    """Rejected token-ledger operation (bad vote, closed proposal, ...)."""

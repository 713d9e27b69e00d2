"""Exception hierarchy shared across the simulator."""


class SimulationError(Exception):
    """Base class for every error raised by this package."""


class SchedulingError(SimulationError):
    """Event scheduled in the past, or a similar kernel misuse."""


class ProtocolLogicError(SimulationError):
    """A MAC state machine violated one of its own invariants."""


class AccountingError(SimulationError):
    """Packet lifecycle bookkeeping was corrupted (e.g. double finalize)."""


class ConfigError(SimulationError):
    """Invalid parameter value or parameter combination."""

"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an operation receives arguments outside its contract."""


class InvalidStateError(RuntimeError):
    """Raised when an operation is invoked on a state that cannot support it."""


class SimulationFault(RuntimeError):
    """A module failure during a simulation run (non-finite values, bad aggregate)."""


class ConfigError(ValueError):
    """Configuration failed to parse or validate.

    ``field`` names the offending key (dotted path) and ``line`` the 1-based
    line in the source file when known.
    """

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        super().__init__(message)

    def __str__(self):
        msg = super().__str__()
        if self.field:
            msg = f"{self.field}: {msg}"
        if self.line is not None:
            msg = f"line {self.line}: {msg}"
        return msg


class EndOfTrace(Exception):
    """A replayed arrival trace has no more events."""

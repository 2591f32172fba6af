from __future__ import annotations


class ConfigError(ValueError):
    """Invalid configuration.  ``line`` is the 1-based source line when the
    problem can be tied to one, ``field`` the offending setting."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.message = message
        self.line = line
        self.field = field
        super().__init__(f"line {line}: {message}" if line else message)

    def at_line(self, line: int) -> ConfigError:
        return type(self)(self.message, line, self.field)


class ScenarioError(ConfigError):
    pass


class InvalidPodSpec(ValueError):
    pass


class Unreachable(RuntimeError):
    """A remote service did not answer.  Retryable: callers try again on the
    next poll."""


class SchedulerUnreachable(Unreachable):
    pass


class BackendUnreachable(Unreachable):
    pass


class SimulationError(RuntimeError):
    """Internal consistency violation inside the simulator."""

"""Exception hierarchy shared by all modules."""


class MTDCError(Exception):
    """Base class for every error raised by mtdcsim."""


class ValidationError(MTDCError, ValueError):
    """Input violates a documented precondition (shape, sign, ordering)."""


class TopologyError(ValidationError):
    """Grid graph is malformed: disconnected, self-loop or duplicate line."""


class ConfigError(ValidationError):
    """Controller or integrator configuration is inconsistent."""


class RankError(MTDCError, ArithmeticError):
    """A linear system that should be nonsingular is singular."""


class NumericalBlowupError(MTDCError, ArithmeticError):
    """Integration produced a non-finite value.

    Attributes
    ----------
    t : float
        Time at the start of the failing step, in seconds.
    stage : str
        Name of the first RK4 stage whose value was non-finite.
    """

    def __init__(self, message, t=None, stage=None):
        super().__init__(message)
        self.t = t
        self.stage = stage


class NotAtSteadyStateError(MTDCError):
    """A steady-state check was requested on a run that did not converge."""


class ScenarioError(ValidationError):
    """Scenario file could not be parsed; carries the offending line number."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.path = path
        self.line = line

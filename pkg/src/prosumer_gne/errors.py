"""Exception types raised across the package."""


class ScenarioError(ValueError):
    """Malformed or invalid scenario input.

    ``where`` carries a field path (``prosumers[2].c``) or a ``line:col``
    location so the CLI can print a precise diagnostic.
    """

    def __init__(self, message, where=None):
        self.message = message
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


class InfeasibleError(ValueError):
    """Total demand cannot be met inside the generation bounds."""


class NoBracketError(RuntimeError):
    """Dual bisection could not bracket the balance root."""


class DisconnectedGraphError(ValueError):
    pass


class NonSymmetricError(ValueError):
    pass


class NotPDError(ValueError):
    """The step-size matrix is not positive definite."""


class POutsideBoxError(ValueError):
    pass


class MissingNeighborMessage(KeyError):
    """An agent update needed a neighbor payload that was not delivered."""


class MaxIterationsExceeded(RuntimeError):
    """Raised only on request; ``run_sgne`` normally flags it in the report."""

    def __init__(self, report):
        self.report = report
        super().__init__(f"no convergence after {report.iterations} iterations")

"""Exception types raised across the package."""


class LfmmiClError(Exception):
    """Base class for all package errors."""


class InvalidInput(LfmmiClError, ValueError):
    pass


class NumericalError(LfmmiClError, ArithmeticError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class NoPath(LfmmiClError):
    """No complete path through a graph for the given number of frames.

    ``frame`` is the first frame after which the forward set was empty, or
    ``T`` when the forward pass survived but no final state was reached.
    ``graph`` optionally names the graph (e.g. ``"numerator"``).
    """

    def __init__(self, frame, graph=None):
        self.frame = frame
        self.graph = graph
        where = f" in {graph} graph" if graph else ""
        super().__init__(f"no complete path{where}: forward set empty at frame {frame}")


class DegenerateGap(LfmmiClError, ZeroDivisionError):
    pass

"""Exception hierarchy shared across the package.

The CLI maps these onto its exit codes: usage problems (``GraphError``,
``ModelError``) exit with 2, data degeneracy (``PositivityError`` and
subclasses) with 3.
"""


class EstimandLabError(Exception):
    """Base class for all package errors."""


class GraphError(EstimandLabError, ValueError):
    """Malformed graph, unknown node, or invalid query."""


class CycleError(GraphError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("graph contains a cycle through " + " -> ".join(self.cycle))


class ModelError(EstimandLabError, ValueError):
    """Invalid structural model, table, or intervention."""


class PositivityError(EstimandLabError, ValueError):
    """A required probability cell has zero mass.

    ``cells`` lists the offending assignments as ``{name: value}`` dicts.
    """

    def __init__(self, message, cells=()):
        self.cells = [dict(c) for c in cells]
        super().__init__(message)


class ZeroProbabilityError(PositivityError):
    """Conditioning on an event of probability zero."""


class EmptyStrataError(PositivityError):
    """Finite-sample data leave a required stratum empty."""

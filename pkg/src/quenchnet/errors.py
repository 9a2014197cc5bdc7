"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConstructionError(ValueError):
    """An object could not be built from the supplied data."""


class FitError(ValueError):
    """A quench curve carries no information that a fit could use."""


class ParseError(ValueError):
    """A file does not conform to its format.

    ``line`` is the 1-based line number of the offending row when known.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class TrainingAborted(RuntimeError):
    """Training hit a non-finite cost."""

    def __init__(self, epoch, cost):
        self.epoch = epoch
        self.cost = cost
        super().__init__(f"non-finite cost J={cost!r} at epoch {epoch}")

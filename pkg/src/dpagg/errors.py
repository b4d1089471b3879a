"""Exception hierarchy shared across the package.

Each class maps to one CLI exit code (see ``dpagg.cli``).
"""


class DPAggError(Exception):
    """Base class for all errors raised by dpagg."""


class InvalidParameterError(DPAggError, ValueError):
    """A privacy, mechanism or engine parameter is out of range."""


class DataIOError(DPAggError, OSError):
    """An input file is unreadable or malformed."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class ContractViolation(DPAggError, RuntimeError):
    """An internal pre- or post-condition does not hold."""

"""Exception types shared across the package."""


class SimcfError(Exception):
    """Base class for all simcf errors."""


class ParseError(SimcfError):
    """A data file violated its line format."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ValidationError(SimcfError):
    """An input violated a documented invariant or precondition."""

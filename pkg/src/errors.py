class CatmixError(Exception):
    """Base class for errors raised by the toolkit."""


class CapacityError(CatmixError):
    """
    Raised when an exact or dense computation would exceed its size budget.

    Attributes:
        parameter: Name of the limiting parameter (e.g. "n").
        value: The requested value.
        limit: The largest supported value.
    """

    def __init__(self, parameter: str, value, limit):
        self.parameter = parameter
        self.value = value
        self.limit = limit
        super().__init__(f"{parameter}={value} exceeds the supported limit {limit}")


class InvariantError(CatmixError):
    """Raised when an identity or inequality that must hold is violated at runtime."""

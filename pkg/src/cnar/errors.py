class ValidationError(ValueError):
    """Input violates a documented precondition."""


class EstimationError(RuntimeError):
    """Raised when a least-squares system cannot be solved reliably."""

    def __init__(self, message: str, condition: float | None = None):
        super().__init__(message)
        self.condition = condition

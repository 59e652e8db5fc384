class InvalidInputError(ValueError):
    """Input data violates a documented precondition."""


class BudgetExceededError(RuntimeError):
    """Brute-force reference asked to enumerate more than its budget allows."""

    def __init__(self, required, budget, what="configurations"):
        self.required = required
        self.budget = budget
        super().__init__(f"need {required} {what}, budget is {budget}")


class DivergenceError(FloatingPointError):
    """Inference produced a non-finite energy."""


class ParseError(InvalidInputError):
    """Malformed file; ``offset`` is the byte (or line) position of the fault."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)

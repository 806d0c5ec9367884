"""Exception types shared across the package."""


class ModelDomainError(ValueError):
    """A model was evaluated outside the region where it is defined."""

    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value


class DivergentInformationError(ArithmeticError):
    """Fisher information is unbounded at the requested transmissivity."""

    def __init__(self, kind, eta):
        super().__init__(f"{kind} information diverges at eta={eta!r}")
        self.kind = kind
        self.eta = eta


class TruncationUnderflowError(ArithmeticError):
    """Truncation interval carries no representable probability mass."""


class SchemaError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line

"""Exception types shared across the library."""


class ContractError(ValueError):
    """An argument violates a documented precondition."""


class NumericDomainError(ArithmeticError):
    """A computation produced or encountered a non-finite value.

    Carries ``step`` when the failure happened at a known grid node.
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class VariationUnboundedError(ArithmeticError):
    """Refinement of a variation / Stieltjes sum failed to stabilise."""


class ResolutionError(ValueError):
    """A requested tolerance or scale is finer than the grid can resolve."""


class RepresentationUnavailableError(ContractError):
    """The requested integral representation was not declared on the input."""

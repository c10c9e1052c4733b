"""Exception hierarchy shared by all wmrline modules."""


class WmrError(Exception):
    """Base class for all library errors."""


class DomainError(WmrError):
    """An argument is outside its mathematical domain (e.g. rho < 1)."""


class OrderError(WmrError):
    """A convex-order precondition does not hold."""


class PreconditionError(WmrError):
    """A non-order precondition of an operation is violated."""


class SizeError(WmrError):
    """Input exceeds the size limit of a brute-force routine."""


class SolverError(WmrError):
    """The optimizer failed to converge; carries a residual report."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class CompositionError(WmrError):
    """Map/coupling composition with mismatched intermediate marginal."""


class CouplingError(WmrError):
    """A coupling fails its marginal constraints."""


class StructureError(WmrError):
    """A mass entry violates the irreducible-interval decomposition."""


class ConsistencyError(WmrError):
    """Internal verification of a constructed object failed."""


class HypothesisError(WmrError):
    """A theorem hypothesis (e.g. cost growth bound) is not satisfied."""

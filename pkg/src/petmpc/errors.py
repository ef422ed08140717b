"""Exception types shared across the package."""


class PetmpcError(Exception):
    """Base class for all package errors."""


class ContractViolation(PetmpcError, ValueError):
    """Bad arguments: wrong shapes, non-finite data, out-of-domain parameters."""


class NumericalFailure(PetmpcError, RuntimeError):
    """An LP/QP/eigen solver did not return a usable answer."""

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class UnboundedError(PetmpcError, ValueError):
    """A support query was unbounded in the requested direction."""


class UnsupportedOperation(PetmpcError, NotImplementedError):
    pass


class InfeasibleDesign(PetmpcError, ValueError):
    """Tightened constraint sets came out empty (tube too large for the constraints)."""


class NonConvergence(PetmpcError, RuntimeError):
    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class FeasibilityLoss(PetmpcError, RuntimeError):
    """No persistently exciting candidate survived the lookahead test."""


class InitializationError(PetmpcError, RuntimeError):
    pass

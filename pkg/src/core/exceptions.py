"""
Exceptions Module
Error types raised by the QuMERA library. Every error derives from QuMeraError
and from the matching builtin, so callers may catch either.
"""

from typing import Dict, List, Optional, Sequence, Tuple


class QuMeraError(Exception):
    """Base class for all QuMERA errors."""


class ContractionError(QuMeraError, ValueError):
    """Paired legs have different dimensions, or a leg is paired twice."""

    def __init__(self, message: str, leg_pair: Optional[Tuple[int, int]] = None):
        super().__init__(message)
        self.leg_pair = leg_pair


class PermutationError(QuMeraError, ValueError):
    """The requested leg order is not a permutation."""


class DegeneratePolarError(QuMeraError, ValueError):
    """Polar projection of a rank-deficient matrix."""

    def __init__(self, message: str, smallest_singular_value: float = 0.0):
        super().__init__(message)
        self.smallest_singular_value = smallest_singular_value


class EigenSolverError(QuMeraError, RuntimeError):
    """Eigensolver failed to converge or produced residuals above tolerance."""

    def __init__(self, message: str, residual: Optional[float] = None):
        super().__init__(message)
        self.residual = residual


class NetworkValidationError(QuMeraError, ValueError):
    """A network violates its contraction rules."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class ConeTooShortError(QuMeraError, ValueError):
    """The network is too small to hold a causal cone."""


class ChannelError(QuMeraError, ValueError):
    """Wrong compound kind, or operator dimensions that do not match a channel."""


class NonMixingError(QuMeraError, RuntimeError):
    """The channel has no unique fixed point."""

    def __init__(self, message: str, spectrum_excerpt: Optional[Sequence[complex]] = None):
        super().__init__(message)
        self.spectrum_excerpt = list(spectrum_excerpt) if spectrum_excerpt is not None else []


class KappaUndefinedError(QuMeraError, ValueError):
    """No subleading eigenvalue survives the overlap filter."""

    def __init__(self, message: str, coefficients: Optional[List[Dict]] = None):
        super().__init__(message)
        self.coefficients = coefficients or []


class DomainError(QuMeraError, ValueError):
    """Argument outside the domain of a formula."""


class ResourceGuardError(QuMeraError, MemoryError):
    """A brute-force computation would exceed its size limit."""

    def __init__(self, message: str, required_bytes: int = 0):
        super().__init__(message)
        self.required_bytes = required_bytes


class ManifestError(QuMeraError, ValueError):
    """A network manifest or config file could not be parsed."""


class OptimizationError(QuMeraError, RuntimeError):
    """Optimization failed; the partial trace is attached."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace

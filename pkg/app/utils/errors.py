from typing import Any, Dict, Optional


class SicError(Exception):
    """Base class for all simulator and receiver errors"""


class InvalidArgumentError(SicError, ValueError):
    """Argument outside the domain of an operation"""


class DegenerateProductError(SicError, ValueError):
    """Product of two point masses located at different means"""


class SingularCovarianceError(SicError, ValueError):
    """Complex Gaussian with variance <= |pseudo-variance|"""


class ConfigurationError(SicError, ValueError):
    """Invalid experiment or link configuration"""


class FramingError(SicError):
    """Sample count does not map onto whole symbols"""


class ContractViolationError(SicError):
    """Decoded symbols do not match the SIC schedule"""


class UndefinedPhaseError(SicError, ValueError):
    """Correlation sum is zero, so its angle is undefined"""


class ModelInvalidError(SicError, ZeroDivisionError):
    """Surrogate model is not defined for the given link (e.g. beta2 = 0)"""


class NumericalFailureError(SicError):
    """Solver, optimizer or integrator failed"""

    def __init__(
        self,
        message: str,
        step: Optional[int] = None,
        index: Optional[int] = None,
        diagnostics: Optional[Dict[str, Any]] = None,
    ):
        super().__init__(message)
        self.step = step
        self.index = index
        self.diagnostics = diagnostics or {}

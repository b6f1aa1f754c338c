"""
Exception hierarchy for the verification engine.

Everything raised on purpose by the engine derives from VerificationError so the
CLI and the benchmark harness can tell engine failures apart from bugs.
"""

from typing import Optional


class VerificationError(Exception):
    """Base class for all engine errors"""


class ModelFormatError(VerificationError, ValueError):
    """Raised when a model document is malformed or inconsistent"""

    def __init__(self, message: str, layer_index: Optional[int] = None):
        self.layer_index = layer_index
        if layer_index is not None:
            message = f"layer {layer_index}: {message}"
        super().__init__(message)


class DimensionMismatchError(VerificationError, ValueError):
    """Raised when vector/matrix sizes do not chain"""


class LpIterationLimit(VerificationError):
    """Raised when the simplex solver exceeds its pivot budget"""


class InfeasibleStarError(VerificationError):
    """Raised when a star set has an empty predicate polytope"""


class StarBudgetExceeded(VerificationError):
    """Raised when exact reachability would hold more stars than allowed"""


class ReachTimeout(VerificationError):
    """Raised when reachability runs past its deadline"""


class SpecError(VerificationError, ValueError):
    """Raised for invalid perturbation specs (epsilon, mask, pixel range)"""


class VnnLibSyntaxError(VerificationError, ValueError):
    """Raised when a VNN-LIB document is outside the accepted grammar"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingBoundError(VnnLibSyntaxError):
    """Raised when an input variable lacks a lower or upper bound"""


class ConflictingBoundError(VnnLibSyntaxError):
    """Raised when an input variable has contradictory bounds"""


class TrainingError(VerificationError):
    """Raised when training diverges (NaN loss) or gets bad data"""


class DatasetError(VerificationError, ValueError):
    """Raised when a dataset file cannot be used"""

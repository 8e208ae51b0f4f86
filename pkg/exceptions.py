"""
Layer Toolkit Errors
Named failure causes shared by every service, with machine-readable codes
"""
from typing import Optional


class LayerToolkitError(Exception):
    """Base error carrying a stable code and the CLI exit code it maps to"""

    code = "layer_toolkit_error"
    exit_code = 1

    def __init__(self, message: str, field: Optional[str] = None, details: Optional[dict] = None):
        super().__init__(message)
        self.message = message
        self.field = field
        self.details = details or {}

    def to_dict(self) -> dict:
        return {
            "code": self.code,
            "message": self.message,
            "field": self.field,
            "details": self.details,
        }


class DegenerateParametrization(LayerToolkitError):
    code = "degenerate_parametrization"
    exit_code = 5


class QuadratureDivergence(LayerToolkitError):
    code = "quadrature_divergence"
    exit_code = 5


class InvalidThickness(LayerToolkitError):
    code = "invalid_thickness"
    exit_code = 2


class MetricDegenerate(LayerToolkitError):
    code = "metric_degenerate"
    exit_code = 5


class DerivativeUnavailable(LayerToolkitError):
    code = "derivative_unavailable"
    exit_code = 5


class NonAdmissibleTrial(LayerToolkitError):
    code = "non_admissible_trial"
    exit_code = 5


class DomainError(LayerToolkitError):
    code = "domain_error"
    exit_code = 5


class NotCertified(LayerToolkitError):
    code = "not_certified"
    exit_code = 3


class GridTooCoarse(LayerToolkitError):
    code = "grid_too_coarse"
    exit_code = 2


class NoConvergence(LayerToolkitError):
    """Eigen-iteration budget exhausted; partial eigenvalues travel in details"""

    code = "no_convergence"
    exit_code = 5


class UnknownSurface(LayerToolkitError):
    code = "unknown_surface"
    exit_code = 2


class BadParams(LayerToolkitError):
    code = "bad_params"
    exit_code = 2


class ConfigParseError(LayerToolkitError):
    """Syntax error or unknown key in a run configuration"""

    code = "config_parse_error"
    exit_code = 2

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        super().__init__(message, field=field, details={"line": line} if line is not None else None)
        self.line = line


class ConfigValidationError(LayerToolkitError):
    """A configuration value violates a constraint"""

    code = "config_validation_error"
    exit_code = 2


class IdentityCheckFailed(LayerToolkitError):
    code = "identity_check_failed"
    exit_code = 4


class ConsistencyViolation(LayerToolkitError):
    code = "consistency_violation"
    exit_code = 4

"""
Run Configuration and Report Schemas
Pydantic models for the YAML run configuration (strict: unknown keys are errors)
and for the JSON report
"""
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


# Base schema classes
class StrictSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ReportSchema(BaseModel):
    model_config = ConfigDict(extra="forbid", use_enum_values=True)


# Run configuration sections
class SurfaceSection(StrictSchema):
    family: str = Field(default="plane", description="plane | compact-bump | sphere-patch-test")
    params: Dict[str, float] = Field(default_factory=dict, description="family parameters, lengths in units of q")


class LayerSection(StrictSchema):
    a: float = Field(..., gt=0, description="layer half-width (length)")


class QuadratureSection(StrictSchema):
    radial_panels: int = Field(default=16, ge=1)
    order: int = Field(default=10, ge=2)
    angular_nodes: int = Field(default=8, ge=4)
    transverse_order: int = Field(default=12, ge=2, description="Gauss nodes per transverse panel")
    max_level: int = Field(default=4, ge=1)
    tolerance: float = Field(default=1e-10, gt=0)
    relative_tolerance: float = Field(default=1e-10, ge=0)


class LocalizationSection(StrictSchema):
    radius: Optional[float] = Field(default=None, gt=0, description="lateral radius r_j (default r0)")
    transverse_half_width: Optional[float] = Field(default=None, gt=0, description="a_j (default 0.8 a)")
    center: Tuple[float, float] = (0.0, 0.0)
    plateau: float = Field(default=0.5, ge=0, lt=1)
    transverse_plateau: float = Field(default=0.5, ge=0, lt=1)


class CertifySection(StrictSchema):
    r0: Optional[float] = Field(default=None, gt=0, description="mollifier plateau radius (default: support radius)")
    sigma: Optional[List[float]] = Field(default=None, description="explicit sigma grid (1/length)")
    sigma_k_range: Tuple[int, int] = Field(default=(2, 12), description="sigma_k = 10^(-k/2)/r0 for k in range")
    localization: LocalizationSection = Field(default_factory=LocalizationSection)
    delta_min: float = Field(default=1e-8, gt=0, description="pass margin in units of kappa_1^2")
    quadrature: QuadratureSection = Field(default_factory=QuadratureSection)
    n_jobs: Optional[int] = None
    strict: bool = False

    @field_validator("sigma")
    @classmethod
    def validate_sigma(cls, v):
        if v is not None and (not v or any(s <= 0 for s in v)):
            raise ValueError("sigma grid must be a non-empty list of positive values")
        return v

    @field_validator("sigma_k_range")
    @classmethod
    def validate_k_range(cls, v):
        if v[0] < 0 or v[1] < v[0]:
            raise ValueError("sigma_k_range must be [k_min, k_max] with 0 <= k_min <= k_max")
        return v


class SolveSection(StrictSchema):
    r_max: float = Field(default=7.0, gt=0, description="half-width of the lateral box (length)")
    n_lateral: int = Field(default=64, ge=4)
    n_transverse: int = Field(default=10, ge=1)
    k: int = Field(default=6, ge=1)
    tol: float = Field(default=1e-10, gt=0)
    lateral_bc: Literal["dirichlet", "neumann"] = "dirichlet"
    axisymmetric: bool = Field(default=False, description="rotation-invariant sector on the disk r <= r_max")
    seed: Optional[int] = None
    bracket_r_max: List[float] = Field(default_factory=list)
    refine_levels: int = Field(default=0, ge=0)
    dump_matrix: Optional[str] = None


class ChecksSection(StrictSchema):
    samples: int = Field(default=1000, ge=1)
    potential_samples: int = Field(default=16, ge=1)
    seed: int = 7


class OutputSection(StrictSchema):
    path: Optional[str] = None
    format: Literal["json", "csv"] = "json"


class RunConfig(StrictSchema):
    surface: SurfaceSection = Field(default_factory=SurfaceSection)
    layer: LayerSection
    certify: CertifySection = Field(default_factory=CertifySection)
    solve: SolveSection = Field(default_factory=SolveSection)
    checks: ChecksSection = Field(default_factory=ChecksSection)
    output: OutputSection = Field(default_factory=OutputSection)


# Report sections
class GeometrySummary(ReportSchema):
    surface: Dict[str, Any]
    rho_m: Optional[float] = Field(None, description="null when the surface is flat")
    a: float
    thickness_valid: bool
    c_plus: float
    c_minus: float
    total_curvature: float
    total_curvature_error: float
    total_curvature_positive: Optional[float] = None
    total_curvature_negative: Optional[float] = None
    K_min: float
    K_max: float
    M_min: float
    M_max: float
    kappa1_sq: float


class IdentityCheck(ReportSchema):
    name: str
    residual: float
    tolerance: float
    passed: bool


class ConsistencyReport(ReportSchema):
    lambda1: Optional[float] = None
    lambda1_neumann: Optional[float] = None
    E_ub: Optional[float] = None
    tolerance: float
    upper_bound_consistent: bool
    below_threshold: Optional[bool] = None


class FailureReport(ReportSchema):
    code: str
    message: str
    field: Optional[str] = None
    details: Dict[str, Any] = Field(default_factory=dict)


class Report(ReportSchema):
    schema_version: str
    command: str
    config: Dict[str, Any]
    settings: Dict[str, Any]
    geometry: Optional[GeometrySummary] = None
    identities: Optional[List[IdentityCheck]] = None
    certificate: Optional[Dict[str, Any]] = None
    spectrum: Optional[Dict[str, Any]] = None
    bracketing: Optional[Dict[str, Any]] = None
    consistency: Optional[ConsistencyReport] = None
    failure: Optional[FailureReport] = None
    exit_code: int = 0

    @model_validator(mode="after")
    def failure_sets_exit_code(self):
        if self.failure is not None and self.exit_code == 0:
            raise ValueError("a report with a failure block needs a non-zero exit code")
        return self

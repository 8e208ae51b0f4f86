"""
Domain Models
Enums and value types passed between the geometry, form, certifier and solver services
"""
import enum
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy import sparse


# Enums for status fields
class CertificateStatus(enum.Enum):
    CERTIFIED = "certified"
    NOT_CERTIFIED = "not_certified"


class EpsilonStatus(enum.Enum):
    MINIMUM = "minimum"
    UNBOUNDED_DIRECTION = "unbounded_direction"
    NO_IMPROVEMENT = "no_improvement"


class LateralBoundary(enum.Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"


class CurvaturePart(enum.Enum):
    ALL = "all"
    POSITIVE = "positive"
    NEGATIVE = "negative"


class DerivativePath(enum.Enum):
    AUTO = "auto"
    ANALYTIC = "analytic"
    FINITE_DIFFERENCE = "finite_difference"


@dataclass(frozen=True)
class CurvatureData:
    """Pointwise fundamental forms and curvatures; leading axes follow the query points"""

    normal: np.ndarray
    g: np.ndarray
    g_inv: np.ndarray
    h: np.ndarray
    weingarten: np.ndarray
    K: np.ndarray
    M: np.ndarray
    k_plus: np.ndarray
    k_minus: np.ndarray
    principal_directions: np.ndarray
    third_form: np.ndarray
    umbilic: np.ndarray

    @property
    def g_det(self) -> np.ndarray:
        return np.linalg.det(self.g)

    @property
    def shape_operator(self) -> np.ndarray:
        """Mixed tensor h^rho_sigma = g^{rho alpha} h_{alpha sigma}"""
        return self.g_inv @ self.h


@dataclass(frozen=True)
class CharacteristicResidual:
    eigenvalue_residual: float
    matrix_residual: float


@dataclass(frozen=True)
class CurvatureGradient:
    """First derivatives along q^rho; tensor slots are (..., rho, mu, nu)"""

    dg: np.ndarray
    dh: np.ndarray
    dK: np.ndarray
    dM: np.ndarray
    path: DerivativePath


@dataclass(frozen=True)
class TotalCurvature:
    value: float
    error_estimate: float
    level: int
    part: CurvaturePart


@dataclass(frozen=True)
class QuadratureSpec:
    """Panel counts at level 0; every refinement level doubles them (angular nodes only if refine_angular)"""

    radial_panels: int = 8
    order: int = 8
    angular_nodes: int = 16
    transverse_order: int = 16
    max_level: int = 3
    tolerance: float = 1e-8
    relative_tolerance: float = 1e-7
    refine_angular: bool = True

    def at_level(self, level: int) -> "QuadratureSpec":
        factor = 2 ** level
        return QuadratureSpec(
            radial_panels=self.radial_panels * factor,
            order=self.order,
            angular_nodes=self.angular_nodes * (factor if self.refine_angular else 1),
            transverse_order=self.transverse_order * factor,
            max_level=self.max_level,
            tolerance=self.tolerance,
            relative_tolerance=self.relative_tolerance,
            refine_angular=self.refine_angular,
        )


@dataclass(frozen=True)
class GridSpec:
    """Sampling grid for curvature suprema; radius defaults to the surface support"""

    radius: Optional[float] = None
    nodes: int = 129
    zoom_nodes: int = 17
    max_levels: int = 12
    tolerance: float = 1e-4


@dataclass(frozen=True)
class LayerConfig:
    a: float
    r0: Optional[float] = None

    @property
    def d(self) -> float:
        return 2.0 * self.a

    @property
    def kappa1_sq(self) -> float:
        return (math.pi / self.d) ** 2


@dataclass(frozen=True)
class ThicknessReport:
    a: float
    rho_m: float
    valid: bool
    c_plus: float
    c_minus: float
    max_curvature: float
    argmax: Tuple[float, float]
    grid_spacing: float
    levels: int


@dataclass(frozen=True)
class LayerMetricPoint:
    G: np.ndarray
    G_inv: np.ndarray
    G_det: np.ndarray
    G_det_direct: np.ndarray
    jacobian: np.ndarray
    D: np.ndarray


@dataclass(frozen=True)
class LayerMetricDerivatives:
    """Layer metric with its q-derivatives; derivative slots are (..., rho, mu, nu)"""

    G_inv: np.ndarray
    G_det: np.ndarray
    dG_det: np.ndarray
    d2G_det: np.ndarray
    dG_inv: np.ndarray


@dataclass(frozen=True)
class RadialTail:
    """Exterior of a separable trial phi(r) chi_1(u) on the flat region r > radius"""

    radius: float
    kinetic: float
    mass: float


@dataclass(frozen=True)
class TrialFunction:
    """
    Trial state on the layer.

    value and gradient receive a LayerSample and return arrays matching
    sample.u (gradient gains a trailing axis for d/dq1, d/dq2, d/du).
    The tail, when present, carries the exterior closed forms beyond
    support_radius.
    """

    value: Callable
    gradient: Callable
    support_radius: float
    tail: Optional[RadialTail] = None
    interfaces: Tuple[float, ...] = ()
    label: str = "trial"


@dataclass(frozen=True)
class LocalizationSpec:
    """Tensor bump j(q,u) = beta(|q - center| / radius) beta(u / transverse_half_width)"""

    radius: float
    transverse_half_width: float
    center: Tuple[float, float] = (0.0, 0.0)
    plateau: float = 0.5
    transverse_plateau: float = 0.5


@dataclass(frozen=True)
class CertifierConfig:
    r0: float
    sigma_grid: Tuple[float, ...]
    localization: LocalizationSpec
    quadrature: QuadratureSpec = QuadratureSpec(
        radial_panels=16, order=10, angular_nodes=8, transverse_order=12,
        max_level=4, tolerance=1e-10, relative_tolerance=1e-10,
    )
    delta_min: float = 1e-8
    n_jobs: int = 1
    strict: bool = False


@dataclass(frozen=True)
class FormValues:
    q1: float
    q2: float
    norm_sq: float
    t: float
    error_estimate: float
    interior_t: float
    exterior_t: float
    level: int


@dataclass(frozen=True)
class BesselEval:
    x: float
    k0: float
    k1: float
    k2: float
    underflow: bool


@dataclass(frozen=True)
class MollifierNorm:
    value: float
    loss_of_precision: bool


@dataclass(frozen=True)
class EpsilonResult:
    eps_star: float
    t_min: float
    status: EpsilonStatus


@dataclass(frozen=True)
class SigmaSweepRow:
    sigma: float
    sigma_r0: float
    t0: float
    B: float
    C: float
    eps_star: float
    t_min: float
    error_estimate: float
    norm_sq: float
    energy_gap: float
    mollifier_norm_sq: float
    loss_of_precision: bool
    passed: bool


@dataclass
class Certificate:
    status: CertificateStatus
    kappa1_sq: float
    delta_min: float
    sigma_star: Optional[float] = None
    eps_star: Optional[float] = None
    t0: Optional[float] = None
    B: Optional[float] = None
    C: Optional[float] = None
    t_min: Optional[float] = None
    t_min_direct: Optional[float] = None
    assembly_residual: Optional[float] = None
    norm_sq: Optional[float] = None
    energy_gap: Optional[float] = None
    E_ub: Optional[float] = None
    error_estimate: Optional[float] = None
    epsilon_status: Optional[EpsilonStatus] = None
    total_curvature: Optional[float] = None
    theta_norm_sq: Optional[float] = None
    b_sigma_spread: Optional[float] = None
    sweep: List[SigmaSweepRow] = field(default_factory=list)


@dataclass(frozen=True)
class SolverGrid:
    """
    Lateral box |q1|, |q2| <= r_max with cell-centred nodes, vertex nodes in u.

    An axisymmetric grid keeps only the radius: n_lateral cells on (0, r_max).
    """

    r_max: float
    n_lateral: int
    n_transverse: int
    lateral_bc: LateralBoundary = LateralBoundary.DIRICHLET
    axisymmetric: bool = False

    @property
    def h(self) -> float:
        width = self.r_max if self.axisymmetric else 2.0 * self.r_max
        return width / self.n_lateral

    def h_u(self, a: float) -> float:
        return 2.0 * a / (self.n_transverse + 1)

    @property
    def shape(self) -> Tuple[int, ...]:
        if self.axisymmetric:
            return (self.n_lateral, self.n_transverse)
        return (self.n_lateral, self.n_lateral, self.n_transverse)


@dataclass
class DiscreteOperator:
    matrix: sparse.csr_matrix
    grid: Optional[SolverGrid]
    a: float
    kappa1_sq: float
    discrete_threshold: float
    max_asymmetry: float
    boundary: dict

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]


@dataclass
class SpectralResult:
    eigenvalues: np.ndarray
    residuals: np.ndarray
    converged: bool
    shift: float
    tolerance: float
    seed: int
    kappa1_sq: float
    discrete_threshold: float
    count_below_shift: Optional[int] = None
    count_below_threshold: Optional[int] = None
    refinement_history: List[dict] = field(default_factory=list)

    @property
    def ground_state(self) -> float:
        return float(self.eigenvalues[0])


@dataclass(frozen=True)
class BracketingRow:
    r_max: float
    n_lateral: int
    neumann: Tuple[float, ...]
    dirichlet: Tuple[float, ...]
    discrete_threshold: float
    ordering_ok: bool


@dataclass
class BracketingReport:
    rows: List[BracketingRow]
    kappa1_sq: float
    ordering_ok: bool
    ground_state_spread: float
    ground_state_stable: bool
    edge_trend_ok: bool
    neumann_trend_ok: bool
    notes: List[str] = field(default_factory=list)

"""
Hamiltonian Forms Service
Transverse modes, effective potentials and quadratic forms of trial states on the layer
"""
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

from exceptions import MetricDegenerate, NonAdmissibleTrial
from models import (
    CurvatureData, CurvatureGradient, DerivativePath, FormValues, LayerConfig,
    LayerMetricPoint, QuadratureSpec, RadialTail, TrialFunction,
)
from services.geometry_service import geometry_service
from services.layer_service import layer_service
from services.quadrature_service import (
    central_difference, converge, disk_rule, even_part, panel_rule, symmetric_rule,
)
from services.surfaces import SurfaceModel

logger = logging.getLogger(__name__)

DIRICHLET_TRACE_TOLERANCE = 1e-10


@dataclass(frozen=True)
class TransverseMode:
    """Dirichlet eigenfunction of -d^2/du^2 on (-a, a): cosine for odd n, sine for even n"""

    n: int
    a: float

    @property
    def d(self) -> float:
        return 2.0 * self.a

    @property
    def kappa(self) -> float:
        return math.pi * self.n / self.d

    @property
    def kappa_sq(self) -> float:
        return self.kappa**2

    @property
    def amplitude(self) -> float:
        return math.sqrt(2.0 / self.d)

    def value(self, u):
        u = np.asarray(u, dtype=float)
        if self.n % 2:
            return self.amplitude * np.cos(self.kappa * u)
        return self.amplitude * np.sin(self.kappa * u)

    def derivative(self, u):
        u = np.asarray(u, dtype=float)
        if self.n % 2:
            return -self.amplitude * self.kappa * np.sin(self.kappa * u)
        return self.amplitude * self.kappa * np.cos(self.kappa * u)

    def second_derivative(self, u):
        return -self.kappa_sq * self.value(u)


class LayerSample:
    """
    Quadrature nodes of one lateral chunk times all transverse nodes.

    Lateral arrays have shape (P, 1), transverse arrays (1, U), and the
    metric and weights (P, U).
    """

    def __init__(self, surface: SurfaceModel, layer: LayerConfig, q1: np.ndarray, q2: np.ndarray,
                 lateral_weights: np.ndarray, u: np.ndarray, transverse_weights: np.ndarray,
                 path: DerivativePath = DerivativePath.AUTO):
        self.surface = surface
        self.layer = layer
        self.path = path
        self.q1 = q1[:, None]
        self.q2 = q2[:, None]
        self.r = np.hypot(self.q1, self.q2)
        self.u = u[None, :]
        self.weights = lateral_weights[:, None] * transverse_weights[None, :]
        self.curvature: CurvatureData = geometry_service.compute_curvature(surface, self.q1, self.q2)
        self.metric: LayerMetricPoint = layer_service.layer_metric_at(self.curvature, self.u)

    @cached_property
    def gradient(self) -> CurvatureGradient:
        return geometry_service.curvature_gradient(self.surface, self.q1, self.q2, self.path)

    @property
    def K(self) -> np.ndarray:
        return self.curvature.K

    @property
    def M(self) -> np.ndarray:
        return self.curvature.M

    @property
    def measure(self) -> np.ndarray:
        """Quadrature weight times G^{1/2}"""
        return self.weights * self.metric.jacobian


class LayerDomain:
    """
    Curved interior Omega_0 cut at |q| <= radius, sampled level by level.

    Samples are built once per refinement level and reused by every form
    evaluated on the same domain. Transverse breakpoints are mirrored so the
    u nodes stay symmetric; transverse_order then counts nodes per u panel.
    """

    def __init__(self, surface: SurfaceModel, layer: LayerConfig, radius: float,
                 quadrature: Optional[QuadratureSpec] = None, breakpoints: Sequence[float] = (),
                 path: DerivativePath = DerivativePath.AUTO, chunk_points: int = 200_000,
                 cache_points: int = 2_500_000, transverse_breakpoints: Sequence[float] = ()):
        self.surface = surface
        self.layer = layer
        self.radius = float(radius)
        self.quadrature = quadrature or QuadratureSpec()
        extra = [surface.support_radius] if surface.support_radius < self.radius else []
        self.breakpoints = tuple(sorted(set(list(breakpoints) + extra)))
        a = layer.a
        mirrored = {abs(float(b)) for b in transverse_breakpoints if 0.0 < abs(float(b)) < a}
        self.transverse_breakpoints = tuple(sorted([-b for b in mirrored] + list(mirrored)))
        self.path = path
        self.chunk_points = chunk_points
        self.cache_points = cache_points
        self._cache: Dict[int, List[LayerSample]] = {}

    def samples(self, level: int) -> Iterable[LayerSample]:
        """Chunks of the level's nodes; small levels are cached, large ones streamed"""
        if level in self._cache:
            return self._cache[level]
        spec = self.quadrature.at_level(level)
        rule = disk_rule(self.radius, spec.radial_panels, spec.order, spec.angular_nodes, self.breakpoints)
        u, wu = panel_rule(-self.layer.a, self.layer.a, 1, spec.transverse_order, self.transverse_breakpoints)
        block = max(1, self.chunk_points // u.size)
        chunks = (
            LayerSample(self.surface, self.layer, rule.q1[start:start + block], rule.q2[start:start + block],
                        rule.weights[start:start + block], u, wu, self.path)
            for start in range(0, rule.size, block)
        )
        logger.debug(f"Level-{level} layer sample: {rule.size} lateral x {u.size} transverse nodes")
        if rule.size * u.size <= self.cache_points:
            self._cache[level] = list(chunks)
            return self._cache[level]
        return chunks

    def boundary_sample(self) -> LayerSample:
        """Level-0 lateral nodes on the walls u = -a and u = +a"""
        spec = self.quadrature
        rule = disk_rule(self.radius, spec.radial_panels, spec.order, spec.angular_nodes, self.breakpoints)
        a = self.layer.a
        return LayerSample(self.surface, self.layer, rule.q1, rule.q2, rule.weights,
                           np.array([-a, a]), np.ones(2), self.path)


class HamiltonianService:
    """Potentials of the unitarily transformed operator and the quadratic form t = q - kappa_1^2 ||.||^2"""

    def transverse_mode(self, n: int, a: float) -> TransverseMode:
        return TransverseMode(n=n, a=a)

    def orthonormality_residual(self, a: float, n_modes: int = 4, order: int = 64) -> float:
        u, w = symmetric_rule(a, order)
        values = np.stack([self.transverse_mode(n, a).value(u) for n in range(1, n_modes + 1)])
        gram = (values * w) @ values.T
        return float(np.max(np.abs(gram - np.eye(n_modes))))

    def u_squared_identity(self, a: float, order: int = 64) -> float:
        """<u^2 (|chi_1'|^2 - kappa_1^2 |chi_1|^2)>_u, equal to 1 for every a"""
        mode = self.transverse_mode(1, a)
        u, w = symmetric_rule(a, order)
        integrand = u * u * (mode.derivative(u) ** 2 - mode.kappa_sq * mode.value(u) ** 2)
        return float(np.sum(w * integrand))

    def transverse_reduction(self, c: CurvatureData, layer: LayerConfig, order: int = 32) -> np.ndarray:
        """
        int G^{1/2}(|chi_1'|^2 - kappa_1^2 |chi_1|^2) du at each sampled q.

        Odd powers of u cancel on the symmetric nodes; the exact value is K g^{1/2}.
        """
        mode = self.transverse_mode(1, layer.a)
        u, w = symmetric_rule(layer.a, order)
        u = np.broadcast_to(u, np.shape(c.K) + u.shape)
        metric = layer_service.layer_metric_at(c, u)
        integrand = metric.jacobian * (mode.derivative(u) ** 2 - mode.kappa_sq * mode.value(u) ** 2)
        return np.sum(w * even_part(integrand, axis=-1), axis=-1)

    def potential_V2(self, c: CurvatureData, u) -> np.ndarray:
        """(K - M^2) / (1 - 2Mu + Ku^2)^2"""
        D = layer_service.determinant_factor(c, u)
        if np.any(D <= 0):
            raise MetricDegenerate(f"1 - 2Mu + Ku^2 <= 0 (min {float(np.min(D)):.3e})")
        extra = max(np.ndim(u) - np.ndim(c.K), 0)
        KM = np.asarray(c.K - c.M * c.M)
        return KM.reshape(KM.shape + (1,) * extra) / (D * D)

    def surface_potential(self, c: CurvatureData) -> np.ndarray:
        return geometry_service.surface_potential(c)

    def potential_V1(self, surface: SurfaceModel, q1, q2, u,
                     path: DerivativePath = DerivativePath.AUTO) -> np.ndarray:
        """
        Lateral part of the effective potential:
        -3/16 G^-2 G_mu G^{mu nu} G_nu + 1/4 G^-1 G^{mu nu} G_{,mu nu} + 1/4 G^-1 G_mu G^{mu nu}_{,nu}
        with G = det G_ij.
        """
        d = layer_service.metric_derivatives(surface, q1, q2, u, path)
        G, dG, G_inv = d.G_det, d.dG_det, d.G_inv
        grad_sq = np.einsum("...a,...ab,...b->...", dG, G_inv, dG)
        laplace = np.einsum("...ab,...ab->...", G_inv, d.d2G_det)
        div_inv = np.einsum("...nmn->...m", d.dG_inv)
        drift = np.einsum("...m,...m->...", dG, div_inv)
        return -3.0 / 16.0 * grad_sq / G**2 + 0.25 * laplace / G + 0.25 * drift / G

    def effective_potential(self, surface: SurfaceModel, q1, q2, u,
                            path: DerivativePath = DerivativePath.AUTO) -> np.ndarray:
        q1, q2, u = (np.array(x, dtype=float) for x in np.broadcast_arrays(q1, q2, u))
        c = geometry_service.compute_curvature(surface, q1, q2)
        return self.potential_V1(surface, q1, q2, u, path) + self.potential_V2(c, u)

    def generic_potential(self, surface: SurfaceModel, q1, q2, u, step: Optional[float] = None) -> np.ndarray:
        """
        V = F^i_{,i} + F_i F^i with F_i = (ln G^{1/4})_{,i}, entirely by
        Richardson central differences in (q1, q2, u).
        """
        q1, q2, u = (np.array(x, dtype=float) for x in np.broadcast_arrays(q1, q2, u))
        step = step or 1e-3 * surface.length_scale

        def metric_at(shift):
            c = geometry_service.compute_curvature(surface, q1 + shift[0], q2 + shift[1])
            return layer_service.layer_metric_at(c, u + shift[2])

        def moved(shift, axis, h):
            out = list(shift)
            out[axis] += h
            return out

        def covector(shift):
            parts = [central_difference(lambda h, i=i: 0.25 * np.log(metric_at(moved(shift, i, h)).G_det), step)
                     for i in range(3)]
            return np.stack(parts, axis=-1)

        def contravariant(shift):
            F = covector(shift)
            G_inv = metric_at(shift).G_inv
            lateral = np.einsum("...ab,...b->...a", G_inv, F[..., :2])
            return np.concatenate([lateral, F[..., 2:]], axis=-1), F

        origin = [0.0, 0.0, 0.0]
        divergence = sum(
            central_difference(lambda h, i=i: contravariant(moved(origin, i, h))[0][..., i], step)
            for i in range(3)
        )
        F_up, F = contravariant(origin)
        return divergence + np.sum(F * F_up, axis=-1)

    def domain(self, surface: SurfaceModel, layer: LayerConfig, radius: float,
               quadrature: Optional[QuadratureSpec] = None, breakpoints: Sequence[float] = (),
               path: DerivativePath = DerivativePath.AUTO,
               transverse_breakpoints: Sequence[float] = ()) -> LayerDomain:
        return LayerDomain(surface, layer, radius, quadrature, breakpoints, path,
                           transverse_breakpoints=transverse_breakpoints)

    def integrate(self, domain: LayerDomain, integrand: Callable[[LayerSample], np.ndarray], label: str):
        """
        int G^{1/2} integrand over the interior domain, refined to convergence.

        Returns:
            (value, error_estimate, level)
        """
        def evaluate(level: int):
            total = 0.0
            for sample in domain.samples(level):
                total += float(np.sum(sample.measure * integrand(sample)))
            return total, None

        value, error, level, _ = converge(evaluate, domain.quadrature, label)
        return value, error, level

    def check_admissible(self, trial: TrialFunction, domain: LayerDomain) -> float:
        """
        Largest |trial| on the walls u = -a, a relative to its interior size.

        Raises:
            NonAdmissibleTrial: Dirichlet trace above 1e-10
        """
        walls = domain.boundary_sample()
        trace = float(np.max(np.abs(trial.value(walls)))) if walls.weights.size else 0.0
        interior = domain.samples(0)
        size = max(float(np.max(np.abs(trial.value(s)))) for s in interior)
        relative = trace / max(size, 1.0)
        if relative > DIRICHLET_TRACE_TOLERANCE:
            raise NonAdmissibleTrial(
                f"Trial '{trial.label}' violates the Dirichlet condition at u = +-a (trace {trace:.3e})",
                details={"trace": trace},
            )
        return relative

    def quadratic_form_t(self, trial: TrialFunction, domain: LayerDomain) -> FormValues:
        """
        q1, q2, norm^2 and t = q1 + q2 - kappa_1^2 norm^2 of a trial state.

        The interior |q| <= domain.radius is integrated by tensor quadrature;
        a declared radial tail adds its closed-form exterior contributions
        (flat metric there, so the transverse part cancels the threshold).
        """
        self.check_admissible(trial, domain)
        kappa_sq = domain.layer.kappa1_sq

        def evaluate(level: int):
            q1 = q2 = norm = 0.0
            for sample in domain.samples(level):
                psi = trial.value(sample)
                grad = trial.gradient(sample)
                w = sample.measure
                lateral = grad[..., :2]
                q1 += float(np.sum(w * np.einsum("...a,...ab,...b->...", lateral, sample.metric.G_inv, lateral)))
                q2 += float(np.sum(w * grad[..., 2] ** 2))
                norm += float(np.sum(w * psi * psi))
            return q1 + q2 - kappa_sq * norm, (q1, q2, norm)

        t_in, error, level, (q1, q2, norm) = converge(
            evaluate, domain.quadrature, f"t[{trial.label}]", scale=lambda p: p[0] + p[1]
        )

        t_out = 0.0
        tail = trial.tail
        if tail is not None:
            t_out = tail.kinetic
            q1 += tail.kinetic
            q2 += kappa_sq * tail.mass
            norm += tail.mass

        return FormValues(q1=q1, q2=q2, norm_sq=norm, t=t_in + t_out, error_estimate=error,
                          interior_t=t_in, exterior_t=t_out, level=level)

    def inner_product(self, first: TrialFunction, second: TrialFunction, domain: LayerDomain):
        """(f, g)_G over the interior domain; tails are not included"""
        return self.integrate(domain, lambda s: first.value(s) * second.value(s),
                              f"({first.label}, {second.label})_G")

    def separable_trial(self, profile: Callable, slope: Callable, mode: TransverseMode, support_radius: float,
                        tail: Optional[RadialTail] = None, label: str = "separable") -> TrialFunction:
        """phi(r) chi_n(u) with phi and phi' given as callables of r"""

        def value(s: LayerSample):
            return profile(s.r) * mode.value(s.u)

        def gradient(s: LayerSample):
            r = np.where(s.r > 0, s.r, 1.0)
            radial = np.where(s.r > 0, slope(s.r) / r, 0.0)
            chi = mode.value(s.u)
            return np.stack(np.broadcast_arrays(radial * s.q1 * chi, radial * s.q2 * chi,
                                                profile(s.r) * mode.derivative(s.u)), axis=-1)

        return TrialFunction(value=value, gradient=gradient, support_radius=support_radius, tail=tail,
                             interfaces=(support_radius,), label=label)


# Create a singleton instance
hamiltonian_service = HamiltonianService()

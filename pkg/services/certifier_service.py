"""
Certifier Service
Builds the mollified plateau state and its curvature-driven deformation, minimizes the
trial form over the deformation strength, sweeps the mollifier scale and issues the
bound-state certificate
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit

from exceptions import BadParams, ConfigValidationError, NotCertified
from models import (
    Certificate, CertificateStatus, CertifierConfig, EpsilonResult, EpsilonStatus, LayerConfig,
    LocalizationSpec, RadialTail, SigmaSweepRow, ThicknessReport, TrialFunction,
)
from services.hamiltonian_service import LayerDomain, LayerSample, hamiltonian_service
from services.layer_service import layer_service
from services.specfun_service import MIN_MOLLIFIER_ARGUMENT, specfun_service
from services.surfaces import SurfaceModel

logger = logging.getLogger(__name__)


def smooth_step(x) -> Tuple[np.ndarray, np.ndarray]:
    """
    C-infinity step S(x) = e^{-1/x} / (e^{-1/x} + e^{-1/(1-x)}) and its derivative.

    S is 0 for x <= 0 and 1 for x >= 1. Evaluated as expit(1/(1-x) - 1/x),
    which never forms the underflowing exponentials.
    """
    x = np.asarray(x, dtype=float)
    inside = (x > 0.0) & (x < 1.0)
    xc = np.where(inside, x, 0.5)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        e = 1.0 / (1.0 - xc) - 1.0 / xc
        S = expit(e)
        bell = expit(e) * expit(-e)
        dS = (1.0 / xc**2 + 1.0 / (1.0 - xc) ** 2) * bell
        dS = np.where(bell > 0.0, dS, 0.0)
    value = np.where(x >= 1.0, 1.0, np.where(inside, S, 0.0))
    slope = np.where(inside, dS, 0.0)
    return value, slope


@dataclass(frozen=True)
class PlateauBump:
    """beta(t) = 1 for |t| <= plateau, 0 for |t| >= 1, smooth in between"""

    plateau: float

    def __call__(self, t) -> Tuple[np.ndarray, np.ndarray]:
        t = np.asarray(t, dtype=float)
        width = 1.0 - self.plateau
        S, dS = smooth_step((1.0 - np.abs(t)) / width)
        return S, -np.sign(t) * dS / width


class Localization:
    """Tensor localization j(q,u) of a LocalizationSpec, evaluated on layer samples"""

    def __init__(self, spec: LocalizationSpec):
        self.spec = spec
        self.lateral_bump = PlateauBump(spec.plateau)
        self.transverse_bump = PlateauBump(spec.transverse_plateau)

    @property
    def reach(self) -> float:
        """Largest |q| inside supp j"""
        return math.hypot(*self.spec.center) + self.spec.radius

    @property
    def centered(self) -> bool:
        return self.spec.center == (0.0, 0.0)

    def lateral_breakpoints(self) -> Tuple[float, ...]:
        if not self.centered:
            return ()
        return (self.spec.plateau * self.spec.radius, self.spec.radius)

    def transverse_breakpoints(self) -> Tuple[float, ...]:
        half = self.spec.transverse_half_width
        return (self.spec.transverse_plateau * half, half)

    def evaluate(self, s: LayerSample) -> Tuple[np.ndarray, np.ndarray]:
        """j and its gradient (d/dq1, d/dq2, d/du) on the sample grid"""
        spec = self.spec
        x1 = s.q1 - spec.center[0]
        x2 = s.q2 - spec.center[1]
        dist = np.hypot(x1, x2)
        beta, dbeta = self.lateral_bump(dist / spec.radius)
        safe = np.where(dist > 0.0, dist, 1.0)
        radial = np.where(dist > 0.0, dbeta / (spec.radius * safe), 0.0)
        gamma, dgamma = self.transverse_bump(s.u / spec.transverse_half_width)
        dgamma = dgamma / spec.transverse_half_width
        j = beta * gamma
        grad = np.stack(np.broadcast_arrays(radial * x1 * gamma, radial * x2 * gamma, beta * dgamma), axis=-1)
        return j, grad


class CertifierService:
    """Variational certificate that the layer ground energy lies strictly below kappa_1^2"""

    def default_sigma_grid(self, r0: float, k_min: int = 2, k_max: int = 12) -> Tuple[float, ...]:
        """sigma_k = 10^{-k/2} / r0, descending"""
        return tuple(10.0 ** (-k / 2.0) / r0 for k in range(k_min, k_max + 1))

    def build_mollifier(self, sigma: float, r0: float, layer: LayerConfig) -> TrialFunction:
        """
        psi_sigma = phi_sigma(r) chi_1(u) with phi_sigma = min{1, K_0(sigma r)/K_0(sigma r0)}.

        The exterior r > r0 is flat, so its kinetic energy and mass are
        attached as closed forms instead of being integrated.

        Raises:
            DomainError: sigma or r0 not positive
        """
        norm = specfun_service.mollifier_norm(sigma, r0)
        tail = RadialTail(radius=r0, kinetic=norm.value, mass=specfun_service.mollifier_exterior_mass(sigma, r0))
        mode = hamiltonian_service.transverse_mode(1, layer.a)
        return hamiltonian_service.separable_trial(
            profile=lambda r: specfun_service.mollifier_profile(sigma, r0, r)[0],
            slope=lambda r: specfun_service.mollifier_profile(sigma, r0, r)[1],
            mode=mode,
            support_radius=r0,
            tail=tail,
            label=f"psi[sigma={sigma:.3e}]",
        )

    def _residual(self, s: LayerSample, layer: LayerConfig) -> Tuple[np.ndarray, np.ndarray]:
        """
        (H - kappa_1^2) chi_1 = pi (2/d)^{3/2} (Ku - M)/D sin(kappa_1 u) and its gradient.

        K_mu and M_mu come from the sample's curvature gradient (analytic when
        the surface has third derivatives).
        """
        mode = hamiltonian_service.transverse_mode(1, layer.a)
        amplitude = math.pi * (2.0 / layer.d) ** 1.5
        u = s.u
        K, M, D = s.K, s.M, s.metric.D
        numerator = K * u - M
        f = numerator / D
        sine = np.sin(mode.kappa * u)
        residual = amplitude * f * sine

        grad = s.gradient
        dK = [grad.dK[..., axis] for axis in range(2)]
        dM = [grad.dM[..., axis] for axis in range(2)]
        lateral = [
            amplitude * sine * ((dK[i] * u - dM[i]) * D - numerator * (-2.0 * dM[i] * u + dK[i] * u * u)) / (D * D)
            for i in range(2)
        ]
        df_du = (K * D - 2.0 * numerator * numerator) / (D * D)
        transverse = amplitude * (df_du * sine + f * mode.kappa * np.cos(mode.kappa * u))
        return residual, np.stack(np.broadcast_arrays(lateral[0], lateral[1], transverse), axis=-1)

    def build_theta(self, surface: SurfaceModel, layer: LayerConfig, localization: LocalizationSpec) -> TrialFunction:
        """
        Theta = j^2 (H - kappa_1^2) psi_sigma on supp j, where phi_sigma = 1.

        Vanishes identically where K = M = 0 (in particular for the plane).

        Raises:
            MetricDegenerate: 1 - 2Mu + Ku^2 <= 0 on a sample
        """
        j_model = Localization(localization)

        def value(s: LayerSample):
            j, _ = j_model.evaluate(s)
            residual, _ = self._residual(s, layer)
            return j * j * residual

        def gradient(s: LayerSample):
            j, dj = j_model.evaluate(s)
            residual, dresidual = self._residual(s, layer)
            return 2.0 * (j * residual)[..., None] * dj + (j * j)[..., None] * dresidual

        return TrialFunction(value=value, gradient=gradient, support_radius=j_model.reach,
                             interfaces=j_model.lateral_breakpoints(), label="theta")

    def residual_norm_sq(self, layer: LayerConfig, localization: LocalizationSpec, domain: LayerDomain,
                         sigma: float, r0: float) -> Tuple[float, float]:
        """
        B = ||j (H - kappa_1^2) psi_sigma||_G^2 with the mollifier factor kept explicit.

        phi_sigma is identically 1 on supp j, so the value does not depend on sigma.

        Returns:
            (B, error_estimate)
        """
        j_model = Localization(localization)

        def integrand(s: LayerSample):
            j, _ = j_model.evaluate(s)
            residual, _ = self._residual(s, layer)
            phi, _ = specfun_service.mollifier_profile(sigma, r0, s.r)
            return (j * phi * residual) ** 2

        value, error, _ = hamiltonian_service.integrate(domain, integrand, f"B[sigma={sigma:.3e}]")
        return value, error

    def combine(self, psi: TrialFunction, theta: TrialFunction, eps: float) -> TrialFunction:
        """psi + eps * Theta, keeping the exterior tail of psi"""
        return TrialFunction(
            value=lambda s: psi.value(s) + eps * theta.value(s),
            gradient=lambda s: psi.gradient(s) + eps * theta.gradient(s),
            support_radius=max(psi.support_radius, theta.support_radius),
            tail=psi.tail,
            interfaces=tuple(sorted(set(psi.interfaces + theta.interfaces))),
            label=f"{psi.label}{eps:+.3e}*theta",
        )

    def epsilon_minimize(self, t0: float, B: float, C: float) -> EpsilonResult:
        """
        Minimize t0 + 2 eps B + eps^2 C over eps.

        Returns:
            EpsilonResult with eps_star <= 0; when C <= 0 the form is unbounded
            below along -eps and a finite trial step is reported instead
        """
        if B == 0.0:
            return EpsilonResult(eps_star=0.0, t_min=t0, status=EpsilonStatus.NO_IMPROVEMENT)
        if C > 0.0:
            eps = -B / C
            return EpsilonResult(eps_star=eps, t_min=t0 - B * B / C, status=EpsilonStatus.MINIMUM)
        eps = -(abs(t0) + abs(B)) / abs(B)
        t_min = t0 + 2.0 * eps * B + eps * eps * C
        logger.warning(f"t[theta]={C:.3e} <= 0: form unbounded below, probing eps={eps:.3e}")
        return EpsilonResult(eps_star=eps, t_min=t_min, status=EpsilonStatus.UNBOUNDED_DIRECTION)

    def validate_config(self, surface: SurfaceModel, layer: LayerConfig, config: CertifierConfig) -> None:
        """
        Raises:
            BadParams: surface without compact support
            ConfigValidationError: r0, sigma grid or localization out of range
        """
        if not surface.compactly_supported:
            raise BadParams(f"Surface '{surface.name}' is not a compact deformation of the plane",
                            field="surface.family")
        if config.r0 < surface.support_radius:
            raise ConfigValidationError(
                f"r0={config.r0} is below the deformation support radius {surface.support_radius}",
                field="certify.r0",
            )
        if not config.sigma_grid:
            raise ConfigValidationError("sigma grid is empty", field="certify.sigma_grid")
        for sigma in config.sigma_grid:
            x = sigma * config.r0
            if not (MIN_MOLLIFIER_ARGUMENT <= x < 1.0):
                raise ConfigValidationError(
                    f"sigma*r0={x:.3e} outside [{MIN_MOLLIFIER_ARGUMENT:.0e}, 1)", field="certify.sigma_grid"
                )
        if config.delta_min <= 0.0:
            raise ConfigValidationError("delta_min must be positive", field="certify.delta_min")
        loc = config.localization
        if not (0.0 <= loc.plateau < 1.0 and 0.0 <= loc.transverse_plateau < 1.0):
            raise ConfigValidationError("plateau fractions must lie in [0, 1)", field="certify.localization.plateau")
        if loc.radius <= 0.0 or Localization(loc).reach > config.r0:
            raise ConfigValidationError(
                f"localization disk (reach {Localization(loc).reach:.4g}) must lie inside r0={config.r0}",
                field="certify.localization.radius",
            )
        if not (0.0 < loc.transverse_half_width < layer.a):
            raise ConfigValidationError(
                f"transverse half-width {loc.transverse_half_width} must lie in (0, a={layer.a})",
                field="certify.localization.transverse_half_width",
            )

    def _sweep_row(self, sigma: float, r0: float, interior, B: float, C: float, cross: float,
                   theta_norm: float, errors: Tuple[float, float, float], kappa_sq: float,
                   delta_min: float) -> SigmaSweepRow:
        norm = specfun_service.mollifier_norm(sigma, r0)
        mass = specfun_service.mollifier_exterior_mass(sigma, r0)
        t0 = interior.t + norm.value
        eps = self.epsilon_minimize(t0, B, C)
        e = eps.eps_star
        norm_sq = interior.norm_sq + mass + 2.0 * e * cross + e * e * theta_norm
        error = errors[0] + 2.0 * abs(e) * errors[1] + e * e * errors[2]
        gap = eps.t_min / norm_sq
        # E_ub strictly below kappa_1^2 in floating point
        passed = eps.t_min + error < -delta_min * kappa_sq and kappa_sq + gap < kappa_sq
        logger.info(f"sigma*r0={sigma * r0:.3e}: t0={t0:.6e} t_min={eps.t_min:.6e} gap={gap:.3e} passed={passed}")
        return SigmaSweepRow(
            sigma=sigma, sigma_r0=sigma * r0, t0=t0, B=B, C=C, eps_star=e, t_min=eps.t_min,
            error_estimate=error, norm_sq=norm_sq, energy_gap=gap, mollifier_norm_sq=norm.value,
            loss_of_precision=norm.loss_of_precision, passed=passed,
        )

    def certify(self, surface: SurfaceModel, layer: LayerConfig, config: CertifierConfig,
                thickness: Optional[ThicknessReport] = None) -> Certificate:
        """
        Run the sigma sweep and assemble the certificate.

        Every sigma on the grid is evaluated (closed forms on top of one set of
        interior integrals); the certificate is taken at the first sigma, in
        descending order, whose t_min clears -delta_min kappa_1^2 together with
        its error estimate.

        Raises:
            InvalidThickness: a >= rho_m
            NotCertified: no sigma passes and config.strict is set
        """
        thickness = thickness or layer_service.validate_thickness(surface, layer)
        layer_service.require_valid(thickness)
        self.validate_config(surface, layer, config)

        r0 = config.r0
        grid = sorted(config.sigma_grid, reverse=True)
        kappa_sq = layer.kappa1_sq
        j_model = Localization(config.localization)
        quadrature = config.quadrature
        if surface.is_radial and j_model.centered:
            quadrature = replace(quadrature, refine_angular=False)
        domain = hamiltonian_service.domain(
            surface, layer, r0, quadrature,
            breakpoints=j_model.lateral_breakpoints(),
            transverse_breakpoints=j_model.transverse_breakpoints(),
        )
        logger.info(f"Certifying {surface.name} layer a={layer.a} on r0={r0} over {len(grid)} sigma values")

        psi = self.build_mollifier(grid[0], r0, layer)
        theta = self.build_theta(surface, layer, config.localization)
        interior = hamiltonian_service.quadratic_form_t(replace(psi, tail=None), domain)
        theta_form = hamiltonian_service.quadratic_form_t(theta, domain)
        C = theta_form.t
        B, err_B = self.residual_norm_sq(layer, config.localization, domain, grid[0], r0)
        B_last, _ = self.residual_norm_sq(layer, config.localization, domain, grid[-1], r0)
        cross, _, _ = hamiltonian_service.inner_product(psi, theta, domain)
        theta_norm = theta_form.norm_sq
        logger.info(f"Interior t={interior.t:.6e}, B={B:.6e}, C={C:.6e}, ||theta||^2={theta_norm:.6e}")

        errors = (interior.error_estimate, err_B, theta_form.error_estimate)
        rows = Parallel(n_jobs=config.n_jobs, prefer="threads")(
            delayed(self._sweep_row)(sigma, r0, interior, B, C, cross, theta_norm, errors,
                                     kappa_sq, config.delta_min)
            for sigma in grid
        )

        passed = [row for row in rows if row.passed]
        chosen = passed[0] if passed else min(rows, key=lambda row: row.t_min)
        status = CertificateStatus.CERTIFIED if passed else CertificateStatus.NOT_CERTIFIED

        trial = self.combine(self.build_mollifier(chosen.sigma, r0, layer), theta, chosen.eps_star)
        direct = hamiltonian_service.quadratic_form_t(trial, domain)
        scale = max(abs(chosen.t_min), config.delta_min * kappa_sq)
        assembly_residual = abs(direct.t - chosen.t_min) / scale

        certificate = Certificate(
            status=status,
            kappa1_sq=kappa_sq,
            delta_min=config.delta_min,
            sigma_star=chosen.sigma,
            eps_star=chosen.eps_star,
            t0=chosen.t0,
            B=B,
            C=C,
            t_min=chosen.t_min,
            t_min_direct=direct.t,
            assembly_residual=assembly_residual,
            norm_sq=chosen.norm_sq,
            energy_gap=chosen.energy_gap,
            E_ub=kappa_sq + chosen.energy_gap,
            error_estimate=chosen.error_estimate,
            epsilon_status=self.epsilon_minimize(chosen.t0, B, C).status,
            total_curvature=interior.t,
            theta_norm_sq=theta_norm,
            b_sigma_spread=abs(B - B_last),
            sweep=list(rows),
        )
        logger.info(
            f"Certificate {status.value}: sigma*={chosen.sigma:.3e} eps*={chosen.eps_star:.4e} "
            f"t_min={chosen.t_min:.6e} gap={chosen.energy_gap:.3e} assembly residual {assembly_residual:.2e}"
        )
        if status is CertificateStatus.NOT_CERTIFIED and config.strict:
            raise NotCertified(
                f"No sigma on the grid reached t_min < -{config.delta_min:g} kappa_1^2 (best {chosen.t_min:.3e})",
                details={"best_t_min": chosen.t_min, "best_sigma": chosen.sigma},
            )
        return certificate


# Create a singleton instance
certifier_service = CertifierService()

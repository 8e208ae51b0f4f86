"""
Layer Metric Service
Builds the metric of the layer over a surface, checks the thickness condition,
and supplies Jacobian factors and metric derivatives
"""
import logging
import math
from typing import Optional

import numpy as np

from exceptions import InvalidThickness, MetricDegenerate
from models import (
    CurvatureData, DerivativePath, GridSpec, LayerConfig, LayerMetricDerivatives,
    LayerMetricPoint, ThicknessReport,
)
from services.geometry_service import geometry_service
from services.quadrature_service import central_difference
from services.surfaces import SurfaceModel

logger = logging.getLogger(__name__)


def _expand(x: np.ndarray, extra: int) -> np.ndarray:
    return x.reshape(x.shape + (1,) * extra)


class LayerService:
    """Layer metric G_ij = diag-block(G_{mu nu}, 1) over a valid thickness"""

    def validate_thickness(self, surface: SurfaceModel, cfg: LayerConfig,
                           sampling: Optional[GridSpec] = None) -> ThicknessReport:
        """
        rho_m = 1 / max |k_pm| from a grid supremum with zoom refinement.

        The grid covers the square of half-width sampling.radius (default: the
        support radius); the supremum is re-sampled on ever finer windows
        around the current argmax until it is stable to sampling.tolerance.

        Returns:
            ThicknessReport with rho_m, validity a < rho_m and C_pm = (1 pm a/rho_m)^2
        """
        sampling = sampling or GridSpec()
        radius = sampling.radius or surface.support_radius
        axis = np.linspace(-radius, radius, sampling.nodes)
        q1, q2 = np.meshgrid(axis, axis, indexing="ij")
        kmax = self._max_abs_curvature(surface, q1, q2)
        index = np.unravel_index(int(np.argmax(kmax)), kmax.shape)
        best = float(kmax[index])
        center = (float(q1[index]), float(q2[index]))
        spacing = float(axis[1] - axis[0])

        levels = 0
        if best > 0.0:
            for levels in range(1, sampling.max_levels + 1):
                window = 2.0 * spacing
                spacing = 2.0 * window / (sampling.zoom_nodes - 1)
                z1 = np.linspace(center[0] - window, center[0] + window, sampling.zoom_nodes)
                z2 = np.linspace(center[1] - window, center[1] + window, sampling.zoom_nodes)
                Z1, Z2 = np.meshgrid(z1, z2, indexing="ij")
                zk = self._max_abs_curvature(surface, Z1, Z2)
                zi = np.unravel_index(int(np.argmax(zk)), zk.shape)
                candidate = float(zk[zi])
                change = abs(candidate - best) / best
                if candidate > best:
                    best = candidate
                    center = (float(Z1[zi]), float(Z2[zi]))
                if change <= sampling.tolerance:
                    break

        rho_m = math.inf if best == 0.0 else 1.0 / best
        ratio = 0.0 if math.isinf(rho_m) else cfg.a / rho_m
        report = ThicknessReport(
            a=cfg.a,
            rho_m=rho_m,
            valid=cfg.a < rho_m,
            c_plus=(1.0 + ratio) ** 2,
            c_minus=(1.0 - ratio) ** 2,
            max_curvature=best,
            argmax=center,
            grid_spacing=spacing,
            levels=levels,
        )
        logger.info(f"Thickness check on {surface.name}: rho_m={rho_m:.6g}, a={cfg.a}, valid={report.valid}")
        return report

    def require_valid(self, report: ThicknessReport) -> None:
        if not report.valid:
            raise InvalidThickness(
                f"Layer half-width a={report.a} is not below rho_m={report.rho_m:.6g}",
                field="layer.a",
                details={"rho_m": report.rho_m, "max_curvature": report.max_curvature},
            )

    def _max_abs_curvature(self, surface: SurfaceModel, q1, q2) -> np.ndarray:
        c = geometry_service.compute_curvature(surface, q1, q2)
        return np.maximum(np.abs(c.k_plus), np.abs(c.k_minus))

    def determinant_factor(self, c: CurvatureData, u) -> np.ndarray:
        """D = 1 - 2Mu + Ku^2, broadcast with any trailing u axes"""
        u = np.asarray(u, dtype=float)
        extra = max(u.ndim - np.ndim(c.K), 0)
        return 1.0 - 2.0 * _expand(c.M, extra) * u + _expand(c.K, extra) * u * u

    def layer_metric_at(self, c: CurvatureData, u) -> LayerMetricPoint:
        """
        G_{mu nu} = g (I - u S)(I - u S) with S = g^-1 h, det G = g D^2.

        u may carry trailing axes beyond the curvature sample shape.

        Raises:
            MetricDegenerate: D <= 0 somewhere
        """
        u = np.asarray(u, dtype=float)
        extra = max(u.ndim - np.ndim(c.K), 0)
        D = self.determinant_factor(c, u)
        if np.any(D <= 0):
            raise MetricDegenerate(
                f"1 - 2Mu + Ku^2 <= 0 (min {float(np.min(D)):.3e}); layer map not injective",
                details={"min_D": float(np.min(D))},
            )
        g = c.g.reshape(c.g.shape[:-2] + (1,) * extra + (2, 2))
        S = c.shape_operator.reshape(g.shape)
        A = np.eye(2) - u[..., None, None] * S
        G = g @ A @ A
        G = 0.5 * (G + np.swapaxes(G, -1, -2))
        g_det = _expand(np.linalg.det(c.g), extra)
        G_det = g_det * D * D
        return LayerMetricPoint(
            G=G,
            G_inv=np.linalg.inv(G),
            G_det=G_det,
            G_det_direct=np.linalg.det(G),
            jacobian=np.sqrt(G_det),
            D=D,
        )

    def sandwich_bounds(self, c: CurvatureData, u) -> np.ndarray:
        """Eigenvalues of g^{-1/2} G g^{-1/2}, last axis sorted ascending"""
        metric = self.layer_metric_at(c, u)
        w, V = np.linalg.eigh(c.g)
        g_inv_half = V @ (np.swapaxes(V, -1, -2) / np.sqrt(w)[..., :, None])
        extra = metric.G.ndim - g_inv_half.ndim
        g_inv_half = g_inv_half.reshape(g_inv_half.shape[:-2] + (1,) * extra + (2, 2))
        core = g_inv_half @ metric.G @ g_inv_half
        return np.linalg.eigvalsh(0.5 * (core + np.swapaxes(core, -1, -2)))

    def metric_derivatives(self, surface: SurfaceModel, q1, q2, u,
                           path: DerivativePath = DerivativePath.AUTO) -> LayerMetricDerivatives:
        """
        det G with its first and second q-derivatives and dG^{mu nu}.

        First derivatives are analytic when the surface supplies third
        derivatives (finite differences of G otherwise); second derivatives of
        det G are Richardson central differences of the first derivatives.
        q1, q2 and u must share one shape.
        """
        q1, q2, u = (np.array(x, dtype=float) for x in np.broadcast_arrays(q1, q2, u))
        step = 1e-4 * surface.length_scale
        first = self._first_derivatives(surface, q1, q2, u, path)

        second = []
        for axis in range(2):
            def shifted(offset, axis=axis):
                s1 = q1 + (offset if axis == 0 else 0.0)
                s2 = q2 + (offset if axis == 1 else 0.0)
                return self._first_derivatives(surface, s1, s2, u, path)[2]
            second.append(central_difference(shifted, step))
        d2 = np.stack(second, axis=-2)
        d2 = 0.5 * (d2 + np.swapaxes(d2, -1, -2))
        G_inv, G_det, dG_det, dG_inv = first
        return LayerMetricDerivatives(G_inv=G_inv, G_det=G_det, dG_det=dG_det, d2G_det=d2, dG_inv=dG_inv)

    def _first_derivatives(self, surface, q1, q2, u, path):
        u = np.asarray(u, dtype=float)
        c = geometry_service.compute_curvature(surface, q1, q2)
        metric = self.layer_metric_at(c, u)
        grad = geometry_service.curvature_gradient(surface, q1, q2, path)

        g_inv = c.g_inv
        dg_inv = -np.einsum("...ab,...rbc,...cd->...rad", g_inv, grad.dg, g_inv)
        h = c.h
        # dIII = dh g^-1 h + h dg^-1 h + h g^-1 dh
        dIII = (np.einsum("...rab,...bc,...cd->...rad", grad.dh, g_inv, h)
                + np.einsum("...ab,...rbc,...cd->...rad", h, dg_inv, h)
                + np.einsum("...ab,...bc,...rcd->...rad", h, g_inv, grad.dh))
        uu = u[..., None, None, None]
        dG = grad.dg - 2.0 * uu * grad.dh + uu * uu * dIII
        dG_inv = -np.einsum("...ab,...rbc,...cd->...rad", metric.G_inv, dG, metric.G_inv)

        g_det = np.linalg.det(c.g)
        d_g_det = g_det[..., None] * np.einsum("...ab,...rba->...r", g_inv, grad.dg)
        dD = -2.0 * u[..., None] * grad.dM + (u * u)[..., None] * grad.dK
        D = metric.D
        dG_det = d_g_det * (D * D)[..., None] + 2.0 * (g_det * D)[..., None] * dD
        return metric.G_inv, metric.G_det, dG_det, dG_inv


# Create a singleton instance
layer_service = LayerService()

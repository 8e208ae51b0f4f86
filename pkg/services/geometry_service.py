"""
Surface Geometry Service
Normals, fundamental forms, curvatures and total curvature of a reference surface
"""
import logging
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from exceptions import DegenerateParametrization
from models import (
    CharacteristicResidual, CurvatureData, CurvatureGradient, CurvaturePart,
    DerivativePath, QuadratureSpec, TotalCurvature,
)
from services.quadrature_service import converge, disk_rule
from services.surfaces import SurfaceModel

logger = logging.getLogger(__name__)

DEGENERACY_RATIO = 1e-13
UMBILIC_TOLERANCE = 1e-10


def _adjugate(m: np.ndarray) -> np.ndarray:
    adj = np.empty_like(m)
    adj[..., 0, 0] = m[..., 1, 1]
    adj[..., 1, 1] = m[..., 0, 0]
    adj[..., 0, 1] = -m[..., 0, 1]
    adj[..., 1, 0] = -m[..., 1, 0]
    return adj


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


class GeometryService:
    """Pointwise differential geometry of Monge-type and general parametrized surfaces"""

    def _unnormalized_normal(self, J: np.ndarray):
        p1, p2 = J[..., 0, :], J[..., 1, :]
        N = np.cross(p1, p2)
        norm = np.linalg.norm(N, axis=-1)
        scale = np.linalg.norm(p1, axis=-1) * np.linalg.norm(p2, axis=-1)
        bad = norm < DEGENERACY_RATIO * scale
        if np.any(bad):
            where = np.argwhere(np.atleast_1d(bad))[0]
            raise DegenerateParametrization(
                f"p_1 x p_2 vanishes (|N| < 1e-13 |p_1||p_2|) at sample index {where.tolist()}"
            )
        return N, norm

    def compute_normal(self, surface: SurfaceModel, q1, q2, orientation: int = 1) -> np.ndarray:
        """
        Unit normal (p_1 x p_2)/|p_1 x p_2|.

        Args:
            orientation: +1 for the cross-product convention, -1 to flip it

        Returns:
            array of shape S + (3,)
        """
        N, norm = self._unnormalized_normal(surface.jacobian(q1, q2))
        return orientation * N / norm[..., None]

    def compute_curvature(self, surface: SurfaceModel, q1, q2, orientation: int = 1) -> CurvatureData:
        J = surface.jacobian(q1, q2)
        H = surface.hessian(q1, q2)
        N, norm = self._unnormalized_normal(J)
        n = orientation * N / norm[..., None]

        g = np.einsum("...ai,...bi->...ab", J, J)
        h = _symmetrize(np.einsum("...i,...abi->...ab", n, H))
        g_inv = _symmetrize(np.linalg.inv(g))

        # n_{,mu} from d(N/|N|)
        p1, p2 = J[..., 0, :], J[..., 1, :]
        dN = np.cross(H[..., :, 0, :], p2[..., None, :]) + np.cross(p1[..., None, :], H[..., :, 1, :])
        dN = orientation * dN
        dn = (dN - n[..., None, :] * np.einsum("...i,...ai->...a", n, dN)[..., None]) / norm[..., None, None]
        third = _symmetrize(np.einsum("...ai,...bi->...ab", dn, dn))

        weingarten = h @ g_inv
        K = np.linalg.det(h) / np.linalg.det(g)
        M = 0.5 * np.einsum("...ab,...ba->...", g_inv, h)
        disc = np.sqrt(np.maximum(M * M - K, 0.0))
        k_plus, k_minus = M + disc, M - disc
        scale = np.maximum(1.0, np.maximum(np.abs(k_plus), np.abs(k_minus)))
        umbilic = (k_plus - k_minus) <= UMBILIC_TOLERANCE * scale

        directions = self._principal_directions(weingarten, k_plus, k_minus, umbilic)
        return CurvatureData(
            normal=n, g=g, g_inv=g_inv, h=h, weingarten=weingarten, K=K, M=M,
            k_plus=k_plus, k_minus=k_minus, principal_directions=directions,
            third_form=third, umbilic=umbilic,
        )

    def _principal_directions(self, W: np.ndarray, k_plus, k_minus, umbilic) -> np.ndarray:
        """Left eigenvectors T_mu h_mu^nu = k T_nu, Euclidean-normalised; slot 0 is k+"""
        out = np.empty(W.shape)
        for slot, k in enumerate((k_plus, k_minus)):
            # rows of (W - k I)^T annihilate T; pick the better-conditioned null vector
            a = np.stack([W[..., 1, 0], k - W[..., 0, 0]], axis=-1)
            b = np.stack([k - W[..., 1, 1], W[..., 0, 1]], axis=-1)
            na = np.linalg.norm(a, axis=-1)
            nb = np.linalg.norm(b, axis=-1)
            v = np.where((na >= nb)[..., None], a, b)
            nv = np.maximum(na, nb)
            fallback = np.zeros_like(v)
            fallback[..., slot] = 1.0
            degenerate = umbilic | (nv < 1e-300)
            v = np.where(degenerate[..., None], fallback, v / np.where(nv > 0, nv, 1.0)[..., None])
            out[..., slot, :] = v
        return out

    def verify_characteristic_equation(self, c: CurvatureData) -> CharacteristicResidual:
        """max_pm |k^2 - 2Mk + K| and the Frobenius residual of W^2 - 2MW + K I"""
        residuals = [np.abs(k * k - 2.0 * c.M * k + c.K) for k in (c.k_plus, c.k_minus)]
        eigen = float(np.max(np.maximum(residuals[0], residuals[1]))) if np.size(c.K) else 0.0
        W = c.weingarten
        matrix = W @ W - 2.0 * c.M[..., None, None] * W + c.K[..., None, None] * np.eye(2)
        frob = float(np.max(np.linalg.norm(matrix, axis=(-2, -1)))) if np.size(c.K) else 0.0
        return CharacteristicResidual(eigenvalue_residual=eigen, matrix_residual=frob)

    def third_form_residual(self, c: CurvatureData) -> dict:
        """Residuals of III = -K g + 2M h and III = h g^-1 h"""
        via_curvatures = -c.K[..., None, None] * c.g + 2.0 * c.M[..., None, None] * c.h
        via_shape = c.h @ c.g_inv @ c.h
        return {
            "curvature_form": float(np.max(np.abs(c.third_form - via_curvatures))),
            "shape_form": float(np.max(np.abs(c.third_form - via_shape))),
        }

    def surface_potential(self, c: CurvatureData) -> np.ndarray:
        """Thin-layer potential K - M^2 = -(k+ - k-)^2 / 4"""
        return c.K - c.M * c.M

    def curvature_gradient(self, surface: SurfaceModel, q1, q2,
                           path: DerivativePath = DerivativePath.AUTO, step: Optional[float] = None) -> CurvatureGradient:
        """
        q-derivatives of g, h, K and M.

        Analytic when the surface supplies third derivatives, otherwise
        Richardson central differences with step 1e-5 * length scale.
        """
        if path is DerivativePath.ANALYTIC or (path is DerivativePath.AUTO and surface.has_third_derivatives):
            return self._analytic_gradient(surface, q1, q2)
        return self._fd_gradient(surface, q1, q2, step or 1e-5 * surface.length_scale)

    def _analytic_gradient(self, surface: SurfaceModel, q1, q2) -> CurvatureGradient:
        J = surface.jacobian(q1, q2)
        H = surface.hessian(q1, q2)
        T = surface.third_derivatives(q1, q2)
        N, norm = self._unnormalized_normal(J)
        n = N / norm[..., None]
        p1, p2 = J[..., 0, :], J[..., 1, :]
        dN = np.cross(H[..., :, 0, :], p2[..., None, :]) + np.cross(p1[..., None, :], H[..., :, 1, :])
        dn = (dN - n[..., None, :] * np.einsum("...i,...ai->...a", n, dN)[..., None]) / norm[..., None, None]

        g = np.einsum("...ai,...bi->...ab", J, J)
        h = np.einsum("...i,...abi->...ab", n, H)
        # dg[r, m, n] = p_{m r} . p_n + p_m . p_{n r}
        dg = np.einsum("...mri,...ni->...rmn", H, J) + np.einsum("...mi,...nri->...rmn", J, H)
        dh = np.einsum("...ri,...mni->...rmn", dn, H) + np.einsum("...i,...mnri->...rmn", n, T)
        dh = _symmetrize(dh)

        det_g = np.linalg.det(g)
        det_h = np.linalg.det(h)
        g_inv = np.linalg.inv(g)
        d_det_g = np.einsum("...ab,...rba->...r", _adjugate(g), dg)
        d_det_h = np.einsum("...ab,...rba->...r", _adjugate(h), dh)
        dK = (d_det_h * det_g[..., None] - det_h[..., None] * d_det_g) / (det_g**2)[..., None]
        dg_inv = -np.einsum("...ab,...rbc,...cd->...rad", g_inv, dg, g_inv)
        dM = 0.5 * (np.einsum("...rab,...ba->...r", dg_inv, h) + np.einsum("...ab,...rba->...r", g_inv, dh))
        return CurvatureGradient(dg=dg, dh=dh, dK=dK, dM=dM, path=DerivativePath.ANALYTIC)

    def _fd_gradient(self, surface: SurfaceModel, q1, q2, step: float) -> CurvatureGradient:
        q1, q2 = np.broadcast_arrays(np.asarray(q1, dtype=float), np.asarray(q2, dtype=float))
        parts = {"g": [], "h": [], "K": [], "M": []}
        for axis in range(2):
            def at(offset, axis=axis):
                c = self.compute_curvature(surface, q1 + (offset if axis == 0 else 0.0),
                                           q2 + (offset if axis == 1 else 0.0))
                return c

            def diff(h):
                plus, minus = at(h), at(-h)
                return {key: (getattr(plus, key) - getattr(minus, key)) / (2.0 * h) for key in parts}

            coarse, fine = diff(step), diff(0.5 * step)
            for key in parts:
                parts[key].append((4.0 * fine[key] - coarse[key]) / 3.0)
        return CurvatureGradient(
            dg=np.stack(parts["g"], axis=-3),
            dh=np.stack(parts["h"], axis=-3),
            dK=np.stack(parts["K"], axis=-1),
            dM=np.stack(parts["M"], axis=-1),
            path=DerivativePath.FINITE_DIFFERENCE,
        )

    def _sign_change_radii(self, surface: SurfaceModel, radius: float, samples: int = 2049) -> Sequence[float]:
        """Zeros of K along the q1-axis; radial surfaces change sign only on circles"""
        r = np.linspace(0.0, radius, samples)[1:-1]
        K = self.compute_curvature(surface, r, np.zeros_like(r)).K
        tiny = 1e-14 * max(float(np.max(np.abs(K))), 1e-300)
        roots = []
        for i in np.nonzero(np.sign(K[:-1]) * np.sign(K[1:]) < 0)[0]:
            if abs(K[i]) > tiny and abs(K[i + 1]) > tiny:
                f = lambda x: float(self.compute_curvature(surface, x, 0.0).K)
                roots.append(brentq(f, r[i], r[i + 1], xtol=1e-14 * radius))
        return roots

    def total_curvature(self, surface: SurfaceModel, quadrature: Optional[QuadratureSpec] = None,
                        part: CurvaturePart = CurvaturePart.ALL) -> TotalCurvature:
        """
        Integral of K g^{1/2} over the disk |q| <= support radius.

        Polar Gauss-Legendre panels in r (with breakpoints at the K sign
        changes of radial surfaces when a signed part is requested) and the
        periodic trapezoid rule in theta, refined dyadically.

        Raises:
            QuadratureDivergence: successive refinements differ by more than tolerance
        """
        spec = quadrature or QuadratureSpec(radial_panels=8, order=12, angular_nodes=16, max_level=6, tolerance=1e-8,
                                            relative_tolerance=0.0)
        radius = surface.support_radius
        breakpoints: Sequence[float] = ()
        if part is not CurvaturePart.ALL and surface.is_radial:
            breakpoints = self._sign_change_radii(surface, radius)
            logger.info(f"K changes sign at radii {[round(b, 6) for b in breakpoints]}")

        def evaluate(level: int):
            s = spec.at_level(level)
            rule = disk_rule(radius, s.radial_panels, s.order, s.angular_nodes, breakpoints)
            c = self.compute_curvature(surface, rule.q1, rule.q2)
            integrand = c.K * np.sqrt(c.g_det)
            if part is CurvaturePart.POSITIVE:
                integrand = np.maximum(integrand, 0.0)
            elif part is CurvaturePart.NEGATIVE:
                integrand = np.minimum(integrand, 0.0)
            return float(np.sum(integrand * rule.weights)), None

        value, error, level, _ = converge(evaluate, spec, f"Tot[{part.value}] on {surface.name}", scale=0.0)
        return TotalCurvature(value=value, error_estimate=error, level=level, part=part)

    def geometry_extrema(self, surface: SurfaceModel, nodes: int = 201) -> dict:
        """Sampled min/max of K and M over the support square"""
        radius = surface.support_radius
        axis = np.linspace(-radius, radius, nodes)
        q1, q2 = np.meshgrid(axis, axis, indexing="ij")
        c = self.compute_curvature(surface, q1, q2)
        return {
            "K_min": float(np.min(c.K)),
            "K_max": float(np.max(c.K)),
            "M_min": float(np.min(c.M)),
            "M_max": float(np.max(c.M)),
            "grid_spacing": float(axis[1] - axis[0]),
        }


# Create a singleton instance
geometry_service = GeometryService()

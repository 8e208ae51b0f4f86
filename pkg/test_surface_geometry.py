"""
Test script for the surface models and the pointwise geometry service
"""
import math

import numpy as np
import pytest

from exceptions import BadParams, DegenerateParametrization, UnknownSurface
from models import CurvaturePart, DerivativePath
from services.geometry_service import geometry_service
from services.surfaces import CompactBumpSurface, FiniteDifferenceSurface, SurfaceModel, builtin_surface

BUMP_Q1 = np.array([0.3, 1.2, -0.7, 2.0, 0.0])
BUMP_Q2 = np.array([0.1, -0.5, 1.4, 0.3, 0.0])


class FoldedSurface(SurfaceModel):
    """Tangent vectors are parallel everywhere"""

    name = "folded"

    def evaluate(self, q1, q2):
        q1, q2 = np.broadcast_arrays(np.asarray(q1, float), np.asarray(q2, float))
        return np.stack([q1 + 2.0 * q2, np.zeros_like(q1), np.zeros_like(q1)], axis=-1)

    def jacobian(self, q1, q2):
        q1 = np.asarray(q1, float)
        out = np.zeros(q1.shape + (2, 3))
        out[..., 0, 0] = 1.0
        out[..., 1, 0] = 2.0
        return out

    def hessian(self, q1, q2):
        return np.zeros(np.shape(q1) + (2, 2, 3))


def test_plane_is_flat(plane):
    q1, q2 = np.meshgrid(np.linspace(-2, 2, 5), np.linspace(-2, 2, 5))
    c = geometry_service.compute_curvature(plane, q1, q2)
    assert np.all(c.K == 0.0)
    assert np.all(c.M == 0.0)
    assert np.allclose(c.normal, [0.0, 0.0, 1.0])
    assert np.all(c.umbilic)


def test_sphere_patch_curvatures(sphere):
    rng = np.random.default_rng(3)
    r = 0.9 * np.sqrt(rng.uniform(size=50))
    theta = rng.uniform(0, 2 * np.pi, size=50)
    c = geometry_service.compute_curvature(sphere, r * np.cos(theta), r * np.sin(theta))
    assert np.allclose(c.K, 0.25, atol=1e-12)
    assert np.allclose(c.M, 0.5, atol=1e-12)
    assert np.allclose(geometry_service.surface_potential(c), 0.0, atol=1e-12)


def test_orientation_flips_normal_and_mean_curvature(bump):
    up = geometry_service.compute_curvature(bump, BUMP_Q1, BUMP_Q2)
    down = geometry_service.compute_curvature(bump, BUMP_Q1, BUMP_Q2, orientation=-1)
    assert np.allclose(up.normal, -down.normal)
    assert np.allclose(up.M, -down.M, atol=1e-14)
    assert np.allclose(up.K, down.K, atol=1e-14)
    assert np.allclose(geometry_service.compute_normal(bump, BUMP_Q1, BUMP_Q2), up.normal)


def test_characteristic_and_third_form_identities(bump):
    c = geometry_service.compute_curvature(bump, BUMP_Q1, BUMP_Q2)
    residual = geometry_service.verify_characteristic_equation(c)
    assert residual.eigenvalue_residual < 1e-10
    assert residual.matrix_residual < 1e-10
    third = geometry_service.third_form_residual(c)
    assert third["curvature_form"] < 1e-9
    assert third["shape_form"] < 1e-9
    assert np.allclose(c.K, c.k_plus * c.k_minus, atol=1e-12)
    assert np.allclose(c.M, 0.5 * (c.k_plus + c.k_minus), atol=1e-12)


def test_principal_directions_of_radial_surface(bump):
    c = geometry_service.compute_curvature(bump, np.array([1.0]), np.array([0.0]))
    directions = np.abs(c.principal_directions[0])
    assert np.allclose(directions, np.eye(2), atol=1e-10) or np.allclose(directions, np.eye(2)[::-1], atol=1e-10)


def test_analytic_gradient_matches_finite_differences(bump):
    analytic = geometry_service.curvature_gradient(bump, BUMP_Q1, BUMP_Q2, DerivativePath.ANALYTIC)
    numeric = geometry_service.curvature_gradient(bump, BUMP_Q1, BUMP_Q2, DerivativePath.FINITE_DIFFERENCE)
    assert analytic.path is DerivativePath.ANALYTIC
    assert numeric.path is DerivativePath.FINITE_DIFFERENCE
    assert np.allclose(analytic.dK, numeric.dK, atol=1e-6)
    assert np.allclose(analytic.dM, numeric.dM, atol=1e-6)
    assert np.allclose(analytic.dg, numeric.dg, atol=1e-6)


def test_finite_difference_surface_matches_analytic(sphere):
    R = 2.0

    def cap(q1, q2):
        return np.stack([q1, q2, R - np.sqrt(R * R - q1 * q1 - q2 * q2)], axis=-1)

    wrapped = FiniteDifferenceSurface(cap, support_radius=1.0, length_scale=R, flat_outside=False)
    q1 = np.array([0.0, 0.4, -0.3, 0.5])
    q2 = np.array([0.0, 0.2, 0.6, -0.5])
    exact = geometry_service.compute_curvature(sphere, q1, q2)
    approx = geometry_service.compute_curvature(wrapped, q1, q2)
    assert np.allclose(approx.K, exact.K, atol=1e-6)
    assert np.allclose(approx.M, exact.M, atol=1e-6)
    assert not wrapped.has_third_derivatives


def test_degenerate_parametrization_is_rejected():
    with pytest.raises(DegenerateParametrization):
        geometry_service.compute_normal(FoldedSurface(), np.array([0.0, 1.0]), np.array([0.0, 0.0]))


@pytest.mark.parametrize("height", [0.2, 0.5, 1.0])
def test_total_curvature_of_compact_bump_vanishes(height):
    bump = CompactBumpSurface(h=height, s=3.0)
    total = geometry_service.total_curvature(bump)
    assert abs(total.value) < 1e-6
    positive = geometry_service.total_curvature(bump, part=CurvaturePart.POSITIVE)
    negative = geometry_service.total_curvature(bump, part=CurvaturePart.NEGATIVE)
    assert positive.value > 0.0 > negative.value
    assert abs(positive.value + negative.value - total.value) < 1e-6


def test_total_curvature_of_spherical_cap(sphere):
    total = geometry_service.total_curvature(sphere)
    expected = math.pi * (2.0 - math.sqrt(3.0))
    assert abs(total.value - expected) / expected < 1e-7


def test_geometry_extrema(sphere, plane):
    extrema = geometry_service.geometry_extrema(sphere, nodes=21)
    assert extrema["K_min"] == pytest.approx(0.25, abs=1e-12)
    assert extrema["M_max"] == pytest.approx(0.5, abs=1e-12)
    flat = geometry_service.geometry_extrema(plane, nodes=11)
    assert flat["K_min"] == flat["K_max"] == 0.0


def test_builtin_surface_errors():
    with pytest.raises(UnknownSurface) as info:
        builtin_surface("torus")
    assert info.value.field == "surface.family"
    with pytest.raises(BadParams):
        builtin_surface("compact-bump", {"h": 1.0})
    with pytest.raises(BadParams):
        builtin_surface("plane", {"radius": 2.0})
    with pytest.raises(BadParams):
        builtin_surface("sphere-patch-test", {"R": 1.0, "patch_radius": 2.0})


def test_builtin_surface_families():
    bump = builtin_surface("compact-bump", {"h": 0.5, "s": 2.0})
    assert bump.support_radius == 2.0
    assert bump.describe()["third_derivatives"]
    assert np.all(bump.height(np.array([2.0, 2.5, 10.0])) == 0.0)
    assert bump.height(0.0) == pytest.approx(0.5 * math.exp(-1.0))
    assert not builtin_surface("sphere-patch-test").compactly_supported


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

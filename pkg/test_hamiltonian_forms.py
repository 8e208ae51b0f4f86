"""
Test script for transverse modes, effective potentials and trial-state quadratic forms
"""
import math
from dataclasses import replace

import numpy as np
import pytest

from exceptions import NonAdmissibleTrial
from models import LayerConfig, QuadratureSpec, RadialTail, TrialFunction
from services.geometry_service import geometry_service
from services.hamiltonian_service import hamiltonian_service
from services.layer_service import layer_service

DOMAIN_RADIUS = 1.5


def polynomial_profile(r):
    s = np.minimum(r / DOMAIN_RADIUS, 1.0)
    return (1.0 - s * s) ** 2


def polynomial_slope(r):
    s = np.minimum(r / DOMAIN_RADIUS, 1.0)
    return -4.0 * s * (1.0 - s * s) / DOMAIN_RADIUS


@pytest.mark.parametrize("a", [0.3, 1.0, 2.0])
def test_transverse_mode_identities(a):
    assert hamiltonian_service.orthonormality_residual(a) < 1e-12
    assert hamiltonian_service.u_squared_identity(a) == pytest.approx(1.0, abs=1e-10)
    mode = hamiltonian_service.transverse_mode(1, a)
    assert mode.kappa_sq == pytest.approx((math.pi / (2.0 * a)) ** 2)
    assert abs(float(mode.value(a))) < 1e-15


def test_transverse_reduction_gives_gauss_curvature(bump, thin_layer):
    q1 = np.array([0.2, 1.0, -1.6, 2.2])
    q2 = np.array([0.0, 0.7, 0.4, -0.9])
    c = geometry_service.compute_curvature(bump, q1, q2)
    reduced = hamiltonian_service.transverse_reduction(c, thin_layer)
    assert np.allclose(reduced, c.K * np.sqrt(c.g_det), atol=1e-10)


def test_plane_has_no_effective_potential(plane, unit_layer):
    q1 = np.array([0.1, 0.5, -0.3])
    q2 = np.array([0.2, -0.4, 0.6])
    u = np.array([0.0, 0.5, -0.5])
    assert np.allclose(hamiltonian_service.effective_potential(plane, q1, q2, u), 0.0, atol=1e-12)


def test_umbilic_surface_has_no_surface_potential(sphere, thin_layer):
    c = geometry_service.compute_curvature(sphere, np.array([0.0]), np.array([0.0]))
    assert np.allclose(hamiltonian_service.potential_V2(c, np.array([0.2])), 0.0, atol=1e-14)
    assert np.allclose(hamiltonian_service.surface_potential(c), 0.0, atol=1e-14)


def test_effective_potential_matches_generic_formula(sphere):
    q1 = np.array([0.1, -0.4, 0.6])
    q2 = np.array([0.3, 0.2, -0.5])
    u = np.array([0.1, -0.2, 0.05])
    direct = hamiltonian_service.effective_potential(sphere, q1, q2, u)
    generic = hamiltonian_service.generic_potential(sphere, q1, q2, u)
    assert np.max(np.abs(direct - generic) / np.maximum(1.0, np.abs(generic))) < 1e-6


def test_layer_volume(plane, unit_layer):
    domain = hamiltonian_service.domain(plane, unit_layer, DOMAIN_RADIUS)
    volume, _, _ = hamiltonian_service.integrate(domain, lambda s: np.ones_like(s.weights), "volume")
    assert volume == pytest.approx(math.pi * DOMAIN_RADIUS**2 * 2.0 * unit_layer.a, rel=1e-10)


def test_quadratic_form_of_flat_trial(plane, unit_layer):
    domain = hamiltonian_service.domain(plane, unit_layer, DOMAIN_RADIUS)
    mode = hamiltonian_service.transverse_mode(1, unit_layer.a)
    trial = hamiltonian_service.separable_trial(polynomial_profile, polynomial_slope, mode, DOMAIN_RADIUS)
    form = hamiltonian_service.quadratic_form_t(trial, domain)
    assert form.t == pytest.approx(4.0 * math.pi / 3.0, rel=1e-6)
    assert form.norm_sq == pytest.approx(math.pi * DOMAIN_RADIUS**2 / 5.0, rel=1e-8)
    assert form.q2 == pytest.approx(unit_layer.kappa1_sq * form.norm_sq, rel=1e-8)
    assert form.exterior_t == 0.0


def test_declared_tail_adds_closed_forms(plane, unit_layer):
    domain = hamiltonian_service.domain(plane, unit_layer, DOMAIN_RADIUS)
    mode = hamiltonian_service.transverse_mode(1, unit_layer.a)
    tail = RadialTail(radius=DOMAIN_RADIUS, kinetic=0.5, mass=2.0)
    bare = hamiltonian_service.separable_trial(polynomial_profile, polynomial_slope, mode, DOMAIN_RADIUS)
    tailed = hamiltonian_service.separable_trial(polynomial_profile, polynomial_slope, mode, DOMAIN_RADIUS, tail)
    without = hamiltonian_service.quadratic_form_t(bare, domain)
    with_tail = hamiltonian_service.quadratic_form_t(tailed, domain)
    assert with_tail.t == pytest.approx(without.t + 0.5, rel=1e-12)
    assert with_tail.norm_sq == pytest.approx(without.norm_sq + 2.0, rel=1e-12)


def test_inner_product_of_orthogonal_modes(plane, unit_layer):
    quadrature = QuadratureSpec(radial_panels=4, order=8, angular_nodes=8, transverse_order=16, max_level=2)
    domain = hamiltonian_service.domain(plane, unit_layer, DOMAIN_RADIUS, quadrature)
    first = hamiltonian_service.separable_trial(polynomial_profile, polynomial_slope,
                                                hamiltonian_service.transverse_mode(1, unit_layer.a), DOMAIN_RADIUS)
    second = hamiltonian_service.separable_trial(polynomial_profile, polynomial_slope,
                                                 hamiltonian_service.transverse_mode(2, unit_layer.a), DOMAIN_RADIUS)
    value, _, _ = hamiltonian_service.inner_product(first, second, domain)
    assert abs(value) < 1e-10


def test_trial_without_dirichlet_trace_is_rejected(plane, unit_layer):
    domain = hamiltonian_service.domain(plane, unit_layer, DOMAIN_RADIUS)
    trial = TrialFunction(
        value=lambda s: polynomial_profile(s.r) * np.ones_like(s.u),
        gradient=lambda s: np.zeros(np.broadcast(s.r, s.u).shape + (3,)),
        support_radius=DOMAIN_RADIUS,
        label="constant-in-u",
    )
    with pytest.raises(NonAdmissibleTrial):
        hamiltonian_service.quadratic_form_t(trial, domain)


def test_plateau_state_form_is_total_curvature(bump):
    layer = LayerConfig(a=0.5)
    quadrature = QuadratureSpec(radial_panels=16, order=10, angular_nodes=4, transverse_order=12, max_level=4,
                                tolerance=1e-9, relative_tolerance=1e-9, refine_angular=False)
    domain = hamiltonian_service.domain(bump, layer, bump.support_radius, quadrature)
    mode = hamiltonian_service.transverse_mode(1, layer.a)
    plateau = hamiltonian_service.separable_trial(np.ones_like, np.zeros_like, mode, bump.support_radius)
    form = hamiltonian_service.quadratic_form_t(plateau, domain)
    assert abs(form.t) < 1e-6


def test_surface_potential_from_principal_curvatures(plane):
    c = geometry_service.compute_curvature(plane, np.zeros(1), np.zeros(1))
    k_plus, k_minus = 0.2, -0.1
    saddle = replace(c, K=np.array([k_plus * k_minus]), M=np.array([0.5 * (k_plus + k_minus)]))
    value = float(hamiltonian_service.potential_V2(saddle, np.zeros(1))[0])
    assert value == pytest.approx(-0.0225, rel=1e-12)
    assert np.all(hamiltonian_service.potential_V2(c, np.array([0.3])) == 0.0)


def test_surface_potential_is_never_positive(bump, sphere, thin_layer):
    rng = np.random.default_rng(3)
    q1, q2 = rng.uniform(-2.8, 2.8, size=(2, 300))
    u = thin_layer.a * rng.uniform(-0.9, 0.9, size=300)
    c = geometry_service.compute_curvature(bump, q1, q2)
    assert np.all(hamiltonian_service.potential_V2(c, u) <= 1e-15)
    apex = geometry_service.compute_curvature(bump, np.zeros(1), np.zeros(1))
    assert abs(float(hamiltonian_service.potential_V2(apex, np.array([0.2]))[0])) < 1e-12
    cap = geometry_service.compute_curvature(sphere, 0.5 * q1[:50] / 2.8, 0.5 * q2[:50] / 2.8)
    assert np.allclose(hamiltonian_service.potential_V2(cap, u[:50]), 0.0, atol=1e-12)


def test_second_transverse_mode_pays_the_gap(plane, unit_layer):
    domain = hamiltonian_service.domain(plane, unit_layer, DOMAIN_RADIUS)
    first = hamiltonian_service.transverse_mode(1, unit_layer.a)
    second = hamiltonian_service.transverse_mode(2, unit_layer.a)
    assert second.kappa_sq == pytest.approx(4.0 * first.kappa_sq)
    trial = hamiltonian_service.separable_trial(polynomial_profile, polynomial_slope, second, DOMAIN_RADIUS)
    form = hamiltonian_service.quadratic_form_t(trial, domain)
    norm_sq = math.pi * DOMAIN_RADIUS**2 / 5.0
    expected = 4.0 * math.pi / 3.0 + (second.kappa_sq - first.kappa_sq) * norm_sq
    assert form.norm_sq == pytest.approx(norm_sq, rel=1e-8)
    assert form.t == pytest.approx(expected, rel=1e-6)
    assert form.t > 0.0


def test_lateral_form_is_sandwiched_by_the_surface_form(bump, thin_layer):
    radius = 2.5
    thickness = layer_service.validate_thickness(bump, thin_layer)
    mode = hamiltonian_service.transverse_mode(1, thin_layer.a)
    domain = hamiltonian_service.domain(bump, thin_layer, bump.support_radius, breakpoints=(radius,))

    def profile(r):
        s = np.minimum(r / radius, 1.0)
        return (1.0 - s * s) ** 2

    def slope(r):
        s = np.minimum(r / radius, 1.0)
        return -4.0 * s * (1.0 - s * s) / radius

    def surface_form(s):
        r = np.where(s.r > 0, s.r, 1.0)
        radial = np.where(s.r > 0, slope(s.r) / r, 0.0)
        grad = np.stack(np.broadcast_arrays(radial * s.q1, radial * s.q2), axis=-1)
        density = np.einsum("...a,...ab,...b->...", grad, s.curvature.g_inv, grad)
        # G^{1/2} = g^{1/2} D and chi_1 is normalized in u
        return density * mode.value(s.u) ** 2 / s.metric.D

    trial = hamiltonian_service.separable_trial(profile, slope, mode, radius)
    form = hamiltonian_service.quadratic_form_t(trial, domain)
    lateral, _, _ = hamiltonian_service.integrate(domain, surface_form, "surface form")
    assert lateral > 0.0
    assert form.q1 <= thickness.c_plus * lateral * (1.0 + 1e-8)
    assert form.q1 >= thickness.c_minus * lateral * (1.0 - 1e-8)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

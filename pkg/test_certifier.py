"""
Test script for the bound-state certifier
"""
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from exceptions import BadParams, ConfigValidationError, NotCertified
from models import (
    CertificateStatus, CertifierConfig, EpsilonStatus, LocalizationSpec, QuadratureSpec,
)
from services.certifier_service import Localization, PlateauBump, certifier_service, smooth_step
from services.hamiltonian_service import LayerSample, hamiltonian_service

CONFIG_DIR = Path(__file__).parent / "configs"


def bump_config(**changes) -> CertifierConfig:
    config = CertifierConfig(
        r0=3.0,
        sigma_grid=certifier_service.default_sigma_grid(3.0, 2, 6),
        localization=LocalizationSpec(radius=3.0, transverse_half_width=0.45, plateau=0.7, transverse_plateau=0.6),
    )
    return replace(config, **changes)


def plane_config(quadrature: QuadratureSpec, strict: bool = False) -> CertifierConfig:
    return CertifierConfig(
        r0=1.0,
        sigma_grid=certifier_service.default_sigma_grid(1.0, 2, 6),
        localization=LocalizationSpec(radius=1.0, transverse_half_width=0.8),
        quadrature=quadrature,
        strict=strict,
    )


def test_smooth_step_values():
    x = np.array([-1.0, 0.0, 0.5, 1.0, 2.0])
    S, dS = smooth_step(x)
    assert np.array_equal(S, [0.0, 0.0, 0.5, 1.0, 1.0])
    assert dS[2] == pytest.approx(2.0)
    assert np.all(dS[[0, 1, 3, 4]] == 0.0)


def test_smooth_step_derivative():
    x = np.linspace(0.05, 0.95, 19)
    h = 1e-6
    _, dS = smooth_step(x)
    numeric = (smooth_step(x + h)[0] - smooth_step(x - h)[0]) / (2.0 * h)
    assert np.allclose(dS, numeric, rtol=1e-6, atol=1e-9)
    # tails are finite and tiny, never NaN
    S, dS = smooth_step(np.array([1e-3, 1.0 - 1e-3]))
    assert np.all(np.isfinite(S)) and np.all(np.isfinite(dS))


def test_plateau_bump():
    beta = PlateauBump(0.5)
    values, slopes = beta(np.array([0.0, 0.3, -0.5, 0.75, -0.75, 1.0, 1.5]))
    assert np.array_equal(values[:3], [1.0, 1.0, 1.0])
    assert values[3] == pytest.approx(0.5)
    assert values[4] == pytest.approx(0.5)
    assert slopes[3] < 0 < slopes[4]
    assert np.array_equal(values[5:], [0.0, 0.0])


def test_default_sigma_grid():
    grid = certifier_service.default_sigma_grid(2.0, 2, 4)
    assert grid == pytest.approx((0.05, 10**-1.5 / 2.0, 0.005))


def test_epsilon_minimization():
    result = certifier_service.epsilon_minimize(0.01, 0.2, 1.0)
    assert result.status is EpsilonStatus.MINIMUM
    assert result.eps_star == pytest.approx(-0.2)
    assert result.t_min == pytest.approx(-0.03)

    flat = certifier_service.epsilon_minimize(0.01, 0.0, 1.0)
    assert flat.status is EpsilonStatus.NO_IMPROVEMENT
    assert flat.eps_star == 0.0 and flat.t_min == 0.01

    unbounded = certifier_service.epsilon_minimize(0.01, 0.2, -1.0)
    assert unbounded.status is EpsilonStatus.UNBOUNDED_DIRECTION
    assert unbounded.eps_star == pytest.approx(-1.05)
    assert unbounded.t_min == pytest.approx(-1.5125)


def test_mollifier_state(thin_layer):
    psi = certifier_service.build_mollifier(1e-3, 3.0, thin_layer)
    assert psi.tail is not None
    assert psi.tail.radius == 3.0
    assert psi.tail.kinetic > 0 and psi.tail.mass > 0
    smaller = certifier_service.build_mollifier(1e-6, 3.0, thin_layer)
    assert smaller.tail.kinetic < psi.tail.kinetic


def test_theta_vanishes_where_flat_and_at_midplane(bump, plane, thin_layer):
    loc = LocalizationSpec(radius=3.0, transverse_half_width=0.45)
    u = np.array([-0.3, 0.0, 0.3])
    q1 = np.array([0.5, 1.5, 3.5])
    q2 = np.array([0.2, -0.4, 0.1])
    sample = LayerSample(bump, thin_layer, q1, q2, np.ones(3), u, np.ones(3))
    theta = certifier_service.build_theta(bump, thin_layer, loc)
    values = theta.value(sample)
    assert np.all(values[:, 1] == 0.0)
    assert np.all(values[2] == 0.0)
    assert np.any(values[:2] != 0.0)

    flat_sample = LayerSample(plane, thin_layer, q1, q2, np.ones(3), u, np.ones(3))
    flat_theta = certifier_service.build_theta(plane, thin_layer, replace(loc, radius=1.0))
    assert np.all(flat_theta.value(flat_sample) == 0.0)
    assert np.all(flat_theta.gradient(flat_sample) == 0.0)


def test_localization_gradient(bump, thin_layer):
    j_model = Localization(LocalizationSpec(radius=2.0, transverse_half_width=0.4, center=(0.3, -0.2)))
    q1 = np.array([0.9, 1.2])
    q2 = np.array([0.4, -1.0])
    u = np.array([0.1, 0.3])
    h = 1e-6
    _, grad = j_model.evaluate(LayerSample(bump, thin_layer, q1, q2, np.ones(2), u, np.ones(2)))
    plus, _ = j_model.evaluate(LayerSample(bump, thin_layer, q1 + h, q2, np.ones(2), u, np.ones(2)))
    minus, _ = j_model.evaluate(LayerSample(bump, thin_layer, q1 - h, q2, np.ones(2), u, np.ones(2)))
    assert np.allclose(grad[..., 0], (plus - minus) / (2.0 * h), rtol=1e-5, atol=1e-8)
    plus, _ = j_model.evaluate(LayerSample(bump, thin_layer, q1, q2, np.ones(2), u + h, np.ones(2)))
    minus, _ = j_model.evaluate(LayerSample(bump, thin_layer, q1, q2, np.ones(2), u - h, np.ones(2)))
    assert np.allclose(grad[..., 2], (plus - minus) / (2.0 * h), rtol=1e-5, atol=1e-8)
    assert not j_model.centered
    assert j_model.lateral_breakpoints() == ()


def test_residual_norm_does_not_depend_on_sigma(bump, thin_layer):
    loc = LocalizationSpec(radius=3.0, transverse_half_width=0.45, plateau=0.7, transverse_plateau=0.6)
    j_model = Localization(loc)
    quadrature = QuadratureSpec(radial_panels=8, order=10, angular_nodes=4, transverse_order=10, max_level=5,
                                tolerance=1e-4, relative_tolerance=1e-4, refine_angular=False)
    domain = hamiltonian_service.domain(bump, thin_layer, 3.0, quadrature,
                                        breakpoints=j_model.lateral_breakpoints(),
                                        transverse_breakpoints=j_model.transverse_breakpoints())
    B_large, _ = certifier_service.residual_norm_sq(thin_layer, loc, domain, 1e-2, 3.0)
    B_small, _ = certifier_service.residual_norm_sq(thin_layer, loc, domain, 1e-12, 3.0)
    assert B_large > 0.0
    assert B_large == B_small


def test_validate_config(bump, sphere, thin_layer):
    certifier_service.validate_config(bump, thin_layer, bump_config())
    cases = [
        (bump_config(r0=2.0), "certify.r0"),
        (bump_config(sigma_grid=(1.0 / 3.0,)), "certify.sigma_grid"),
        (bump_config(sigma_grid=()), "certify.sigma_grid"),
        (bump_config(delta_min=0.0), "certify.delta_min"),
        (bump_config(localization=LocalizationSpec(radius=3.5, transverse_half_width=0.45)),
         "certify.localization.radius"),
        (bump_config(localization=LocalizationSpec(radius=2.0, transverse_half_width=0.45, center=(1.5, 0.0))),
         "certify.localization.radius"),
        (bump_config(localization=LocalizationSpec(radius=3.0, transverse_half_width=0.5)),
         "certify.localization.transverse_half_width"),
    ]
    for config, field in cases:
        with pytest.raises(ConfigValidationError) as info:
            certifier_service.validate_config(bump, thin_layer, config)
        assert info.value.field == field
    with pytest.raises(BadParams):
        certifier_service.validate_config(sphere, thin_layer, bump_config())


def test_plane_is_not_certified(plane, unit_layer, coarse_quadrature):
    certificate = certifier_service.certify(plane, unit_layer, plane_config(coarse_quadrature))
    assert certificate.status is CertificateStatus.NOT_CERTIFIED
    assert certificate.B == 0.0
    assert certificate.epsilon_status is EpsilonStatus.NO_IMPROVEMENT
    assert certificate.energy_gap > 0.0
    assert certificate.E_ub > unit_layer.kappa1_sq
    assert abs(certificate.total_curvature) < 1e-8
    assert not any(row.passed for row in certificate.sweep)
    t0 = [row.t0 for row in certificate.sweep]
    assert all(later < earlier for earlier, later in zip(t0, t0[1:]))
    assert certificate.assembly_residual < 1e-6


def test_strict_mode_raises(plane, unit_layer, coarse_quadrature):
    with pytest.raises(NotCertified):
        certifier_service.certify(plane, unit_layer, plane_config(coarse_quadrature, strict=True))


@pytest.fixture(scope="module")
def shipped_bump():
    from services.report_service import report_service

    cfg = report_service.load_config(str(CONFIG_DIR / "bump.yaml"))
    ctx = report_service.build_context(cfg, "full")
    config = report_service.certifier_config(cfg, ctx.surface, ctx.layer)
    certificate = certifier_service.certify(ctx.surface, ctx.layer, config, ctx.thickness)
    return cfg, ctx, certificate


@pytest.mark.slow
def test_bump_certificate(shipped_bump):
    _, ctx, certificate = shipped_bump
    kappa_sq = ctx.layer.kappa1_sq
    assert certificate.status is CertificateStatus.CERTIFIED
    assert certificate.B > 0.0
    assert certificate.eps_star < 0.0
    assert certificate.t_min < certificate.t0
    assert certificate.t_min + certificate.error_estimate < -certificate.delta_min * kappa_sq
    assert certificate.b_sigma_spread == 0.0
    assert abs(certificate.t_min_direct - certificate.t_min) < 1e-5
    assert abs(certificate.total_curvature) < 1e-6
    assert certificate.E_ub == pytest.approx(kappa_sq + certificate.energy_gap)
    assert certificate.energy_gap < 0.0
    assert certificate.E_ub < kappa_sq


@pytest.mark.slow
def test_bump_sweep_tail_decreases(shipped_bump):
    _, _, certificate = shipped_bump
    rows = certificate.sweep
    assert [row.sigma_r0 for row in rows] == sorted((row.sigma_r0 for row in rows), reverse=True)
    t0 = [row.t0 for row in rows]
    assert all(later < earlier for earlier, later in zip(t0, t0[1:]))
    assert any(row.passed for row in rows)
    for row in rows:
        if row.passed:
            assert row.t_min + row.error_estimate < 0.0


@pytest.mark.slow
def test_bump_ground_state_lies_below_upper_bound(shipped_bump):
    from services.report_service import report_service
    from services.spectral_service import spectral_service

    cfg, ctx, certificate = shipped_bump
    result = spectral_service.solve(ctx.surface, ctx.layer, report_service.solver_grid(cfg), k=1,
                                    thickness=ctx.thickness)
    assert result.ground_state <= certificate.E_ub
    assert result.ground_state < ctx.layer.kappa1_sq


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

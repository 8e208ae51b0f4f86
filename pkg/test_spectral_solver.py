"""
Test script for the finite-difference layer operator and the shift-invert eigensolver
"""
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy import io as sio
from scipy import sparse

from exceptions import BadParams, GridTooCoarse, InvalidThickness
from models import DiscreteOperator, LateralBoundary, LayerConfig, SolverGrid
from services.layer_service import layer_service
from services.spectral_service import discrete_threshold, gershgorin_lower_bound, spectral_service
from services.surfaces import FiniteDifferenceSurface

CONFIG_DIR = Path(__file__).parent / "configs"
FIRST_BESSEL_ZERO = 2.404825557695773


def test_discrete_threshold_approaches_kappa_from_below():
    kappa_sq = (math.pi / 2.0) ** 2
    values = [discrete_threshold(n, 1.0) for n in (3, 7, 15, 31, 63)]
    assert all(value < kappa_sq for value in values)
    assert all(later > earlier for earlier, later in zip(values, values[1:]))
    assert values[-1] == pytest.approx(kappa_sq, rel=1e-3)


def test_one_dimensional_laplacian():
    op = spectral_service.dirichlet_laplacian_1d(200, 1.0)
    result = spectral_service.lowest_eigenvalues(op, k=4)
    assert result.ground_state == pytest.approx(op.discrete_threshold, rel=1e-9)
    assert abs(result.ground_state - math.pi**2 / 4.0) < 1e-4
    assert result.eigenvalues[1] == pytest.approx(math.pi**2, rel=1e-3)
    assert np.all(result.residuals < 1e-6)
    assert result.count_below_shift == 0


def test_seed_reproducibility():
    op = spectral_service.dirichlet_laplacian_1d(120, 0.5)
    first = spectral_service.lowest_eigenvalues(op, k=3, seed=5)
    second = spectral_service.lowest_eigenvalues(op, k=3, seed=5)
    assert first.seed == second.seed == 5
    assert np.allclose(first.eigenvalues, second.eigenvalues, rtol=1e-12)


def test_inertia_count():
    n = 50
    op = spectral_service.dirichlet_laplacian_1d(n, 1.0)
    h = 2.0 / (n + 1)
    exact = 4.0 / h**2 * np.sin(np.arange(1, n + 1) * np.pi / (2.0 * (n + 1))) ** 2
    for value in (1.0, 10.0, 100.0):
        assert spectral_service.count_below(op, value) == int(np.count_nonzero(exact < value))


def test_flat_layer_has_no_bound_state(plane, unit_layer):
    grid = SolverGrid(r_max=20.0, n_lateral=40, n_transverse=16)
    op = spectral_service.assemble(plane, unit_layer, grid)
    assert op.dimension == 40 * 40 * 16
    assert op.max_asymmetry < 1e-10
    assert op.discrete_threshold == pytest.approx(2.4604, abs=1e-4)
    result = spectral_service.lowest_eigenvalues(op, k=5)
    kappa_sq = unit_layer.kappa1_sq
    assert kappa_sq < result.ground_state < kappa_sq + 0.05
    assert result.ground_state > op.discrete_threshold
    assert result.count_below_threshold == 0
    assert np.all(np.diff(result.eigenvalues) >= -1e-12)


def test_neumann_below_dirichlet_bracketing(plane, unit_layer):
    report = spectral_service.bracket_threshold(plane, unit_layer, [4.0, 3.0], spacing=0.5, n_transverse=4, k=4)
    assert report.ordering_ok
    assert report.edge_trend_ok
    assert report.neumann_trend_ok
    assert not report.ground_state_stable
    assert [row.r_max for row in report.rows] == [3.0, 4.0]
    threshold = discrete_threshold(4, unit_layer.a)
    for row in report.rows:
        # constant lateral mode: the Neumann ground state is the transverse threshold itself
        assert row.neumann[0] == pytest.approx(threshold, rel=1e-9)
        assert row.dirichlet[0] > threshold


def test_grid_refinement_is_second_order(plane, unit_layer):
    grid = SolverGrid(r_max=2.0, n_lateral=8, n_transverse=3)
    result = spectral_service.refine_ground_state(plane, unit_layer, grid, levels=3)
    history = result.refinement_history
    assert [entry["n_lateral"] for entry in history] == [8, 16, 32]
    assert [entry["n_transverse"] for entry in history] == [3, 7, 15]
    assert history[0]["delta"] is None
    assert all(entry["delta"] > 0 for entry in history[1:])
    assert 3.0 < history[2]["ratio"] < 5.0


def test_curved_operator_is_symmetric(gentle_bump):
    layer = LayerConfig(a=0.3)
    thickness = layer_service.validate_thickness(gentle_bump, layer)
    r_max = 2.5
    n = max(16, math.ceil(2.0 * r_max * 8.0 / thickness.rho_m) + 1)
    dirichlet = SolverGrid(r_max=r_max, n_lateral=n, n_transverse=4)
    neumann = SolverGrid(r_max=r_max, n_lateral=n, n_transverse=4, lateral_bc=LateralBoundary.NEUMANN)
    op = spectral_service.assemble(gentle_bump, layer, dirichlet, thickness)
    scale = abs(op.matrix).max()
    assert op.max_asymmetry <= 1e-12 * scale
    assert op.boundary == {"transverse": "dirichlet", "lateral": "dirichlet"}
    lower = spectral_service.solve(gentle_bump, layer, neumann, k=3, thickness=thickness)
    upper = spectral_service.lowest_eigenvalues(op, k=3)
    assert np.all(lower.eigenvalues[:3] <= upper.eigenvalues[:3] + 1e-9)


def test_matrix_dump(tmp_path):
    op = spectral_service.dirichlet_laplacian_1d(12, 1.0)
    path = tmp_path / "laplacian.mtx"
    spectral_service.dump_matrix(op, str(path))
    text = path.read_text()
    assert text.startswith("%%MatrixMarket matrix coordinate real general")
    loaded = sio.mmread(str(path))
    assert np.allclose(loaded.toarray(), op.matrix.toarray())


def test_grid_validation(plane, bump, unit_layer, thin_layer):
    with pytest.raises(GridTooCoarse) as info:
        spectral_service.assemble(plane, unit_layer, SolverGrid(r_max=0.5, n_lateral=8, n_transverse=3))
    assert info.value.field == "solve.r_max"
    with pytest.raises(GridTooCoarse) as info:
        spectral_service.assemble(bump, thin_layer, SolverGrid(r_max=5.0, n_lateral=4, n_transverse=3))
    assert info.value.field == "solve.n_lateral"


def test_thick_layer_is_rejected(sphere):
    with pytest.raises(InvalidThickness):
        spectral_service.assemble(sphere, LayerConfig(a=2.5), SolverGrid(r_max=1.0, n_lateral=8, n_transverse=3))


def test_eigenvalues_far_below_the_shift_are_recovered():
    # shift 0.9 * 10 = 9: the three nearest eigenvalues skip the one at 1.0
    diagonal = np.concatenate([[1.0, 8.95, 9.02, 9.376], np.linspace(10.5, 30.0, 36)])
    op = DiscreteOperator(matrix=sparse.diags(diagonal).tocsr(), grid=None, a=1.0, kappa1_sq=10.0,
                          discrete_threshold=10.0, max_asymmetry=0.0, boundary={})
    result = spectral_service.lowest_eigenvalues(op, k=3)
    assert result.count_below_shift == 2
    assert result.ground_state == pytest.approx(1.0, rel=1e-10)
    assert result.eigenvalues[1] == pytest.approx(8.95, rel=1e-10)


def test_gershgorin_bound_lies_below_the_spectrum():
    op = spectral_service.dirichlet_laplacian_1d(40, 1.0)
    bound = gershgorin_lower_bound(op.matrix)
    assert bound < 0.0
    assert spectral_service.count_below(op, bound) == 0


def test_axisymmetric_flat_layer(plane, unit_layer):
    R = 4.0
    neumann = SolverGrid(r_max=R, n_lateral=80, n_transverse=4, lateral_bc=LateralBoundary.NEUMANN, axisymmetric=True)
    dirichlet = replace(neumann, lateral_bc=LateralBoundary.DIRICHLET)
    op = spectral_service.assemble(plane, unit_layer, dirichlet)
    assert op.dimension == 80 * 4
    assert op.max_asymmetry < 1e-10 * abs(op.matrix).max()
    assert op.boundary["symmetry"] == "axisymmetric"
    threshold = discrete_threshold(4, unit_layer.a)
    lower = spectral_service.solve(plane, unit_layer, neumann, k=2)
    upper = spectral_service.lowest_eigenvalues(op, k=2)
    assert lower.ground_state == pytest.approx(threshold, rel=1e-9)
    # lowest Dirichlet disk mode J_0(j_01 r / R)
    assert upper.ground_state - threshold == pytest.approx((FIRST_BESSEL_ZERO / R) ** 2, rel=1e-2)


def test_axisymmetric_grid_needs_radial_surface(unit_layer):
    flat = FiniteDifferenceSurface(lambda q1, q2: np.stack([q1, q2, 0.0 * q1], axis=-1), support_radius=1.0)
    grid = SolverGrid(r_max=3.0, n_lateral=30, n_transverse=3, axisymmetric=True)
    with pytest.raises(BadParams) as info:
        spectral_service.assemble(flat, unit_layer, grid)
    assert info.value.field == "solve.axisymmetric"


@pytest.fixture(scope="module")
def shipped_bump():
    from services.report_service import report_service

    cfg = report_service.load_config(str(CONFIG_DIR / "bump.yaml"))
    return cfg, report_service.build_context(cfg, "solve"), report_service.solver_grid(cfg)


@pytest.mark.slow
def test_shipped_bump_has_a_bound_state(shipped_bump):
    _, ctx, grid = shipped_bump
    result = spectral_service.solve(ctx.surface, ctx.layer, grid, k=3, thickness=ctx.thickness)
    assert result.converged
    assert result.ground_state < ctx.layer.kappa1_sq
    assert result.ground_state < result.discrete_threshold - 1e-6


@pytest.mark.slow
def test_shipped_bump_bound_state_is_stable_in_the_box(shipped_bump):
    cfg, ctx, grid = shipped_bump
    report = spectral_service.bracket_threshold(ctx.surface, ctx.layer, cfg.solve.bracket_r_max, spacing=grid.h,
                                                n_transverse=grid.n_transverse, k=3, axisymmetric=True)
    assert [row.r_max for row in report.rows] == [10.0, 20.0, 40.0]
    assert report.ordering_ok
    assert report.ground_state_stable, report.notes
    assert report.ground_state_spread <= 1e-3
    for row in report.rows:
        assert row.dirichlet[0] < row.discrete_threshold


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

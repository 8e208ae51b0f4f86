"""
Shared test fixtures: reference surfaces, layers and a coarse quadrature
"""
import pytest

from models import LayerConfig, QuadratureSpec
from services.surfaces import CompactBumpSurface, PlaneSurface, SpherePatchSurface


@pytest.fixture
def plane():
    return PlaneSurface(support_radius=1.0)


@pytest.fixture
def bump():
    return CompactBumpSurface(h=1.0, s=3.0)


@pytest.fixture
def gentle_bump():
    return CompactBumpSurface(h=0.2, s=2.0)


@pytest.fixture
def sphere():
    return SpherePatchSurface(R=2.0, patch_radius=1.0)


@pytest.fixture
def unit_layer():
    return LayerConfig(a=1.0)


@pytest.fixture
def thin_layer():
    return LayerConfig(a=0.5)


@pytest.fixture
def coarse_quadrature():
    return QuadratureSpec(radial_panels=8, order=8, angular_nodes=4, transverse_order=8, max_level=4,
                          tolerance=1e-7, relative_tolerance=1e-7, refine_angular=False)

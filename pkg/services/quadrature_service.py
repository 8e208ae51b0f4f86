"""
Quadrature Service
Gauss-Legendre panel rules, polar disk rules, dyadic refinement and
Richardson-extrapolated central differences
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial.legendre import leggauss

from exceptions import QuadratureDivergence
from models import QuadratureSpec

logger = logging.getLogger(__name__)


@lru_cache(maxsize=64)
def gauss_legendre(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [-1, 1], exactly antisymmetric nodes"""
    x, w = leggauss(order)
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def panel_rule(a: float, b: float, panels: int, order: int,
               breakpoints: Iterable[float] = ()) -> Tuple[np.ndarray, np.ndarray]:
    """
    Composite Gauss-Legendre rule on [a, b].

    Args:
        panels: number of equal panels before breakpoints are inserted
        breakpoints: interior points where the integrand is only piecewise smooth

    Returns:
        nodes and weights as 1D arrays
    """
    edges = np.linspace(a, b, panels + 1)
    extra = [p for p in breakpoints if a < p < b]
    if extra:
        edges = np.unique(np.concatenate([edges, extra]))
    x, w = gauss_legendre(order)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def symmetric_rule(half_width: float, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre on (-half_width, half_width); node i mirrors node -1-i"""
    x, w = gauss_legendre(order)
    return half_width * x, half_width * w


def even_part(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Average with the mirror image along a symmetric-node axis (drops odd powers of u)"""
    return 0.5 * (values + np.flip(values, axis=axis))


@dataclass(frozen=True)
class DiskRule:
    """Polar rule on |q| <= radius: Gauss panels in r, trapezoid in theta"""

    r: np.ndarray
    theta: np.ndarray
    q1: np.ndarray
    q2: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return self.weights.size


def disk_rule(radius: float, radial_panels: int, order: int, angular_nodes: int,
              breakpoints: Sequence[float] = (), inner_radius: float = 0.0) -> DiskRule:
    r, wr = panel_rule(inner_radius, radius, radial_panels, order, breakpoints)
    theta = (np.arange(angular_nodes) + 0.5) * (2.0 * np.pi / angular_nodes)
    wt = 2.0 * np.pi / angular_nodes
    rr, tt = np.meshgrid(r, theta, indexing="ij")
    weights = (wr * r)[:, None] * wt * np.ones_like(tt)
    return DiskRule(
        r=rr.ravel(),
        theta=tt.ravel(),
        q1=(rr * np.cos(tt)).ravel(),
        q2=(rr * np.sin(tt)).ravel(),
        weights=weights.ravel(),
    )


def converge(evaluate: Callable[[int], Tuple[float, object]], spec: QuadratureSpec,
             label: str, scale: Optional[Union[float, Callable[[object], float]]] = None
             ) -> Tuple[float, float, int, object]:
    """
    Dyadic refinement driver.

    Evaluates level 0, 1, ... until two successive values differ by less than
    max(tolerance, relative_tolerance * scale). The finer value is returned
    together with the last difference as its error estimate.

    Args:
        evaluate: level -> (value, payload)
        label: name used in log messages and errors
        scale: magnitude for the relative test, or a callable on the payload
            (defaults to |value|)

    Returns:
        (value, error_estimate, level, payload of the accepted level)
    """
    previous, _ = evaluate(0)
    for level in range(1, spec.max_level + 1):
        value, payload = evaluate(level)
        error = abs(value - previous)
        if callable(scale):
            reference = scale(payload)
        else:
            reference = abs(value) if scale is None else scale
        limit = max(spec.tolerance, spec.relative_tolerance * reference)
        logger.debug(f"{label}: level {level} value={value:.12e} delta={error:.3e}")
        if error <= limit:
            logger.info(f"{label} converged at level {level}: {value:.10e} (est. error {error:.2e})")
            return value, error, level, payload
        previous = value
    raise QuadratureDivergence(
        f"{label} did not converge after {spec.max_level} refinements "
        f"(last delta {error:.3e} > {limit:.3e})",
        details={"last_value": value, "last_delta": error},
    )


def central_difference(fn: Callable[[float], np.ndarray], step: float) -> np.ndarray:
    """
    Richardson-extrapolated central difference of fn at offset 0.

    Combines D(step) and D(step/2) into a fourth-order estimate.
    """
    def one_sided(h: float) -> np.ndarray:
        return (np.asarray(fn(h)) - np.asarray(fn(-h))) / (2.0 * h)

    coarse = one_sided(step)
    fine = one_sided(0.5 * step)
    return (4.0 * fine - coarse) / 3.0

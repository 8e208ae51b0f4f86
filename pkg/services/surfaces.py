"""
Surface Models
Parametrized reference surfaces with analytic derivatives, the built-in
family library, and a finite-difference fallback for value-only surfaces
"""
import logging
from abc import ABC, abstractmethod
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from exceptions import BadParams, DerivativeUnavailable, DomainError, UnknownSurface

logger = logging.getLogger(__name__)

EPS = np.finfo(float).eps


def _broadcast(q1, q2) -> Tuple[np.ndarray, np.ndarray]:
    return np.broadcast_arrays(np.asarray(q1, dtype=float), np.asarray(q2, dtype=float))


class SurfaceModel(ABC):
    """
    Contract for a reference surface p(q) in R^3.

    All evaluators are vectorised: q1 and q2 broadcast to a common shape S and
    results carry S as leading axes, e.g. jacobian -> S + (2, 3) with
    [..., mu, :] = p_{,mu}.
    """

    name: str = "surface"
    support_radius: float = 1.0
    length_scale: float = 1.0
    compactly_supported: bool = True
    is_radial: bool = False

    @abstractmethod
    def evaluate(self, q1, q2) -> np.ndarray:
        ...

    @abstractmethod
    def jacobian(self, q1, q2) -> np.ndarray:
        ...

    @abstractmethod
    def hessian(self, q1, q2) -> np.ndarray:
        ...

    @property
    def has_third_derivatives(self) -> bool:
        return False

    def third_derivatives(self, q1, q2) -> np.ndarray:
        raise DerivativeUnavailable(f"Surface '{self.name}' does not supply third derivatives")

    def describe(self) -> dict:
        return {
            "name": self.name,
            "support_radius": self.support_radius,
            "length_scale": self.length_scale,
            "compactly_supported": self.compactly_supported,
            "third_derivatives": self.has_third_derivatives,
        }


class RadialGraphSurface(SurfaceModel):
    """
    Monge graph p = (q1, q2, F(S)) with S = |q|^2.

    Subclasses provide F and its first three S-derivatives; the chain rule
    gives every q-derivative up to third order.
    """

    is_radial = True

    @abstractmethod
    def profile(self, S: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        ...

    @property
    def has_third_derivatives(self) -> bool:
        return True

    def height(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return self.profile(r * r)[0]

    def evaluate(self, q1, q2) -> np.ndarray:
        q1, q2 = _broadcast(q1, q2)
        F = self.profile(q1 * q1 + q2 * q2)[0]
        return np.stack([q1, q2, F], axis=-1)

    def jacobian(self, q1, q2) -> np.ndarray:
        q1, q2 = _broadcast(q1, q2)
        _, F1, _, _ = self.profile(q1 * q1 + q2 * q2)
        out = np.zeros(q1.shape + (2, 3))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = 1.0
        out[..., 0, 2] = 2.0 * F1 * q1
        out[..., 1, 2] = 2.0 * F1 * q2
        return out

    def hessian(self, q1, q2) -> np.ndarray:
        q1, q2 = _broadcast(q1, q2)
        _, F1, F2, _ = self.profile(q1 * q1 + q2 * q2)
        q = np.stack([q1, q2], axis=-1)
        f2 = 4.0 * F2[..., None, None] * q[..., :, None] * q[..., None, :]
        f2 = f2 + 2.0 * F1[..., None, None] * np.eye(2)
        out = np.zeros(q1.shape + (2, 2, 3))
        out[..., 2] = f2
        return out

    def third_derivatives(self, q1, q2) -> np.ndarray:
        q1, q2 = _broadcast(q1, q2)
        _, _, F2, F3 = self.profile(q1 * q1 + q2 * q2)
        q = np.stack([q1, q2], axis=-1)
        delta = np.eye(2)
        qqq = np.einsum("...a,...b,...c->...abc", q, q, q)
        sym = (
            np.einsum("ab,...c->...abc", delta, q)
            + np.einsum("ac,...b->...abc", delta, q)
            + np.einsum("bc,...a->...abc", delta, q)
        )
        f3 = 8.0 * F3[..., None, None, None] * qqq + 4.0 * F2[..., None, None, None] * sym
        out = np.zeros(q1.shape + (2, 2, 2, 3))
        out[..., 2] = f3
        return out


class PlaneSurface(RadialGraphSurface):
    name = "plane"

    def __init__(self, support_radius: float = 1.0):
        self.support_radius = float(support_radius)
        self.length_scale = 1.0

    def profile(self, S):
        zero = np.zeros_like(np.asarray(S, dtype=float))
        return zero, zero, zero, zero


class CompactBumpSurface(RadialGraphSurface):
    """f(r) = h exp(1 / ((r/s)^2 - 1)) for r < s, identically 0 beyond"""

    name = "compact-bump"

    # exp(1/m) for m > -CUTOFF is below 1e-217 and is treated as exactly flat
    CUTOFF = 2e-3

    def __init__(self, h: float, s: float):
        if not np.isfinite(h):
            raise BadParams("compact-bump height h must be finite", field="surface.params.h")
        if not (np.isfinite(s) and s > 0):
            raise BadParams("compact-bump width s must be positive", field="surface.params.s")
        self.h = float(h)
        self.s = float(s)
        self.support_radius = self.s
        self.length_scale = self.s

    def profile(self, S):
        S = np.asarray(S, dtype=float)
        c = 1.0 / (self.s * self.s)
        m = S * c - 1.0
        inside = m < -self.CUTOFF
        m = np.where(inside, m, -1.0)
        F = np.where(inside, self.h * np.exp(1.0 / m), 0.0)
        w1 = -c / m**2
        w2 = 2.0 * c**2 / m**3
        w3 = -6.0 * c**3 / m**4
        F1 = F * w1
        F2 = F * (w1 * w1 + w2)
        F3 = F * (w1**3 + 3.0 * w1 * w2 + w3)
        return F, F1, F2, F3


class SpherePatchSurface(RadialGraphSurface):
    """
    Lower hemisphere z = R - sqrt(R^2 - r^2) restricted to r <= patch_radius.

    Not asymptotically planar; only for geometry tests.
    """

    name = "sphere-patch-test"
    compactly_supported = False

    def __init__(self, R: float = 1.0, patch_radius: Optional[float] = None):
        if not (np.isfinite(R) and R > 0):
            raise BadParams("sphere radius R must be positive", field="surface.params.R")
        patch_radius = 0.5 * R if patch_radius is None else float(patch_radius)
        if not (0 < patch_radius < R):
            raise BadParams("patch_radius must lie in (0, R)", field="surface.params.patch_radius")
        self.R = float(R)
        self.support_radius = patch_radius
        self.length_scale = self.R

    def profile(self, S):
        S = np.asarray(S, dtype=float)
        rest = self.R**2 - S
        if np.any(rest <= 0):
            raise DomainError(f"sphere patch evaluated outside |q| < R={self.R}")
        root = np.sqrt(rest)
        return self.R - root, 0.5 / root, 0.25 / (rest * root), 0.375 / (rest * rest * root)


class FiniteDifferenceSurface(SurfaceModel):
    """
    Wraps a value-only map q -> p(q).

    First derivatives use central differences with step cbrt(eps)*L, second
    derivatives the fourth root of eps (optimal for second differences); both
    are Richardson-extrapolated. Outside support_radius the plane is returned
    exactly when flat_outside is set.
    """

    def __init__(self, func: Callable[[np.ndarray, np.ndarray], np.ndarray], support_radius: float,
                 length_scale: float = 1.0, name: str = "finite-difference",
                 compactly_supported: bool = True, flat_outside: bool = True):
        self.func = func
        self.support_radius = float(support_radius)
        self.length_scale = float(length_scale)
        self.name = name
        self.compactly_supported = compactly_supported
        self.flat_outside = flat_outside
        self.step1 = np.cbrt(EPS) * self.length_scale
        self.step2 = EPS**0.25 * self.length_scale

    def _outside(self, q1, q2) -> np.ndarray:
        if not self.flat_outside:
            return np.zeros(q1.shape, dtype=bool)
        return q1 * q1 + q2 * q2 >= self.support_radius**2

    def evaluate(self, q1, q2) -> np.ndarray:
        q1, q2 = _broadcast(q1, q2)
        return np.asarray(self.func(q1, q2), dtype=float)

    def _first(self, q1, q2, axis: int, h: float) -> np.ndarray:
        e = (h, 0.0) if axis == 0 else (0.0, h)
        return (self.func(q1 + e[0], q2 + e[1]) - self.func(q1 - e[0], q2 - e[1])) / (2.0 * h)

    def jacobian(self, q1, q2) -> np.ndarray:
        q1, q2 = _broadcast(q1, q2)
        out = np.empty(q1.shape + (2, 3))
        h = self.step1
        for axis in range(2):
            coarse = self._first(q1, q2, axis, h)
            fine = self._first(q1, q2, axis, 0.5 * h)
            out[..., axis, :] = (4.0 * fine - coarse) / 3.0
        outside = self._outside(q1, q2)
        if np.any(outside):
            out[outside] = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        return out

    def _second(self, q1, q2, mu: int, nu: int, h: float) -> np.ndarray:
        f = self.func
        if mu == nu:
            e = (h, 0.0) if mu == 0 else (0.0, h)
            return (f(q1 + e[0], q2 + e[1]) - 2.0 * f(q1, q2) + f(q1 - e[0], q2 - e[1])) / (h * h)
        return (f(q1 + h, q2 + h) - f(q1 + h, q2 - h) - f(q1 - h, q2 + h) + f(q1 - h, q2 - h)) / (4.0 * h * h)

    def hessian(self, q1, q2) -> np.ndarray:
        q1, q2 = _broadcast(q1, q2)
        out = np.empty(q1.shape + (2, 2, 3))
        h = self.step2
        for mu, nu in ((0, 0), (1, 1), (0, 1)):
            coarse = self._second(q1, q2, mu, nu, h)
            fine = self._second(q1, q2, mu, nu, 0.5 * h)
            out[..., mu, nu, :] = (4.0 * fine - coarse) / 3.0
        out[..., 1, 0, :] = out[..., 0, 1, :]
        outside = self._outside(q1, q2)
        if np.any(outside):
            out[outside] = 0.0
        return out


SURFACE_FAMILIES: Dict[str, dict] = {
    "plane": {"builder": PlaneSurface, "params": {"support_radius"}},
    "compact-bump": {"builder": CompactBumpSurface, "params": {"h", "s"}, "required": {"h", "s"}},
    "sphere-patch-test": {"builder": SpherePatchSurface, "params": {"R", "patch_radius"}},
}


def builtin_surface(name: str, params: Optional[Dict[str, float]] = None) -> SurfaceModel:
    """
    Build a bundled surface family by name.

    Args:
        name: one of plane, compact-bump, sphere-patch-test
        params: parameter map for the family

    Returns:
        SurfaceModel instance
    """
    params = dict(params or {})
    family = SURFACE_FAMILIES.get(name)
    if family is None:
        raise UnknownSurface(f"Unknown surface family '{name}'. Available: {sorted(SURFACE_FAMILIES)}",
                             field="surface.family")

    unknown = set(params) - family["params"]
    if unknown:
        raise BadParams(f"Unknown parameters for '{name}': {sorted(unknown)}", field="surface.params")
    missing = family.get("required", set()) - set(params)
    if missing:
        raise BadParams(f"Missing parameters for '{name}': {sorted(missing)}", field="surface.params")

    try:
        values = {key: float(value) for key, value in params.items()}
    except (TypeError, ValueError) as e:
        raise BadParams(f"Parameters for '{name}' must be numbers: {e}", field="surface.params")

    if name == "plane" and values.get("support_radius", 1.0) <= 0:
        raise BadParams("plane support_radius must be positive", field="surface.params.support_radius")

    surface = family["builder"](**values)
    logger.info(f"Built surface '{name}' with params {values}")
    return surface

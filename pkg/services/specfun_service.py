"""
Special Functions Service
Modified Bessel functions of the second kind and the closed-form mollifier norms
"""
import logging
import math

import numpy as np
from scipy import integrate, special

from exceptions import DomainError
from models import BesselEval, MollifierNorm

logger = logging.getLogger(__name__)

# K_0, K_1 underflow to zero in double precision beyond this argument
UNDERFLOW_ARGUMENT = 705.0
LOSS_OF_PRECISION_ARGUMENT = 1e-8
# below this the exterior mass of the mollifier overflows double precision
MIN_MOLLIFIER_ARGUMENT = 1e-150


def _check_argument(x, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(x <= 0):
        raise DomainError(f"{name} must be finite and positive, got {x!r}", field=name)
    return x


class SpecialFunctionService:
    """K_0, K_1, K_2 via scipy.special and the mollifier closed forms built on them"""

    def bessel_k(self, order: int, x):
        """
        K_order(x) for order in {0, 1}.

        Args:
            order: 0 or 1
            x: positive argument (scalar or array)

        Returns:
            float or array; zero where the value underflows (flagged in the log)
        """
        if order not in (0, 1):
            raise DomainError(f"bessel_k supports orders 0 and 1, got {order}", field="order")
        x = _check_argument(x)
        value = special.k0(x) if order == 0 else special.k1(x)
        if np.any(x > UNDERFLOW_ARGUMENT):
            logger.warning(f"K_{order} underflows for arguments above {UNDERFLOW_ARGUMENT}")
        return float(value) if value.ndim == 0 else value

    def bessel_eval(self, x: float) -> BesselEval:
        x = float(_check_argument(x))
        k0 = float(special.k0(x))
        k1 = float(special.k1(x))
        k2 = k0 + 2.0 / x * k1
        underflow = k0 == 0.0 or k1 == 0.0
        if underflow:
            logger.warning(f"Bessel K underflow at x={x}")
        return BesselEval(x=x, k0=k0, k1=k1, k2=k2, underflow=underflow)

    def k1_over_k0(self, x):
        """K_1/K_0 from the exponentially scaled functions (no underflow)"""
        x = _check_argument(x)
        return special.k1e(x) / special.k0e(x)

    def mollifier_norm(self, sigma: float, r0: float) -> MollifierNorm:
        """
        Exterior Dirichlet energy of the mollifier K_0(sigma r)/K_0(sigma r0).

        With x = sigma r0 and y = x K_1(x)/K_0(x) the closed form
        pi x^2 [K_0 K_2 - K_1^2] / K_0^2 equals pi (x^2 + 2y - y^2) after the
        recurrence K_2 = K_0 + 2K_1/x; the second form is free of cancellation.
        """
        _check_argument(sigma, "sigma")
        _check_argument(r0, "r0")
        x = float(sigma) * float(r0)
        y = x * float(self.k1_over_k0(x))
        value = math.pi * (x * x + 2.0 * y - y * y)
        loss = x < LOSS_OF_PRECISION_ARGUMENT
        if loss:
            logger.debug(f"mollifier norm at sigma*r0={x:.3e} flagged for loss of precision")
        return MollifierNorm(value=value, loss_of_precision=loss)

    def mollifier_norm_sq(self, sigma: float, r0: float) -> float:
        return self.mollifier_norm(sigma, r0).value

    def mollifier_exterior_mass(self, sigma: float, r0: float) -> float:
        """2 pi int_{r0}^inf (K_0(sigma r)/K_0(sigma r0))^2 r dr = pi r0^2 [(K_1/K_0)^2 - 1]"""
        _check_argument(sigma, "sigma")
        _check_argument(r0, "r0")
        ratio = float(self.k1_over_k0(float(sigma) * float(r0)))
        return math.pi * float(r0) ** 2 * (ratio * ratio - 1.0)

    def mollifier_profile(self, sigma: float, r0: float, r):
        """phi_sigma(r) and phi_sigma'(r): 1 and 0 inside r0, Bessel ratio outside"""
        r = np.asarray(r, dtype=float)
        x0 = float(sigma) * float(r0)
        outside = r > r0
        ro = np.where(outside, r, r0)
        scaled = special.k0e(sigma * ro) / special.k0e(x0) * np.exp(-(sigma * ro - x0))
        slope = -sigma * special.k1e(sigma * ro) / special.k0e(x0) * np.exp(-(sigma * ro - x0))
        return np.where(outside, scaled, 1.0), np.where(outside, slope, 0.0)

    def mollifier_norm_by_quadrature(self, sigma: float, r0: float) -> float:
        """Adaptive-quadrature value of the exterior Dirichlet energy, split at x = 1"""
        x0 = float(sigma) * float(r0)
        k0 = special.k0(x0)
        integrand = lambda x: special.k1(x) ** 2 * x
        parts = [(x0, max(x0, 1.0)), (max(x0, 1.0), np.inf)]
        total = sum(integrate.quad(integrand, lo, hi, epsabs=0.0, epsrel=1e-12, limit=200)[0]
                    for lo, hi in parts if hi > lo)
        return 2.0 * math.pi * total / k0**2

    def exterior_mass_by_quadrature(self, sigma: float, r0: float) -> float:
        x0 = float(sigma) * float(r0)
        k0 = special.k0(x0)
        integrand = lambda x: special.k0(x) ** 2 * x
        parts = [(x0, max(x0, 1.0)), (max(x0, 1.0), np.inf)]
        total = sum(integrate.quad(integrand, lo, hi, epsabs=0.0, epsrel=1e-12, limit=200)[0]
                    for lo, hi in parts if hi > lo)
        return 2.0 * math.pi * total / (k0**2 * float(sigma) ** 2)


# Create a singleton instance
specfun_service = SpecialFunctionService()

"""Fast evaluation of the tent-mollified Coulomb field at unit radius.

For the tent ``zeta(u) = prod(1 - |u_i|)`` the ``u1`` integral of
``zeta(u) K(d - u)`` has a closed form (the hat weight is linear on each of
its two pieces and ``int t**m / (t**2 + rho**2)**1.5 dt`` is elementary for
``m = 0, 1, 2``).  What remains is a 2-d integral over ``(u2, u3)`` with an
integrable singularity at ``(d2, d3)`` when ``|d1| < 1``, handled by the
cone rules of :mod:`._cubature`.
"""
from __future__ import annotations

import numpy as np

from ._cubature import orthant_boxes, singular_rule

_FOUR_PI = 4.0 * np.pi
_BOXES = orthant_boxes(2)


def _segment_moments(a: float, b: float, rho2: np.ndarray):
    """``int_a^b t**m (t**2 + rho2)**-1.5 dt`` for m = 0, 1, 2."""
    rho = np.sqrt(rho2)
    Sa = np.sqrt(a * a + rho2)
    Sb = np.sqrt(b * b + rho2)
    if a * b > 0:
        # same-sign endpoints: rewrite the difference to avoid cancellation
        J0 = (b * b - a * a) / ((b * Sa + a * Sb) * Sa * Sb)
    else:
        J0 = (b / Sb - a / Sa) / rho2
    J1 = 1.0 / Sa - 1.0 / Sb
    J2 = np.arcsinh(b / rho) - np.arcsinh(a / rho) - (b / Sb - a / Sa)
    return J0, J1, J2


def _axial_integral(d1: float, du2: np.ndarray, du3: np.ndarray) -> np.ndarray:
    """``int hat(u1) (d - u) / (4 pi |d - u|**3) du1`` for fixed transverse offsets."""
    rho2 = du2 * du2 + du3 * du3
    F1 = np.zeros_like(rho2)
    G = np.zeros_like(rho2)
    # a = d1 - u1; on u1 in [0, 1] the weight is (1 - d1) + a, on [-1, 0] it is (1 + d1) - a
    for lo, hi, c0, c1 in ((d1 - 1.0, d1, 1.0 - d1, 1.0), (d1, d1 + 1.0, 1.0 + d1, -1.0)):
        J0, J1, J2 = _segment_moments(lo, hi, rho2)
        F1 += c0 * J1 + c1 * J2
        G += c0 * J0 + c1 * J1
    return np.stack([F1, du2 * G, du3 * G], axis=-1) / _FOUR_PI


def tent_kernel_unit(d, n: int = 10, eta: float = 1.0) -> np.ndarray:
    """``(K * zeta)(d)`` for the unit tent; ``n`` is the Gauss order per cell."""
    d = np.asarray(d, dtype=float)
    # the tent is even in each coordinate: evaluate at |d| so reflections are exact
    sign = np.where(d < 0, -1.0, 1.0)
    d = np.abs(d)
    d1 = float(d[0])
    # graded cones also tame the near-singular case |d1| slightly above 1
    P, W = singular_rule(_BOXES, d[1:], n, eta=eta, grade=3)
    w2 = (1.0 - np.abs(P[:, 0])) * (1.0 - np.abs(P[:, 1]))
    F = _axial_integral(d1, d[1] - P[:, 0], d[2] - P[:, 1])
    return sign * ((W * w2) @ F)

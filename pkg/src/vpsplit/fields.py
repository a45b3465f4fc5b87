"""External field descriptions and axis-aligned line integrals of ``B``.

A :class:`FieldModel` carries the magnetic *profile* ``B(y)``; in scaled
(tau) variables the particles see ``B(eps * z)``, while in physical variables
the field is ``B(eps * x) / eps``.  The electric source ``E(z)`` is evaluated
at the scaled position directly.

Both callables take arrays of shape ``(..., 3)`` and return ``(..., 3)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss

VectorField = Callable[[np.ndarray], np.ndarray]

_GL_X, _GL_W = leggauss(7)


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach its tolerance."""


def zero_field(z):
    return np.zeros_like(np.asarray(z, dtype=float))


@dataclass(frozen=True)
class FieldModel:
    """Magnetic profile plus electric source.

    ``line_integral``, when given, is a closed-form replacement for
    :func:`line_integral_B` with the same signature minus ``fm``.
    """

    bfun: VectorField
    efun: VectorField = zero_field
    line_integral: Optional[Callable] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def B_scaled(self, z, eps):
        """``B(eps z)``, the field in tau variables."""
        return self.bfun(eps * np.asarray(z, dtype=float))

    def with_efun(self, efun: VectorField) -> "FieldModel":
        return FieldModel(self.bfun, efun, self.line_integral, self.name, dict(self.params))

    def lipschitz_estimate(self, lo, hi, samples: int = 64, h: float = 1e-6) -> float:
        """Largest sampled difference quotient of ``bfun`` over the box ``[lo, hi]``."""
        rng = np.random.default_rng(12345)
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        pts = lo + (hi - lo) * rng.random((samples, 3))
        best = 0.0
        for axis in range(3):
            dp = np.zeros(3)
            dp[axis] = h
            q = (self.bfun(pts + dp) - self.bfun(pts - dp)) / (2 * h)
            best = max(best, float(np.max(np.linalg.norm(q, axis=-1))))
        return best


def uniform_field(B0=(0.0, 0.0, 1.0), efun: VectorField = zero_field) -> FieldModel:
    B0 = np.asarray(B0, dtype=float)

    def bfun(y):
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(B0, y.shape).copy()

    def line_integral(i, j, a, b, frozen, eps):
        return B0[i] * (b - a) / eps

    return FieldModel(bfun, efun, line_integral, name="uniform", params={"B0": B0.tolist()})


def linear_restoring(z):
    """``E(z) = -z``."""
    return -np.asarray(z, dtype=float)


def _cubic_part(z):
    z = np.asarray(z, dtype=float)
    z1, z2, z3 = z[..., 0], z[..., 1], z[..., 2]
    return np.stack([z1 * (z3 - z2), z2 * (z1 - z3), z3 * (z2 - z1)], axis=-1)


# P_i(z) restricted to axis j is alpha + beta * z_j; these give (alpha, beta)
# in terms of the frozen coordinates.
def _affine_along_axis(i, j, z):
    z1, z2, z3 = z[..., 0], z[..., 1], z[..., 2]
    table = {
        (0, 0): (0.0, z3 - z2),
        (0, 1): (z1 * z3, -z1),
        (0, 2): (-z1 * z2, z1),
        (1, 0): (-z2 * z3, z2),
        (1, 1): (0.0, z1 - z3),
        (1, 2): (z1 * z2, -z2),
        (2, 0): (z2 * z3, -z3),
        (2, 1): (-z1 * z3, z3),
        (2, 2): (0.0, z2 - z1),
    }
    return table[(i, j)]


def strong_field(eps: float, reading: str = "physical", efun: VectorField = linear_restoring) -> FieldModel:
    """The strong-field test problem ``E = -x``, sheared cubic field on top of ``e3 / eps``.

    ``reading="physical"`` takes ``e3/eps + P(x)`` as the field acting on the
    particle, i.e. ``B(eps z) = e3 + eps P(z)`` in tau variables.
    ``reading="profile"`` takes ``e3 + P(y)`` as the profile ``B(y)``, i.e.
    ``B(eps z) = e3 + eps**2 P(z)``.
    """
    if reading == "physical":
        coef = eps  # B(eps z) = e3 + coef * P(z)
    elif reading == "profile":
        coef = eps**2
    else:
        raise ValueError(f"unknown field reading {reading!r}")
    e3 = np.array([0.0, 0.0, 1.0])

    def bfun(y):
        y = np.asarray(y, dtype=float)
        # P is homogeneous quadratic: P(y / eps) = P(y) / eps**2
        return e3 + (coef / eps**2) * _cubic_part(y)

    def line_integral(i, j, a, b, frozen, eps_):
        """(1/eps) int_a^b B_i(eps z) dz_j from the polynomial antiderivative."""
        if eps_ != eps:
            raise ValueError("field was built for a different eps")
        alpha, beta = _affine_along_axis(i, j, np.asarray(frozen, dtype=float))
        base = (b - a) if i == 2 else 0.0
        poly = alpha * (b - a) + 0.5 * beta * (b * b - a * a)
        return (base + coef * poly) / eps

    return FieldModel(bfun, efun, line_integral, name="strong",
                      params={"eps": eps, "reading": reading})


def _gl(f, a, b):
    """7-point Gauss-Legendre on [a, b] for a vector-valued ``f`` of a 1-d array."""
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    vals = f(mid + half * _GL_X)
    return half * np.tensordot(_GL_W, vals, axes=(0, 0))


def adaptive_gauss(f, a: float, b: float, rtol: float = 1e-12, atol: float = 0.0,
                   max_depth: int = 40):
    """Adaptive Gauss-Legendre with interval bisection.

    ``f`` maps a 1-d array of abscissae to an array whose first axis matches.
    Returns the integral and the number of function evaluations.
    """
    if a == b:
        return np.zeros(np.shape(f(np.array([a])))[1:]), 0
    whole = _gl(f, a, b)
    total = np.zeros_like(whole)
    evals = 7
    stack = [(a, b, whole, 0)]
    while stack:
        lo, hi, est, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        left = _gl(f, lo, mid)
        right = _gl(f, mid, hi)
        evals += 14
        refined = left + right
        err = np.max(np.abs(refined - est))
        scale = np.max(np.abs(refined))
        if err <= rtol * scale + atol:
            total = total + refined
        elif depth >= max_depth:
            raise QuadratureError(f"no convergence on [{lo}, {hi}], error {err:.3e}")
        else:
            stack.append((lo, mid, left, depth + 1))
            stack.append((mid, hi, right, depth + 1))
    return total, evals


def line_integral_B(fm: FieldModel, i: int, j: int, a: float, b: float, frozen, eps: float,
                    rtol: float = 1e-12) -> float:
    """``(1/eps) int_a^b B_i(eps z) dz_j`` along axis ``j`` with the other coordinates frozen."""
    return float(line_integrals_along(fm, j, a, b, frozen, eps, rtol)[i])


def line_integrals_along(fm: FieldModel, j: int, a: float, b: float, frozen, eps: float,
                         rtol: float = 1e-12) -> np.ndarray:
    """All three components of ``(1/eps) int_a^b B(eps z) dz_j`` in one quadrature."""
    if a == b:
        return np.zeros(3)
    base = np.asarray(frozen, dtype=float)

    def f(t):
        pts = np.repeat(base[None, :], t.size, axis=0)
        pts[:, j] = t
        return fm.bfun(eps * pts)

    # absolute floor for integrals that vanish by cancellation
    probe = np.max(np.abs(f(np.array([a, 0.5 * (a + b), b]))))
    atol = 1e-15 * abs(b - a) * max(probe, 1.0)
    val, _ = adaptive_gauss(f, a, b, rtol=rtol, atol=atol)
    return val / eps

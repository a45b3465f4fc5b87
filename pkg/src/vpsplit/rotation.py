"""Skew operator of a magnetic field and the closed-form exponentials built from it.

For ``B = (Bx, By, Bz)`` the operator is

    hat(B) = [[  0,  Bz, -By],
              [-Bz,   0,  Bx],
              [ By, -Bx,   0]]

so that ``hat(B) @ y == np.cross(y, B)``.  Since ``hat(B)**3 == -b**2 hat(B)``
with ``b = |B|``, the flow ``exp(s hat(B))`` and its time integral reduce to
quadratic polynomials in ``hat(B)`` (Rodrigues form).

All functions broadcast over leading axes: ``B`` may have shape ``(..., 3)``
and the returned matrices have shape ``(..., 3, 3)``.
"""
from __future__ import annotations

import numpy as np

# below this value of s*b the trigonometric coefficients use their Taylor series
SMALL_ANGLE = 1e-4


def hat(B) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    H = np.zeros(B.shape[:-1] + (3, 3))
    bx, by, bz = B[..., 0], B[..., 1], B[..., 2]
    H[..., 0, 1] = bz
    H[..., 0, 2] = -by
    H[..., 1, 0] = -bz
    H[..., 1, 2] = bx
    H[..., 2, 0] = by
    H[..., 2, 1] = -bx
    return H


def _coefficients(b, s):
    """Return (sin(sb)/b, (1-cos sb)/b^2, (sb - sin sb)/b^3) with a series branch."""
    b = np.asarray(b, dtype=float)
    s = np.broadcast_to(np.asarray(s, dtype=float), b.shape)
    x = s * b
    small = np.abs(x) < SMALL_ANGLE
    x2 = x * x

    with np.errstate(divide="ignore", invalid="ignore"):
        c1 = np.sin(x) / b
        c2 = 2.0 * np.sin(0.5 * x) ** 2 / b**2
        c3 = (x - np.sin(x)) / b**3

    # four-term Taylor expansions in x = s*b, scaled back by powers of s
    c1s = s * (1.0 - x2 / 6.0 + x2**2 / 120.0 - x2**3 / 5040.0)
    c2s = s**2 * (0.5 - x2 / 24.0 + x2**2 / 720.0 - x2**3 / 40320.0)
    c3s = s**3 * (1.0 / 6.0 - x2 / 120.0 + x2**2 / 5040.0 - x2**3 / 362880.0)

    return (np.where(small, c1s, c1), np.where(small, c2s, c2),
            np.where(small, c3s, c3))


def rot_exp(B, s) -> np.ndarray:
    """``exp(s hat(B)) = I + sin(sb)/b hat(B) + (1 - cos sb)/b^2 hat(B)^2``.

    The result is a rotation about ``B`` by the angle ``-s|B|``.
    """
    B = np.asarray(B, dtype=float)
    H = hat(B)
    H2 = H @ H
    c1, c2, _ = _coefficients(np.linalg.norm(B, axis=-1), s)
    return np.eye(3) + c1[..., None, None] * H + c2[..., None, None] * H2


def rot_exp_integral(B, s) -> np.ndarray:
    """``int_0^s exp(sigma hat(B)) dsigma``.

    Closed form ``s I + (1 - cos sb)/b^2 hat(B) + (sb - sin sb)/b^3 hat(B)^2``.
    """
    B = np.asarray(B, dtype=float)
    H = hat(B)
    H2 = H @ H
    _, c2, c3 = _coefficients(np.linalg.norm(B, axis=-1), s)
    s_arr = np.broadcast_to(np.asarray(s, dtype=float), c2.shape)
    return (s_arr[..., None, None] * np.eye(3) + c2[..., None, None] * H
            + c3[..., None, None] * H2)


def rotation_pair(B, s) -> tuple[np.ndarray, np.ndarray]:
    """Both ``rot_exp`` and ``rot_exp_integral`` sharing one set of products."""
    B = np.asarray(B, dtype=float)
    H = hat(B)
    H2 = H @ H
    c1, c2, c3 = _coefficients(np.linalg.norm(B, axis=-1), s)
    s_arr = np.broadcast_to(np.asarray(s, dtype=float), c1.shape)
    R = np.eye(3) + c1[..., None, None] * H + c2[..., None, None] * H2
    Q = (s_arr[..., None, None] * np.eye(3) + c2[..., None, None] * H
         + c3[..., None, None] * H2)
    return R, Q


def apply_rotation(B, s, w) -> tuple[np.ndarray, np.ndarray]:
    """``(exp(s hat(B)) w, int_0^s exp(sigma hat(B)) dsigma w)`` without forming matrices.

    Adding the small increments to ``w`` keeps ``|exp(s hat(B)) w|`` within a
    few ulps of ``|w|`` over very long runs, unlike the stored matrix whose
    diagonal ``1 - c2`` is already rounded.
    """
    B = np.asarray(B, dtype=float)
    w = np.asarray(w, dtype=float)
    Hw = np.cross(w, B)
    HHw = np.cross(Hw, B)
    c1, c2, c3 = _coefficients(np.linalg.norm(B, axis=-1), s)
    c1, c2, c3 = c1[..., None], c2[..., None], c3[..., None]
    s_arr = np.broadcast_to(np.asarray(s, dtype=float), c1.shape)
    return w + (c1 * Hw + c2 * HHw), s_arr * w + c2 * Hw + c3 * HHw

"""Independent reference computations used only by the tests."""
from __future__ import annotations

import math

import numpy as np
from numpy.polynomial.legendre import leggauss


def expm_series(A, terms=40, squarings=8):
    """Scaled-and-squared Taylor series of the matrix exponential."""
    A = np.asarray(A, dtype=float) / 2.0**squarings
    E = np.eye(len(A))
    term = np.eye(len(A))
    for k in range(1, terms):
        term = term @ A / k
        E = E + term
    for _ in range(squarings):
        E = E @ E
    return E


def gauss_integral(f, a, b, n=40, pieces=8):
    x, w = leggauss(n)
    total = 0.0
    edges = np.linspace(a, b, pieces + 1)
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        total = total + half * sum(wi * f(mid + half * xi) for xi, wi in zip(x, w))
    return total


def _tensor(lo, hi, n):
    x, w = leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    L = hi - lo
    g = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1).reshape(-1, 3)
    ww = np.einsum("i,j,k->ijk", w, w, w).reshape(-1)
    return lo + g * L, ww * np.prod(L)


def dyadic_kernel(shape_unit, d, n=5, rtol=1e-7, max_depth=22):
    """``int K(d - u) zeta(u) du`` over ``[-1, 1]**3`` by dyadic tensor Gauss-Legendre.

    Cells containing the singular point are always split into eight; other
    cells are split until the eight-child sum agrees with the parent rule.
    Cells that still contain the singular point at ``max_depth`` are
    dropped (their contribution is of the order of their size).
    """
    d = np.asarray(d, dtype=float)

    def rule(lo, hi):
        P, W = _tensor(lo, hi, n)
        diff = d - P
        rr = np.sqrt(np.sum(diff * diff, axis=1))
        return (W * shape_unit(P)) @ (diff / (4 * math.pi * rr[:, None] ** 3))

    def children(lo, hi):
        mid = 0.5 * (lo + hi)
        for c in range(8):
            bits = np.array([(c >> q) & 1 for q in range(3)], dtype=bool)
            yield np.where(bits, mid, lo), np.where(bits, hi, mid)

    scale = 1.0 / (4 * math.pi * max(np.dot(d, d), 1.0))

    def integrate(lo, hi, depth, coarse):
        contains = np.all(d >= lo) and np.all(d <= hi)
        if contains:
            if depth >= max_depth:
                return np.zeros(3)
            return sum(integrate(a, b, depth + 1, None) for a, b in children(lo, hi))
        if coarse is None:
            coarse = rule(lo, hi)
        parts = [(a, b, rule(a, b)) for a, b in children(lo, hi)]
        fine = sum(p[2] for p in parts)
        if np.linalg.norm(fine - coarse) <= rtol * scale * np.prod(hi - lo) or depth >= max_depth:
            return fine
        return sum(integrate(a, b, depth + 1, v) for a, b, v in parts)

    total = np.zeros(3)
    for c in range(8):
        s = np.array([1.0 if (c >> q) & 1 else -1.0 for q in range(3)])
        lo, hi = np.minimum(0.0, s), np.maximum(0.0, s)
        total = total + integrate(lo, hi, 0, None)
    return total


def convolution_brute(g, zeta_unit, r, x, n=24):
    """``(g * zeta_r)(x)`` with a dense tensor rule on each orthant of the support."""
    x = np.asarray(x, dtype=float)
    total = 0.0
    for c in range(8):
        s = np.array([1.0 if (c >> q) & 1 else -1.0 for q in range(3)]) * r
        P, W = _tensor(np.minimum(0.0, s), np.maximum(0.0, s), n)
        total += float((W * zeta_unit(P / r) / r**3) @ g(x - P))
    return total

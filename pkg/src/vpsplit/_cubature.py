"""Box cubature rules that resolve a point singularity.

Nodes are produced for integrands that blow up like ``|u - p|**-(d-1)`` at a
point ``p``.  Boxes containing ``p`` are cut at ``p`` and each corner box is
mapped onto pyramids (triangles in 2-d) with their apex at ``p``.  The
Duffy-type radial Jacobian ``t**(d-1)`` cancels the singularity; an extra
radial grading ``t = s**grade`` handles logarithmic remainders.  Boxes close
to ``p`` but not containing it are bisected along their long axes until
they are well separated, then get a plain tensor rule.
"""
from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss


@lru_cache(maxsize=None)
def gauss01(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def tensor_rule(lo, hi, n: int) -> tuple[np.ndarray, np.ndarray]:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    x, w = gauss01(n)
    d = lo.size
    L = hi - lo
    grid = np.stack(np.meshgrid(*([x] * d), indexing="ij"), axis=-1).reshape(-1, d)
    ww = w
    for _ in range(d - 1):
        ww = np.multiply.outer(ww, w)
    return lo + grid * L, ww.reshape(-1) * np.prod(L)


def pyramid_rule(lo, hi, apex, n: int, grade: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Cone decomposition of the box ``[lo, hi]`` from ``apex`` (a point of the closed box)."""
    d = lo.size
    t, wt = gauss01(n)
    s = t**grade
    ws = wt * grade * t ** (grade - 1) * s ** (d - 1)
    a, wa = gauss01(n)
    pts, wts = [], []
    for ax in range(d):
        others = [i for i in range(d) if i != ax]
        for side in (lo[ax], hi[ax]):
            height = abs(side - apex[ax])
            if height == 0:
                continue
            face, fw = tensor_rule(lo[others], hi[others], n)
            F = np.empty((len(face), d))
            F[:, ax] = side
            F[:, others] = face
            P = apex + s[:, None, None] * (F[None, :, :] - apex)
            pts.append(P.reshape(-1, d))
            wts.append((ws[:, None] * fw[None, :] * height).reshape(-1))
    if not pts:
        return np.zeros((0, d)), np.zeros(0)
    return np.concatenate(pts), np.concatenate(wts)


class _Collector:
    def __init__(self, n, eta, grade, max_depth):
        self.n = n
        self.eta = eta
        self.grade = grade
        self.max_depth = max_depth
        self.pts = []
        self.wts = []

    def add(self, rule):
        self.pts.append(rule[0])
        self.wts.append(rule[1])

    def corner_box(self, lo, hi, p):
        # p is a corner; peel off cube-like pieces so the cones stay well shaped
        ext = hi - lo
        m = ext.min()
        ax = int(np.argmax(ext))
        if ext[ax] > 2 * m:
            near_lo, near_hi = lo.copy(), hi.copy()
            far_lo, far_hi = lo.copy(), hi.copy()
            if p[ax] == lo[ax]:
                near_hi[ax] = lo[ax] + m
                far_lo[ax] = lo[ax] + m
            else:
                near_lo[ax] = hi[ax] - m
                far_hi[ax] = hi[ax] - m
            self.corner_box(near_lo, near_hi, p)
            self.box(far_lo, far_hi, p, 0, contains_checked=True)
            return
        self.add(pyramid_rule(lo, hi, p, self.n, self.grade))

    def box(self, lo, hi, p, depth, contains_checked=False):
        if not contains_checked and np.all(p >= lo) and np.all(p <= hi):
            cuts = [[lo[i]] + ([p[i]] if lo[i] < p[i] < hi[i] else []) + [hi[i]]
                    for i in range(lo.size)]
            for idx in itertools.product(*[range(len(c) - 1) for c in cuts]):
                blo = np.array([cuts[i][k] for i, k in enumerate(idx)])
                bhi = np.array([cuts[i][k + 1] for i, k in enumerate(idx)])
                self.corner_box(blo, bhi, p)
            return
        q = np.clip(p, lo, hi)
        ext = hi - lo
        if np.linalg.norm(p - q) >= self.eta * np.linalg.norm(ext):
            self.add(tensor_rule(lo, hi, self.n))
            return
        if depth >= self.max_depth:
            self.add(pyramid_rule(lo, hi, q, self.n))
            return
        split = ext >= 0.5 * ext.max()
        mid = 0.5 * (lo + hi)
        choices = [(0, 1) if split[i] else (0,) for i in range(lo.size)]
        for sel in itertools.product(*choices):
            sel = np.array(sel, dtype=bool)
            clo = np.where(sel & split, mid, lo)
            chi = np.where(split & ~sel, mid, hi)
            self.box(clo, chi, p, depth + 1)


def singular_rule(boxes, p, n: int, eta: float = 1.0, grade: int = 1,
                  max_depth: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights over the union of ``boxes`` (list of (lo, hi)) adapted to ``p``."""
    p = np.asarray(p, dtype=float)
    col = _Collector(n, eta, grade, max_depth)
    for lo, hi in boxes:
        col.box(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float), p, 0)
    return np.concatenate(col.pts), np.concatenate(col.wts)


def orthant_boxes(d: int, half: float = 1.0):
    """The ``2**d`` orthant pieces of ``[-half, half]**d``."""
    out = []
    for signs in itertools.product((-1.0, 1.0), repeat=d):
        s = np.array(signs) * half
        out.append((np.minimum(0.0, s), np.maximum(0.0, s)))
    return out


def split_box_rule(lo, hi, cuts, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor rule on ``[lo, hi]`` after cutting each axis at the given interior planes."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    edges = []
    for i in range(lo.size):
        inner = sorted(c for c in cuts[i] if lo[i] < c < hi[i])
        edges.append([lo[i]] + inner + [hi[i]])
    pts, wts = [], []
    for idx in itertools.product(*[range(len(e) - 1) for e in edges]):
        blo = [edges[i][k] for i, k in enumerate(idx)]
        bhi = [edges[i][k + 1] for i, k in enumerate(idx)]
        P, W = tensor_rule(blo, bhi, n)
        pts.append(P)
        wts.append(W)
    return np.concatenate(pts), np.concatenate(wts)

"""Weighted macro-particle ensembles on a phase-space grid.

A density ``f0(x, v)`` is replaced by one Dirac mass per phase-space cell,
placed at the cell center with weight ``f0(center) * cell volume`` (the
midpoint rule).  Densities without compact support are simply truncated to
the grid bounds.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class Box3:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(a) for a in self.lo)
        hi = tuple(float(b) for b in self.hi)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("Box3 needs three lower and three upper bounds")
        if not all(b > a for a, b in zip(lo, hi)):
            raise ValueError(f"box has nonpositive volume: {lo} .. {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def extent(self) -> np.ndarray:
        return np.subtract(self.hi, self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    @classmethod
    def cube(cls, a: float, b: float) -> "Box3":
        return cls((a, a, a), (b, b, b))


def _cells(extent: float, width: float) -> int:
    n = extent / width
    m = int(round(n))
    if m < 1 or abs(n - m) > 1e-9 * max(1.0, n):
        raise ValueError(f"extent {extent} is not an integer multiple of mesh width {width}")
    return m


@dataclass(frozen=True)
class PhaseGridSpec:
    dx: tuple
    dv: tuple
    xbounds: Box3
    vbounds: Box3

    def __post_init__(self):
        dx = tuple(float(a) for a in self.dx)
        dv = tuple(float(a) for a in self.dv)
        if len(dx) != 3 or len(dv) != 3 or min(dx + dv) <= 0:
            raise ValueError("mesh widths must be three positive reals each")
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "dv", dv)
        # validates the integer-multiple invariant
        self.shape

    @property
    def shape(self) -> tuple:
        nx = tuple(_cells(e, d) for e, d in zip(self.xbounds.extent, self.dx))
        nv = tuple(_cells(e, d) for e, d in zip(self.vbounds.extent, self.dv))
        return nx + nv

    @property
    def beta(self) -> float:
        return math.sqrt(sum(d * d for d in self.dx) + sum(d * d for d in self.dv))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.dx) * np.prod(self.dv))

    @classmethod
    def uniform(cls, xbounds: Box3, vbounds: Box3, n: int) -> "PhaseGridSpec":
        """``n`` cells along each of the six axes."""
        return cls(tuple(xbounds.extent / n), tuple(vbounds.extent / n), xbounds, vbounds)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell centers in row-major order over (x1, x2, x3, v1, v2, v3)."""
        lo = np.concatenate([self.xbounds.lo, self.vbounds.lo])
        width = np.concatenate([self.dx, self.dv])
        axes = [lo[i] + (np.arange(n) + 0.5) * width[i] for i, n in enumerate(self.shape)]
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        return pts[:, :3].copy(), pts[:, 3:].copy()


@dataclass(frozen=True)
class Ensemble:
    X: np.ndarray
    V: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float).reshape(-1, 3)
        V = np.asarray(self.V, dtype=float).reshape(-1, 3)
        alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        if not (len(X) == len(V) == len(alpha)):
            raise ValueError("X, V and alpha must share their length")
        if not np.all(np.isfinite(alpha)):
            raise ValueError("non-finite particle weight")
        alpha.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "alpha", alpha)

    @property
    def N(self) -> int:
        return len(self.alpha)

    def __len__(self):
        return self.N

    def with_state(self, X, V) -> "Ensemble":
        """Same weights (the identical array), new phase-space coordinates."""
        return Ensemble(X, V, self.alpha)

    @classmethod
    def empty(cls) -> "Ensemble":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))


Density = Callable[[np.ndarray, np.ndarray], np.ndarray]


def init_grid(spec: PhaseGridSpec, f0: Density, prune: bool = False) -> Ensemble:
    """Midpoint-rule particles, one per phase-space cell.

    ``f0`` is called once with the ``(N, 3)`` arrays of cell-center positions
    and velocities.  Zero-weight particles are kept unless ``prune`` is set.
    """
    X, V = spec.centers()
    vals = np.broadcast_to(np.asarray(f0(X, V), dtype=float), (len(X),))
    bad = ~np.isfinite(vals)
    if np.any(bad):
        j = int(np.argmax(bad))
        raise ValueError(f"f0 is not finite at cell {j}: x={X[j]}, v={V[j]}")
    alpha = vals * spec.cell_volume
    if prune:
        keep = alpha != 0
        X, V, alpha = X[keep], V[keep], alpha[keep]
    return Ensemble(X, V, alpha)


def weak_pair(ens: Ensemble, psi: Density) -> float:
    """``sum_j alpha_j psi(X_j, V_j)``."""
    if ens.N == 0:
        return 0.0
    vals = np.broadcast_to(np.asarray(psi(ens.X, ens.V), dtype=float), (ens.N,))
    return float(np.dot(ens.alpha, vals))


def moments(ens: Ensemble) -> tuple[float, np.ndarray, float]:
    """Mass, momentum and kinetic energy."""
    mass = float(np.sum(ens.alpha))
    # elementwise products so mirror-symmetric pairs cancel exactly
    momentum = np.sum(ens.alpha[:, None] * ens.V, axis=0) if ens.N else np.zeros(3)
    kinetic = 0.5 * float(np.dot(ens.alpha, np.einsum("ij,ij->i", ens.V, ens.V)))
    return mass, np.asarray(momentum, dtype=float), kinetic


def write_snapshot(path, ens: Ensemble) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["j", "x1", "x2", "x3", "v1", "v2", "v3", "alpha"])
        for j in range(ens.N):
            row = [*ens.X[j], *ens.V[j], ens.alpha[j]]
            out.writerow([j] + [f"{v:.17g}" for v in row])


def read_snapshot(path) -> Ensemble:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # header-only file
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        return Ensemble.empty()
    return Ensemble(data[:, 1:4], data[:, 4:7], data[:, 7])

"""Trilinear finite elements for the electrostatic potential on a box.

Solves ``(grad phi_h, grad psi) = <rho_h, psi>`` for all ``psi`` in the
continuous Q1 space on a uniform hexahedral mesh with ``phi_h = 0`` on the
boundary, and evaluates ``E = -grad phi_h``.

Node ``(i, j, k)`` sits at ``lo + (i hx, j hy, k hz)`` and has flat index
``(i * (ny + 1) + j) * (nz + 1) + k``.  The stiffness matrix of a tensor mesh
is the Kronecker sum ``Kx (x) My (x) Mz + Mx (x) Ky (x) Mz + Mx (x) My (x) Kz``
of 1-d stiffness and mass matrices.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .ensemble import Box3, Ensemble
from .mollify import ShapeSpec

_G3_X, _G3_W = np.polynomial.legendre.leggauss(3)
_G3_X = 0.5 * (_G3_X + 1.0)
_G3_W = 0.5 * _G3_W


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message}: relative residual {residual:.3e} after {iterations} iterations")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class MeshSpec:
    box: Box3
    cells: tuple
    k: int = 1

    def __post_init__(self):
        cells = tuple(int(c) for c in self.cells)
        if len(cells) != 3 or min(cells) < 1:
            raise ValueError("cells must be three positive integers")
        if self.k != 1:
            raise ValueError("only trilinear elements (k = 1) are implemented")
        object.__setattr__(self, "cells", cells)

    @property
    def spacing(self) -> np.ndarray:
        return self.box.extent / np.array(self.cells)

    @property
    def hx(self) -> float:
        """Cell diameter."""
        return float(np.linalg.norm(self.spacing))

    @property
    def node_shape(self) -> tuple:
        return tuple(c + 1 for c in self.cells)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.node_shape))

    @property
    def n_interior(self) -> int:
        return int(np.prod([c - 1 for c in self.cells]))

    def axis_nodes(self, a: int) -> np.ndarray:
        return self.box.lo[a] + np.arange(self.cells[a] + 1) * self.spacing[a]

    def nodes(self) -> np.ndarray:
        g = np.meshgrid(*[self.axis_nodes(a) for a in range(3)], indexing="ij")
        return np.stack(g, axis=-1)

    def interior_mask(self) -> np.ndarray:
        m = np.zeros(self.node_shape, dtype=bool)
        m[1:-1, 1:-1, 1:-1] = True
        return m

    @classmethod
    def unit_cube(cls, n: int) -> "MeshSpec":
        return cls(Box3.cube(0.0, 1.0), (n, n, n))


@dataclass
class NodalField:
    """Nodal values on the full grid; boundary entries are zero for solver output."""

    mesh: MeshSpec
    values: np.ndarray
    iterations: int = 0
    residual: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.mesh.node_shape)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite nodal values")

    @property
    def interior(self) -> np.ndarray:
        return self.values[1:-1, 1:-1, 1:-1].ravel()

    @classmethod
    def zeros(cls, mesh: MeshSpec) -> "NodalField":
        return cls(mesh, np.zeros(mesh.node_shape))

    @classmethod
    def interpolate(cls, mesh: MeshSpec, f: Callable) -> "NodalField":
        return cls(mesh, f(mesh.nodes()))


@dataclass
class LoadVector:
    """``<rho_h, phi_n>`` for every node of the full grid plus deposit statistics."""

    mesh: MeshSpec
    values: np.ndarray
    stats: dict = field(default_factory=dict)

    @property
    def interior(self) -> np.ndarray:
        return self.values[1:-1, 1:-1, 1:-1].ravel()

    @property
    def total(self) -> float:
        return float(self.values.sum())

    def scaled(self, c: float) -> "LoadVector":
        return LoadVector(self.mesh, c * self.values, dict(self.stats))


def _fem_1d(n: int, h: float):
    main = np.full(n + 1, 2.0)
    main[0] = main[-1] = 1.0
    K = sp.diags([-np.ones(n), main, -np.ones(n)], [-1, 0, 1]) / h
    M = sp.diags([np.ones(n), 2.0 * main, np.ones(n)], [-1, 0, 1]) * (h / 6.0)
    return K.tocsr(), M.tocsr()


def stiffness_matrix(mesh: MeshSpec, interior: bool = True) -> sp.csr_matrix:
    mats = []
    for a in range(3):
        K, M = _fem_1d(mesh.cells[a], mesh.spacing[a])
        if interior:
            K = K[1:-1, 1:-1]
            M = M[1:-1, 1:-1]
        mats.append((K, M))
    (Kx, Mx), (Ky, My), (Kz, Mz) = mats
    A = (sp.kron(Kx, sp.kron(My, Mz)) + sp.kron(Mx, sp.kron(Ky, Mz))
         + sp.kron(Mx, sp.kron(My, Kz)))
    return A.tocsr()


def mass_matrix(mesh: MeshSpec, interior: bool = True) -> sp.csr_matrix:
    Ms = []
    for a in range(3):
        _, M = _fem_1d(mesh.cells[a], mesh.spacing[a])
        Ms.append(M[1:-1, 1:-1] if interior else M)
    return sp.kron(Ms[0], sp.kron(Ms[1], Ms[2])).tocsr()


def _hat_integrals(mesh: MeshSpec, a: int) -> np.ndarray:
    w = np.full(mesh.cells[a] + 1, mesh.spacing[a])
    w[0] = w[-1] = 0.5 * mesh.spacing[a]
    return w


def _background(mesh: MeshSpec, rho0: float) -> np.ndarray:
    wx, wy, wz = (_hat_integrals(mesh, a) for a in range(3))
    return -rho0 * np.einsum("i,j,k->ijk", wx, wy, wz)


def _tent_axis_weights(X: np.ndarray, r: float, nodes: np.ndarray, h: float):
    """``int phi_i(x) tau_r(x - X_p) dx`` for every particle ``p`` and hat ``i`` it overlaps.

    Exact: on each element the support splits at ``X_p`` into pieces where the
    integrand is quadratic.  Returns (first node index per particle,
    weights of shape ``(P, M + 1)``); trailing columns may be zero.
    """
    lo, hi = nodes[0], nodes[-1]
    n = len(nodes) - 1
    M = int(math.ceil(2.0 * r / h)) + 1
    a = np.maximum(X - r, lo)
    b = np.minimum(X + r, hi)
    i0 = np.clip(np.floor((a - lo) / h), 0, n - 1).astype(int)
    out = np.zeros((X.size, M + 1))
    for k in range(M):
        el = lo + (i0 + k) * h
        for side_lo, side_hi in ((X - r, X), (X, X + r)):
            s = np.maximum(np.maximum(el, side_lo), a)
            t = np.minimum(np.minimum(el + h, side_hi), b)
            L = np.maximum(t - s, 0.0)
            x = s[:, None] + L[:, None] * _G3_X
            w = L[:, None] * _G3_W * np.maximum(1.0 - np.abs(x - X[:, None]) / r, 0.0) / r
            xi = (x - el[:, None]) / h
            out[:, k] += np.sum(w * (1.0 - xi), axis=1)
            out[:, k + 1] += np.sum(w * xi, axis=1)
    return i0, out


def _deposit_tent(ens: Ensemble, mesh: MeshSpec, r: float, out: np.ndarray, stats: dict):
    keep = ens.alpha != 0.0
    X, alpha = ens.X[keep], ens.alpha[keep]
    if X.shape[0] == 0:
        return
    starts, ws = [], []
    for a in range(3):
        i0, w = _tent_axis_weights(X[:, a], r, mesh.axis_nodes(a), mesh.spacing[a])
        starts.append(i0)
        ws.append(w)
    inside = np.prod([w.sum(axis=1) for w in ws], axis=0)
    stats["clipped_charge"] += float(np.sum(alpha * (1.0 - inside)))
    stats["outside_particles"] += int(np.sum(inside == 0.0))
    stats["clipped_particles"] += int(np.sum((inside > 0.0) & (inside < 1.0 - 1e-14)))
    blocks = alpha[:, None, None, None] * np.einsum("pi,pj,pk->pijk", *ws)
    m = [w.shape[1] for w in ws]
    padded = np.zeros(tuple(s + mm for s, mm in zip(out.shape, m)))
    I = starts[0][:, None, None, None] + np.arange(m[0])[None, :, None, None]
    J = starts[1][:, None, None, None] + np.arange(m[1])[None, None, :, None]
    K = starts[2][:, None, None, None] + np.arange(m[2])[None, None, None, :]
    I, J, K = np.broadcast_arrays(I, J, K)
    np.add.at(padded, (I.ravel(), J.ravel(), K.ravel()), blocks.ravel())
    out += padded[:out.shape[0], :out.shape[1], :out.shape[2]]


def _axis_pieces(X: float, r: float, nodes: np.ndarray, h: float):
    """Sub-intervals of the support inside the mesh, split at nodes and at X, with element ids."""
    lo, hi = nodes[0], nodes[-1]
    a, b = max(X - r, lo), min(X + r, hi)
    n = len(nodes) - 1
    if a >= b:
        return []
    i0 = int(np.clip(math.floor((a - lo) / h), 0, n - 1))
    i1 = int(np.clip(math.ceil((b - lo) / h), 1, n))
    brk = np.unique(np.clip(np.concatenate([[a, b, X], nodes[i0:i1 + 1]]), a, b))
    pieces = []
    for s, t in zip(brk[:-1], brk[1:]):
        if t > s:
            e = int(np.clip(math.floor((0.5 * (s + t) - lo) / h), 0, n - 1))
            pieces.append((s, t, e))
    return pieces


def _deposit_generic(ens: Ensemble, mesh: MeshSpec, shape: ShapeSpec, out: np.ndarray, stats: dict):
    """Element-wise 3x3x3 Gauss with subdivision at the support planes of each particle."""
    axes = [mesh.axis_nodes(a) for a in range(3)]
    hs = mesh.spacing
    r = shape.r
    for j in range(ens.N):
        alpha = ens.alpha[j]
        if alpha == 0.0:
            continue
        X = ens.X[j]
        pieces = [_axis_pieces(X[a], r, axes[a], hs[a]) for a in range(3)]
        if any(len(p) == 0 for p in pieces):
            stats["outside_particles"] += 1
            stats["clipped_charge"] += alpha
            continue
        # 1-d nodes, weights, element ids and local coordinates per axis
        per_axis = []
        for a in range(3):
            xs, ws, es = [], [], []
            for s, t, e in pieces[a]:
                xs.append(s + (t - s) * _G3_X)
                ws.append((t - s) * _G3_W)
                es.append(np.full(3, e))
            xs = np.concatenate(xs)
            per_axis.append((xs, np.concatenate(ws), np.concatenate(es),
                             (xs - axes[a][np.concatenate(es)]) / hs[a]))
        (x1, w1, e1, t1), (x2, w2, e2, t2), (x3, w3, e3, t3) = per_axis
        P = np.stack(np.meshgrid(x1, x2, x3, indexing="ij"), axis=-1)
        W = np.einsum("i,j,k->ijk", w1, w2, w3)
        vals = alpha * W * shape.unit((P - X) / r) / r**3
        charge = float(vals.sum())
        stats["clipped_charge"] += alpha - charge
        if charge < alpha * (1.0 - 1e-12):
            stats["clipped_particles"] += 1
        for b1 in (0, 1):
            f1 = t1 if b1 else 1.0 - t1
            for b2 in (0, 1):
                f2 = t2 if b2 else 1.0 - t2
                for b3 in (0, 1):
                    f3 = t3 if b3 else 1.0 - t3
                    contrib = vals * np.einsum("i,j,k->ijk", f1, f2, f3)
                    I = np.broadcast_to((e1 + b1)[:, None, None], contrib.shape)
                    J = np.broadcast_to((e2 + b2)[None, :, None], contrib.shape)
                    K = np.broadcast_to((e3 + b3)[None, None, :], contrib.shape)
                    np.add.at(out, (I.ravel(), J.ravel(), K.ravel()), contrib.ravel())


def deposit(ens: Ensemble, mesh: MeshSpec, shape: ShapeSpec, rho0: float = 0.0,
            method: str = "auto") -> LoadVector:
    """Load vector of ``rho_h = sum_j alpha_j zeta_r(x - X_j) - rho0``.

    ``method`` is ``"separable"`` (tent only, exact 1-d products),
    ``"quadrature"`` (element Gauss rule, any shape) or ``"auto"``.
    Charge outside the box is dropped and tallied in ``stats``.
    """
    if method == "auto":
        method = "separable" if shape.kind == "tent" else "quadrature"
    if method == "separable" and shape.kind != "tent":
        raise ValueError("the separable deposit needs the tent shape")
    out = np.zeros(mesh.node_shape)
    stats = {"clipped_charge": 0.0, "clipped_particles": 0, "outside_particles": 0}
    if method == "separable":
        _deposit_tent(ens, mesh, shape.r, out, stats)
    elif method == "quadrature":
        _deposit_generic(ens, mesh, shape, out, stats)
    else:
        raise ValueError(f"unknown deposit method {method!r}")
    if rho0 != 0.0:
        out += _background(mesh, rho0)
    stats["deposited_charge"] = float(out.sum())
    return LoadVector(mesh, out, stats)


def load_from_function(mesh: MeshSpec, f: Callable) -> LoadVector:
    """``<f, phi_n>`` by 3x3x3 Gauss per element; ``f`` maps ``(..., 3)`` points to values."""
    h = mesh.spacing
    out = np.zeros(mesh.node_shape)
    cx = [mesh.axis_nodes(a)[:-1] for a in range(3)]
    for q1, w1 in zip(_G3_X, _G3_W):
        for q2, w2 in zip(_G3_X, _G3_W):
            for q3, w3 in zip(_G3_X, _G3_W):
                g = np.meshgrid(cx[0] + q1 * h[0], cx[1] + q2 * h[1], cx[2] + q3 * h[2], indexing="ij")
                fv = f(np.stack(g, axis=-1)) * (w1 * w2 * w3 * np.prod(h))
                for b1, s1 in ((0, 1 - q1), (1, q1)):
                    for b2, s2 in ((0, 1 - q2), (1, q2)):
                        for b3, s3 in ((0, 1 - q3), (1, q3)):
                            n1, n2, n3 = mesh.cells
                            out[b1:b1 + n1, b2:b2 + n2, b3:b3 + n3] += s1 * s2 * s3 * fv
    return LoadVector(mesh, out, {})


def pcg(A, b: np.ndarray, rtol: float = 1e-10, maxiter: Optional[int] = None):
    """Jacobi-preconditioned conjugate gradients; returns (x, iterations, relative residual)."""
    n = b.size
    if maxiter is None:
        maxiter = int(500 * max(n, 1) ** (1.0 / 3.0))
    bnorm = float(np.linalg.norm(b))
    x = np.zeros(n)
    if bnorm == 0.0:
        return x, 0, 0.0
    dinv = 1.0 / A.diagonal()
    r = b.copy()
    z = dinv * r
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, maxiter + 1):
        Ap = A @ p
        alpha = rz / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        res = float(np.linalg.norm(r)) / bnorm
        if res <= rtol:
            return x, it, res
        z = dinv * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError("conjugate gradients hit the iteration cap", res, maxiter)


def solve_poisson(rhs: LoadVector, mesh: Optional[MeshSpec] = None, rtol: float = 1e-10,
                  A: Optional[sp.csr_matrix] = None) -> NodalField:
    """Homogeneous-Dirichlet Q1 solution for the load ``rhs``."""
    mesh = rhs.mesh if mesh is None else mesh
    if mesh != rhs.mesh:
        raise ValueError("load vector belongs to a different mesh")
    vals = np.zeros(mesh.node_shape)
    if mesh.n_interior == 0:
        return NodalField(mesh, vals)
    A = stiffness_matrix(mesh) if A is None else A
    u, it, res = pcg(A, rhs.interior, rtol)
    vals[1:-1, 1:-1, 1:-1] = u.reshape([c - 1 for c in mesh.cells])
    return NodalField(mesh, vals, it, res)


def _locate(mesh: MeshSpec, x: np.ndarray):
    lo = np.asarray(mesh.box.lo)
    hi = np.asarray(mesh.box.hi)
    tol = 1e-12 * np.maximum(1.0, np.abs(hi - lo))
    if np.any(x < lo - tol) or np.any(x > hi + tol):
        raise ValueError("evaluation point outside the mesh box")
    a = (x - lo) / mesh.spacing
    e = np.clip(np.floor(a).astype(int), 0, np.array(mesh.cells) - 1)
    return e, a - e


def eval_potential(phi: NodalField, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    pts = x.reshape(-1, 3)
    e, t = _locate(phi.mesh, pts)
    out = np.zeros(len(pts))
    for c in range(8):
        b = [(c >> q) & 1 for q in range(3)]
        w = np.prod([t[:, q] if b[q] else 1.0 - t[:, q] for q in range(3)], axis=0)
        out += w * phi.values[e[:, 0] + b[0], e[:, 1] + b[1], e[:, 2] + b[2]]
    return out.reshape(x.shape[:-1])


def eval_gradient(phi: NodalField, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    pts = x.reshape(-1, 3)
    e, t = _locate(phi.mesh, pts)
    h = phi.mesh.spacing
    out = np.zeros((len(pts), 3))
    for c in range(8):
        b = [(c >> q) & 1 for q in range(3)]
        f = [t[:, q] if b[q] else 1.0 - t[:, q] for q in range(3)]
        df = [(1.0 if b[q] else -1.0) / h[q] for q in range(3)]
        v = phi.values[e[:, 0] + b[0], e[:, 1] + b[1], e[:, 2] + b[2]]
        out[:, 0] += v * df[0] * f[1] * f[2]
        out[:, 1] += v * f[0] * df[1] * f[2]
        out[:, 2] += v * f[0] * f[1] * df[2]
    return out.reshape(x.shape)


def eval_field(phi: NodalField, x) -> np.ndarray:
    """``-grad phi_h`` at ``x`` (one point or an ``(M, 3)`` batch)."""
    return -eval_gradient(phi, x)


def _element_gauss_points(mesh: MeshSpec):
    h = mesh.spacing
    cx = [mesh.axis_nodes(a)[:-1] for a in range(3)]
    q = [np.add.outer(cx[a], _G3_X * h[a]).ravel() for a in range(3)]
    wq = [np.tile(_G3_W * h[a], mesh.cells[a]) for a in range(3)]
    P = np.stack(np.meshgrid(*q, indexing="ij"), axis=-1).reshape(-1, 3)
    W = np.einsum("i,j,k->ijk", *wq).ravel()
    return P, W


def l2_error(phi: NodalField, exact: Callable) -> float:
    P, W = _element_gauss_points(phi.mesh)
    d = eval_potential(phi, P) - exact(P)
    return math.sqrt(float(W @ (d * d)))


def gradient_error(phi: NodalField, exact_grad: Callable) -> float:
    """H1-seminorm error sampled at the element Gauss points."""
    P, W = _element_gauss_points(phi.mesh)
    d = eval_gradient(phi, P) - exact_grad(P)
    return math.sqrt(float(W @ np.sum(d * d, axis=1)))


def field_energy(phi: NodalField) -> float:
    """``1/2 int |grad phi_h|^2`` by element Gauss quadrature."""
    P, W = _element_gauss_points(phi.mesh)
    g = eval_gradient(phi, P)
    return 0.5 * float(W @ np.sum(g * g, axis=1))


def density_at_nodes(ens: Ensemble, mesh: MeshSpec, shape: ShapeSpec, rho0: float = 0.0) -> NodalField:
    """Point values of the mollified density at the mesh nodes."""
    nodes = mesh.nodes().reshape(-1, 3)
    rho = np.full(len(nodes), -rho0)
    for j in range(ens.N):
        if ens.alpha[j] != 0.0:
            rho += ens.alpha[j] * shape.unit((nodes - ens.X[j]) / shape.r) / shape.r**3
    return NodalField(mesh, rho)


def write_nodal_csv(path, f: NodalField, column: str = "phi") -> None:
    nodes = f.mesh.nodes()
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["i", "j", "k", "x1", "x2", "x3", column])
        for idx in np.ndindex(*f.mesh.node_shape):
            x = nodes[idx]
            out.writerow([*idx, f"{x[0]:.17g}", f"{x[1]:.17g}", f"{x[2]:.17g}",
                          f"{f.values[idx]:.17g}"])

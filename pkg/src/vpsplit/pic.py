"""Self-consistent particle simulation: deposit, solve, push.

Each step is bulk-synchronous.  The self-consistent field is computed once
from the positions at the start of the step and frozen; every particle is
then pushed with the external field plus that frozen snapshot.  Particle
weights are never touched, so the total mass is bit-constant.

Particles that leave the mesh box stop depositing charge and feel no
self-consistent field, but keep moving in the external fields.  In the
mesh-free mode the field of particle ``j`` excludes particle ``j`` itself and
has no domain restriction.
"""
from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .ensemble import Box3, Ensemble, PhaseGridSpec, init_grid, moments
from .fieldsolve import (LoadVector, MeshSpec, NodalField, deposit, eval_field,
                         field_energy, solve_poisson, stiffness_matrix)
from .fields import FieldModel
from .mollify import KernelEval, ShapeSpec, field_direct
from .pusher import STEPPERS, ParticleState, ScaledClock

CHUNK = 256
DIAGNOSTIC_COLUMNS = ("step", "tau", "mass", "p1", "p2", "p3", "H", "He")


@dataclass
class PicConfig:
    clock: ScaledClock
    field_model: FieldModel
    shape: ShapeSpec
    grid: Optional[PhaseGridSpec] = None
    mesh: Optional[MeshSpec] = None
    scheme: str = "hsbx"
    rho0: float = 0.0
    cadence: int = 1
    domain: Optional[Box3] = None  # background box for the mesh-free mode
    threads: int = 1
    reproducible: bool = False

    def __post_init__(self):
        if self.scheme not in ("scpd", "hsbx"):
            raise ValueError("PIC runs use the scpd or hsbx pusher")
        if int(self.cadence) != self.cadence or self.cadence < 1:
            raise ValueError("diagnostics cadence must be a positive integer")
        if self.threads < 1:
            raise ValueError("threads must be positive")
        if self.mesh is not None and self.shape.r >= 0.5 * float(np.min(self.mesh.box.extent)):
            raise ValueError("shape radius must be below half the smallest box extent")
        if self.mesh is None and self.rho0 != 0.0 and self.domain is None:
            raise ValueError("mesh-free runs with a background density need a domain box")

    @property
    def mesh_free(self) -> bool:
        return self.mesh is None


@dataclass
class PicResult:
    diagnostics: list
    ensemble: Ensemble
    meta: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.diagnostics])


def _chunks(n: int):
    return [(a, min(a + CHUNK, n)) for a in range(0, n, CHUNK)]


class _Runner:
    def __init__(self, cfg: PicConfig, ens: Ensemble):
        self.cfg = cfg
        self.ens = ens
        self.pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
        self.kernel = KernelEval(cfg.shape) if cfg.mesh_free else None
        self.A = stiffness_matrix(cfg.mesh) if cfg.mesh is not None and cfg.mesh.n_interior else None
        self.stats = {"clipped_charge_max": 0.0, "clipped_particles_max": 0,
                      "outside_particles_max": 0, "escaped_particles_max": 0,
                      "solver_iterations_max": 0}

    def map(self, fn, items):
        if self.pool is None:
            return [fn(i) for i in items]
        return list(self.pool.map(fn, items))

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    # field snapshot -----------------------------------------------------
    def solve(self, ens: Ensemble, step: int) -> Optional[NodalField]:
        cfg = self.cfg
        if cfg.mesh_free:
            return None
        parts = self.map(lambda c: deposit(Ensemble(ens.X[c[0]:c[1]], ens.V[c[0]:c[1]],
                                                    ens.alpha[c[0]:c[1]]),
                                           cfg.mesh, cfg.shape),
                         _chunks(ens.N))
        total = np.zeros(cfg.mesh.node_shape)
        clipped, n_clip, n_out = 0.0, 0, 0
        for p in parts:  # fixed chunk order
            total += p.values
            clipped += p.stats["clipped_charge"]
            n_clip += p.stats["clipped_particles"]
            n_out += p.stats["outside_particles"]
        if cfg.rho0 != 0.0:
            total += deposit(Ensemble.empty(), cfg.mesh, cfg.shape, cfg.rho0).values
        s = self.stats
        s["clipped_charge_max"] = max(s["clipped_charge_max"], float(clipped))
        s["clipped_particles_max"] = max(s["clipped_particles_max"], n_clip)
        s["outside_particles_max"] = max(s["outside_particles_max"], n_out)
        try:
            phi = solve_poisson(LoadVector(cfg.mesh, total), A=self.A)
        except Exception as exc:
            raise RuntimeError(f"field solve failed at step {step}: {exc}") from exc
        s["solver_iterations_max"] = max(s["solver_iterations_max"], phi.iterations)
        return phi

    def self_field(self, phi: Optional[NodalField], snapshot: Ensemble, idx: np.ndarray):
        """Closure giving the frozen self-consistent field at new positions of particles ``idx``."""
        cfg = self.cfg
        if cfg.mesh_free:
            def efield(Z):
                out = np.empty((len(idx), 3))
                for row, j in enumerate(idx):
                    out[row] = field_direct(snapshot, self.kernel, Z[row], cfg.rho0,
                                            cfg.domain, exclude=int(j))
                return out
            return efield
        box = cfg.mesh.box

        def efield(Z):
            out = np.zeros((len(idx), 3))
            inside = box.contains(Z)
            if np.any(inside):
                out[inside] = eval_field(phi, Z[inside])
            return out
        return efield

    def push(self, ens: Ensemble, phi: Optional[NodalField]) -> Ensemble:
        cfg = self.cfg
        stepper = STEPPERS[cfg.scheme]
        ext = cfg.field_model.efun

        def work(c):
            lo, hi = c
            idx = np.arange(lo, hi)
            selfE = self.self_field(phi, ens, idx)
            state = ParticleState(ens.X[lo:hi], ens.V[lo:hi])
            new = stepper(state, cfg.clock, cfg.field_model,
                          efun=lambda Z: ext(Z) + selfE(Z))
            return new.z, new.w

        out = self.map(work, _chunks(ens.N))
        if not out:
            return ens
        X = np.concatenate([o[0] for o in out])
        V = np.concatenate([o[1] for o in out])
        if cfg.mesh is not None:
            esc = int(np.sum(~cfg.mesh.box.contains(X)))
            self.stats["escaped_particles_max"] = max(self.stats["escaped_particles_max"], esc)
        return ens.with_state(X, V)


def _diag_row(step: int, tau: float, ens: Ensemble, phi: Optional[NodalField]) -> dict:
    mass, p, kinetic = moments(ens)
    He = field_energy(phi) if phi is not None else math.nan
    H = kinetic + (He if phi is not None else 0.0)
    return {"step": step, "tau": tau, "mass": mass, "p1": float(p[0]), "p2": float(p[1]),
            "p3": float(p[2]), "H": H, "He": He}


def run_pic(cfg: PicConfig, f0: Optional[Callable] = None,
            ensemble: Optional[Ensemble] = None, prune: bool = False) -> PicResult:
    """Run ``cfg.clock.n_steps`` bulk-synchronous steps from ``f0`` (or a given ensemble)."""
    if (f0 is None) == (ensemble is None):
        raise ValueError("pass exactly one of f0 and ensemble")
    if ensemble is None:
        if cfg.grid is None:
            raise ValueError("initialising from f0 needs cfg.grid")
        ensemble = init_grid(cfg.grid, f0, prune=prune)
    runner = _Runner(cfg, ensemble)
    t0 = time.perf_counter()
    rows = []
    ens = ensemble
    n = cfg.clock.n_steps
    try:
        for step in range(n):
            phi = runner.solve(ens, step)
            if step % cfg.cadence == 0:
                rows.append(_diag_row(step, step * cfg.clock.htilde, ens, phi))
            ens = runner.push(ens, phi)
        phi = runner.solve(ens, n)
        rows.append(_diag_row(n, n * cfg.clock.htilde, ens, phi))
    finally:
        runner.close()
    meta = {
        "particles": ensemble.N,
        "steps": n,
        "dropped_tau": cfg.clock.dropped_tau,
        "mode": "mesh-free" if cfg.mesh_free else "fem",
        "pruned": bool(prune),
        **runner.stats,
    }
    if runner.kernel is not None:
        meta["kernel_far_radius"] = runner.kernel.far_radius
    if not cfg.reproducible:
        meta["wall_time"] = time.perf_counter() - t0
        meta["threads"] = cfg.threads
    return PicResult(rows, ens, meta)


def write_diagnostics_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(DIAGNOSTIC_COLUMNS)
        for row in rows:
            out.writerow([row["step"]] + [f"{row[c]:.17g}" for c in DIAGNOSTIC_COLUMNS[1:]])

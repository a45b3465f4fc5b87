"""Time integrators for the scaled characteristic system

    dz/dtau = eps w,    dw/dtau = w x B(eps z) + eps E(z),

with ``tau = t / eps``.  Two structure-aware one-step maps are provided:

* ``scpd`` -- exact rotation with the magnetic field frozen at the start of
  the step, followed by an electric kick evaluated at the new position;
* ``hsbx`` -- the splitting into the three velocity-component flows and the
  electric flow, each solved exactly through line integrals of ``B``.

``reference`` is an adaptive high-order Runge-Kutta solution used as the
oracle, and ``rk2`` an explicit midpoint comparator without any structure.

States may be single particles (``z.shape == (3,)``) or batches
(``z.shape == (N, 3)``).
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .fields import FieldModel, line_integrals_along
from .rotation import apply_rotation, hat

SCHEMES = ("scpd", "hsbx", "reference", "rk2")
# smallest relative tolerance DOP853 accepts (100 machine epsilons)
RTOL_FLOOR = 100 * np.finfo(float).eps


class ReferenceSolverError(RuntimeError):
    def __init__(self, message: str, tau: float):
        super().__init__(f"{message} (tau = {tau!r})")
        self.tau = tau


@dataclass(frozen=True)
class ParticleState:
    z: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        z = np.array(self.z, dtype=float)
        w = np.array(self.w, dtype=float)
        if z.shape != w.shape or z.shape[-1] != 3:
            raise ValueError(f"incompatible state shapes {z.shape} and {w.shape}")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(w))):
            raise ValueError("non-finite particle state")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "w", w)


@dataclass(frozen=True)
class ScaledClock:
    """Step size ``htilde`` in tau, physical end time ``T``; ``tau`` runs to ``T / eps``."""

    epsilon: float
    htilde: float
    T: float
    T0: float = 2.0 * math.pi

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.htilde >= 0:
            raise ValueError("htilde must be nonnegative")
        if not self.T >= 0:
            raise ValueError("T must be nonnegative")

    @property
    def h(self) -> float:
        return self.epsilon * self.htilde

    @property
    def tau_final(self) -> float:
        return self.T / self.epsilon

    @property
    def n_steps(self) -> int:
        if self.htilde == 0:
            return 0
        ratio = self.T / (self.epsilon * self.htilde)
        # guard against ratios like 99.99999999999 that should be 100
        return int(math.floor(ratio * (1 + 1e-12) + 1e-12))

    @property
    def dropped_tau(self) -> float:
        """Part of ``[0, T/eps]`` not covered by whole steps."""
        return max(self.tau_final - self.n_steps * self.htilde, 0.0)

    @classmethod
    def from_periods(cls, epsilon: float, N: int, T: float, b0: float = 1.0) -> "ScaledClock":
        """Clock with ``htilde = T0 / N``, ``T0 = 2 pi / |B(0)|``."""
        T0 = 2.0 * math.pi / b0
        return cls(epsilon, T0 / N, T, T0)


class _Counter:
    """Wraps a vector field and counts evaluated points."""

    def __init__(self, fun):
        self.fun = fun
        self.calls = 0
        self.points = 0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        self.calls += 1
        self.points += int(np.prod(x.shape[:-1])) if x.ndim > 1 else 1
        return self.fun(x)


def gyroperiod(fm: FieldModel) -> float:
    b0 = float(np.linalg.norm(fm.bfun(np.zeros(3))))
    if b0 == 0:
        raise ValueError("B(0) = 0 has no gyroperiod")
    return 2.0 * math.pi / b0


def step_scpd(s: ParticleState, clock: ScaledClock, fm: FieldModel,
              efun=None) -> ParticleState:
    eps, ht = clock.epsilon, clock.htilde
    if ht == 0:
        return s
    efun = fm.efun if efun is None else efun
    B = fm.bfun(eps * s.z)
    Rw, Qw = apply_rotation(B, ht, s.w)
    z_new = s.z + eps * Qw
    w_new = Rw + eps * ht * efun(z_new)
    return ParticleState(z_new, w_new)


def _axis_integrals(fm, j, a, b, frozen, eps):
    """Components (IB_1j, IB_2j, IB_3j) for the axis-j segment, batched or single."""
    if fm.line_integral is not None:
        return [fm.line_integral(i, j, a, b, frozen, eps) for i in range(3)]
    if np.ndim(a) == 0:
        out = line_integrals_along(fm, j, float(a), float(b), frozen, eps)
        return [out[0], out[1], out[2]]
    vals = np.array([line_integrals_along(fm, j, float(aa), float(bb), fr, eps)
                     for aa, bb, fr in zip(a, b, frozen)])
    return [vals[:, 0], vals[:, 1], vals[:, 2]]


def step_hsbx(s: ParticleState, clock: ScaledClock, fm: FieldModel,
              efun=None) -> ParticleState:
    eps, ht = clock.epsilon, clock.htilde
    if ht == 0:
        return s
    efun = fm.efun if efun is None else efun
    z1, z2, z3 = s.z[..., 0], s.z[..., 1], s.z[..., 2]
    w1, w2, w3 = s.w[..., 0], s.w[..., 1], s.w[..., 2]
    k = eps * ht

    # flow of the w1 part: z1 moves, B integrated along axis 1 at (., z2, z3)
    z1n = z1 + k * w1
    _, IB21, IB31 = _axis_integrals(fm, 0, z1, z1n, s.z, eps)

    # flow of the w2 part at (z1n, ., z3)
    z2n = z2 + k * (w2 - IB31)
    frozen = np.stack([z1n, z2, z3], axis=-1)
    IB12, _, IB32 = _axis_integrals(fm, 1, z2, z2n, frozen, eps)

    # flow of the w3 part at (z1n, z2n, .)
    z3n = z3 + k * (w3 + IB21 - IB12)
    frozen = np.stack([z1n, z2n, z3], axis=-1)
    IB13, IB23, _ = _axis_integrals(fm, 2, z3, z3n, frozen, eps)

    z_new = np.stack([z1n, z2n, z3n], axis=-1)
    E = efun(z_new)
    w_new = np.stack([
        w1 + IB32 - IB23 + k * E[..., 0],
        w2 + IB13 - IB31 + k * E[..., 1],
        w3 + IB21 - IB12 + k * E[..., 2],
    ], axis=-1)
    return ParticleState(z_new, w_new)


def _rhs(fm: FieldModel, eps: float, efun):
    def rhs(tau, y):
        z = y[:3]
        w = y[3:]
        B = fm.bfun(eps * z)
        return np.concatenate([eps * w, np.cross(w, B) + eps * efun(z)])
    return rhs


def step_rk2(s: ParticleState, clock: ScaledClock, fm: FieldModel, efun=None) -> ParticleState:
    """Explicit midpoint rule; comparator only."""
    eps, ht = clock.epsilon, clock.htilde
    efun = fm.efun if efun is None else efun

    def f(z, w):
        return eps * w, np.cross(w, fm.bfun(eps * z)) + eps * efun(z)

    dz, dw = f(s.z, s.w)
    dz2, dw2 = f(s.z + 0.5 * ht * dz, s.w + 0.5 * ht * dw)
    return ParticleState(s.z + ht * dz2, s.w + ht * dw2)


STEPPERS = {"scpd": step_scpd, "hsbx": step_hsbx, "rk2": step_rk2}


@dataclass
class Trajectory:
    scheme: str
    tau: np.ndarray
    z: np.ndarray
    w: np.ndarray
    n_steps: int
    dropped_tau: float
    wall_time: float = 0.0
    field_evals: dict = field(default_factory=dict)

    @property
    def final(self) -> ParticleState:
        return ParticleState(self.z[-1], self.w[-1])


def reference_solve(s0: ParticleState, clock: ScaledClock, fm: FieldModel, tol: float = 1e-12,
                    taus: Optional[np.ndarray] = None) -> Trajectory:
    """DOP853 solution of the scaled system, sampled at ``taus`` (default every step)."""
    if not 1e-14 <= tol <= 1e-6:
        raise ValueError("tol must lie in [1e-14, 1e-6]")
    if s0.z.shape != (3,):
        raise ValueError("reference_solve integrates a single particle")
    n = clock.n_steps
    if taus is None:
        taus = np.arange(n + 1) * clock.htilde
    taus = np.asarray(taus, dtype=float)
    bcount, ecount = _Counter(fm.bfun), _Counter(fm.efun)
    counted = FieldModel(bcount, ecount)
    t0 = time.perf_counter()
    y0 = np.concatenate([s0.z, s0.w])
    if taus[-1] == 0.0:
        ys = np.repeat(y0[:, None], taus.size, axis=1)
    else:
        sol = solve_ivp(_rhs(counted, clock.epsilon, ecount), (0.0, taus[-1]), y0,
                        method="DOP853", t_eval=taus, rtol=max(tol, RTOL_FLOOR), atol=tol)
        if sol.status != 0:
            last = float(sol.t[-1]) if sol.t.size else 0.0
            raise ReferenceSolverError(sol.message, last)
        ys = sol.y
    wall = time.perf_counter() - t0
    return Trajectory("reference", taus, ys[:3].T.copy(), ys[3:].T.copy(), n,
                      clock.dropped_tau, wall,
                      {"B_points": bcount.points, "E_points": ecount.points})


def integrate(scheme: str, s0: ParticleState, clock: ScaledClock, fm: FieldModel,
              store: str = "all", tol: float = 1e-12, efun=None) -> Trajectory:
    """Run ``floor(T / (eps htilde))`` steps of ``scheme``.

    ``store`` is ``"all"`` (every step) or ``"last"`` (initial and final state).
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if store not in ("all", "last"):
        raise ValueError("store must be 'all' or 'last'")
    n = clock.n_steps
    if scheme == "reference":
        taus = None if store == "all" else np.array([0.0, n * clock.htilde])
        return reference_solve(s0, clock, fm, tol, taus)

    bcount = _Counter(fm.bfun)
    ecount = _Counter(fm.efun if efun is None else efun)
    counted = FieldModel(bcount, ecount, fm.line_integral, fm.name, fm.params)
    stepper = STEPPERS[scheme]
    shape = s0.z.shape
    if store == "all":
        zs = np.empty((n + 1,) + shape)
        ws = np.empty((n + 1,) + shape)
        zs[0], ws[0] = s0.z, s0.w
    t0 = time.perf_counter()
    s = s0
    for k in range(n):
        s = stepper(s, clock, counted)
        if store == "all":
            zs[k + 1], ws[k + 1] = s.z, s.w
    wall = time.perf_counter() - t0
    if store == "all":
        taus = np.arange(n + 1) * clock.htilde
    else:
        taus = np.array([0.0, n * clock.htilde])
        zs = np.stack([s0.z, s.z])
        ws = np.stack([s0.w, s.w])
    return Trajectory(scheme, taus, zs, ws, n, clock.dropped_tau, wall,
                      {"B_points": bcount.points, "E_points": ecount.points})


def write_trajectory_csv(path, traj: Trajectory) -> None:
    """``n,tau,z1,z2,z3,w1,w2,w3`` with 17 significant digits; single particle only."""
    if traj.z.ndim != 2:
        raise ValueError("trajectory dump expects a single-particle trajectory")
    stride = max(traj.n_steps // max(len(traj.tau) - 1, 1), 1)
    with open(path, "w") as fh:
        fh.write("n,tau,z1,z2,z3,w1,w2,w3\n")
        for k, (t, z, w) in enumerate(zip(traj.tau, traj.z, traj.w)):
            idx = k * stride if k < len(traj.tau) - 1 else traj.n_steps
            vals = ",".join(f"{v:.17g}" for v in (t, *z, *w))
            fh.write(f"{idx},{vals}\n")


def poisson_tensor(fm: FieldModel, z, eps: float) -> np.ndarray:
    """Six-by-six structure matrix of the scaled system at position ``z``."""
    P = np.zeros((6, 6))
    P[:3, 3:] = eps * np.eye(3)
    P[3:, :3] = -eps * np.eye(3)
    B = fm.bfun(eps * np.asarray(z, dtype=float))
    P[3:, 3:] = hat(B)
    return P


def poisson_residual(scheme: str, s: ParticleState, clock: ScaledClock, fm: FieldModel,
                     delta: float = 1e-6) -> float:
    """``max |J P(xi) J^T - P(Phi(xi))|`` with a central-difference Jacobian of one step."""
    stepper = STEPPERS[scheme]
    xi = np.concatenate([s.z, s.w])

    def phi(y):
        out = stepper(ParticleState(y[:3], y[3:]), clock, fm)
        return np.concatenate([out.z, out.w])

    J = np.empty((6, 6))
    for k in range(6):
        e = np.zeros(6)
        e[k] = delta
        J[:, k] = (phi(xi + e) - phi(xi - e)) / (2.0 * delta)
    out = phi(xi)
    eps = clock.epsilon
    R = J @ poisson_tensor(fm, xi[:3], eps) @ J.T - poisson_tensor(fm, out[:3], eps)
    return float(np.max(np.abs(R)))

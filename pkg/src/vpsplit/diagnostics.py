"""Error norms, convergence orders and energy monitoring."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .ensemble import Ensemble, moments
from .fieldsolve import NodalField, field_energy


@dataclass
class ErrorRecord:
    label: str
    step_tilde: float
    eps: float
    error: float
    e_z: float = math.nan
    e_w: float = math.nan
    e_w_par: float = math.nan
    order: Optional[float] = None
    extra: dict = field(default_factory=dict)

    @property
    def step_t(self) -> float:
        """Physical step ``h = eps * step_tilde``."""
        return self.eps * self.step_tilde


def max_error(a: Ensemble, b: Ensemble) -> float:
    """``max_j |X^a_j - X^b_j| + |V^a_j - V^b_j|``."""
    if a.N != b.N:
        raise ValueError(f"particle counts differ: {a.N} vs {b.N}")
    if a.N == 0:
        return 0.0
    ex = np.linalg.norm(a.X - b.X, axis=1)
    ev = np.linalg.norm(a.V - b.V, axis=1)
    return float(np.max(ex + ev))


def parallel_error(w_num, w_ref, B_at_ref) -> np.ndarray:
    """Projection of the velocity error onto the unit field direction."""
    B = np.asarray(B_at_ref, dtype=float)
    b = float(np.linalg.norm(B))
    if b == 0.0:
        raise ValueError("parallel component undefined for a zero magnetic field")
    Bbar = B / b
    e = np.asarray(w_num, dtype=float) - np.asarray(w_ref, dtype=float)
    return float(Bbar @ e) * Bbar


def discrete_hamiltonian(ens: Ensemble, phi: Optional[NodalField]) -> float:
    """Kinetic energy plus ``1/2 int |grad phi_h|^2``."""
    _, _, kinetic = moments(ens)
    return kinetic + (field_energy(phi) if phi is not None else 0.0)


def _is_halving(steps: Sequence[float], rtol: float = 1e-9) -> bool:
    return all(abs(b - 0.5 * a) <= rtol * a for a, b in zip(steps[:-1], steps[1:]))


def order_table(records: Sequence[ErrorRecord]) -> list[ErrorRecord]:
    """Copies of ``records`` with ``order = log2(e_prev / e)`` filled in.

    Steps must halve from row to row.  Equal errors give order 0.
    """
    steps = [r.step_tilde for r in records]
    if not _is_halving(steps):
        raise ValueError(f"steps do not form a halving sequence: {steps}")
    out = []
    for i, rec in enumerate(records):
        if i == 0:
            order = None
        else:
            prev = records[i - 1].error
            order = 0.0 if prev == rec.error else math.log2(prev / rec.error)
        out.append(replace(rec, order=order))
    return out


def orders_from_errors(errors: Sequence[float]) -> list[float]:
    return [math.log2(a / b) for a, b in zip(errors[:-1], errors[1:])]


def fitted_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])


def drift_statistics(t, err, windows: int = 10, resamples: int = 200, seed: int = 0) -> dict:
    """Least-squares slope of ``err`` vs ``t`` with a block-bootstrap spread.

    The series is cut into ``windows`` contiguous blocks; each resample draws
    blocks with replacement (keeping their time stamps) and refits the slope.
    """
    t = np.asarray(t, dtype=float)
    err = np.asarray(err, dtype=float)
    slope = float(np.polyfit(t, err, 1)[0])
    blocks = np.array_split(np.arange(len(t)), windows)
    rng = np.random.default_rng(seed)
    boot = []
    for _ in range(resamples):
        pick = np.concatenate([blocks[i] for i in rng.integers(0, windows, windows)])
        if np.ptp(t[pick]) == 0:
            continue
        boot.append(np.polyfit(t[pick], err[pick], 1)[0])
    boot = np.asarray(boot)
    return {
        "slope": slope,
        "slope_std": float(boot.std(ddof=1)) if boot.size > 1 else math.nan,
        "terminal": float(abs(err[-1])),
        "max_abs": float(np.max(np.abs(err))),
    }


def write_order_csv(path, records: Sequence[ErrorRecord]) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["step_tilde", "step_t", "eps", "error", "order"])
        for r in records:
            out.writerow([f"{r.step_tilde:.17g}", f"{r.step_t:.17g}", f"{r.eps:.17g}",
                          f"{r.error:.17g}", "" if r.order is None else f"{r.order:.17g}"])


def gnuplot_script(csv_name: str, title: str, xcol: int = 1, ycol: int = 4) -> str:
    """Log-log plot of an order table written by :func:`write_order_csv`."""
    return "\n".join([
        "set datafile separator ','",
        "set logscale xy",
        "set key top left",
        "set xlabel 'step'",
        "set ylabel 'error'",
        f"set title '{title}'",
        f"plot '{csv_name}' every ::1 using {xcol}:{ycol} with linespoints title 'error'",
        "",
    ])

import math

import numpy as np
import pytest

from vpsplit.diagnostics import (ErrorRecord, discrete_hamiltonian, drift_statistics,
                                 fitted_slope, gnuplot_script, max_error, order_table,
                                 orders_from_errors, parallel_error, write_order_csv)
from vpsplit.ensemble import Box3, Ensemble
from vpsplit.fieldsolve import MeshSpec, NodalField
from vpsplit.fields import strong_field
from vpsplit.pusher import ParticleState, ScaledClock, integrate

X0 = [0.3, 0.2, -1.4]
V0 = [-0.7, 0.08, 0.2]


def _ens(X, V, a=None):
    X = np.atleast_2d(X)
    return Ensemble(X, np.atleast_2d(V), np.ones(len(X)) if a is None else a)


def test_max_error_examples():
    a = _ens([[0.1, 0.2, 0.3]], [[1, 0, 0]])
    assert max_error(a, a) == 0.0
    b = _ens([[0.4, 0.2, 0.3]], [[1, 0, 0]])
    assert max_error(a, b) == pytest.approx(0.3, abs=1e-15)
    assert max_error(Ensemble.empty(), Ensemble.empty()) == 0.0
    with pytest.raises(ValueError):
        max_error(a, Ensemble.empty())


def test_max_error_vs_loop():
    rng = np.random.default_rng(0)
    a = _ens(rng.normal(size=(9, 3)), rng.normal(size=(9, 3)))
    b = _ens(rng.normal(size=(9, 3)), rng.normal(size=(9, 3)))
    want = max(math.dist(a.X[j], b.X[j]) + math.dist(a.V[j], b.V[j]) for j in range(9))
    assert max_error(a, b) == pytest.approx(want, rel=1e-15)


def test_parallel_error_examples():
    assert np.array_equal(parallel_error([1, 2, 3], [0, 0, 0], [0, 0, 1]), [0, 0, 3])
    assert np.array_equal(parallel_error([1, 2, 0], [0, 0, 0], [0, 0, 5]), [0, 0, 0])
    with pytest.raises(ValueError):
        parallel_error([1, 0, 0], [0, 0, 0], [0, 0, 0])


def test_parallel_error_is_a_contracting_projection():
    rng = np.random.default_rng(1)
    for _ in range(50):
        e, B = rng.normal(size=(2, 3))
        p = parallel_error(e, np.zeros(3), B)
        u = B / np.linalg.norm(B)
        assert np.max(np.abs(p - np.outer(u, u) @ e)) < 1e-15
        assert np.max(np.abs(parallel_error(p, np.zeros(3), B) - p)) < 1e-15
        assert np.linalg.norm(p) <= np.linalg.norm(e) + 1e-15


def test_discrete_hamiltonian():
    one = _ens([[0, 0, 0]], [[1, 0, 0]], np.array([2.0]))
    assert discrete_hamiltonian(one, None) == 1.0
    assert discrete_hamiltonian(Ensemble.empty(), None) == 0.0
    mesh = MeshSpec(Box3.cube(0.0, 1.0), (2, 2, 2))
    phi = NodalField.interpolate(mesh, lambda x: 3.0 * x[..., 1])
    assert discrete_hamiltonian(Ensemble.empty(), phi) == pytest.approx(4.5, rel=1e-12)


def test_order_table_examples():
    recs = order_table([ErrorRecord("t1", 0.5, 0.01, 0.0072), ErrorRecord("t1", 0.25, 0.01, 0.0018)])
    assert recs[0].order is None and recs[1].order == pytest.approx(2.0)
    recs = order_table([ErrorRecord("t2", 1 / 8, 0.001, 4.9406e-4),
                        ErrorRecord("t2", 1 / 16, 0.001, 1.3036e-4)])
    assert recs[1].order == pytest.approx(1.9222, abs=5e-5)
    recs = order_table([ErrorRecord("c", 1.0, 1.0, 0.3), ErrorRecord("c", 0.5, 1.0, 0.3)])
    assert recs[1].order == 0.0
    assert recs[1].step_t == 0.5
    with pytest.raises(ValueError):
        order_table([ErrorRecord("x", 1.0, 1.0, 0.3), ErrorRecord("x", 0.3, 1.0, 0.1)])


def test_orders_and_slope_helpers():
    assert orders_from_errors([8.0, 2.0, 1.0]) == [2.0, 1.0]
    h = np.array([0.1, 0.05, 0.025])
    assert fitted_slope(h, 3 * h**2) == pytest.approx(2.0)


def test_drift_statistics_detects_trend():
    t = np.linspace(0, 100, 1001)
    noise = 1e-3 * np.sin(7.3 * t)
    flat = drift_statistics(t, noise)
    trend = drift_statistics(t, noise + 1e-4 * t)
    assert abs(flat["slope"]) < 3 * flat["slope_std"]
    assert trend["slope"] > 10 * trend["slope_std"]
    assert trend["terminal"] == pytest.approx(abs(noise[-1] + 1e-2))
    assert drift_statistics(t, noise) == flat


def test_order_csv_and_plot(tmp_path):
    recs = order_table([ErrorRecord("a", 0.5, 0.01, 0.0072), ErrorRecord("a", 0.25, 0.01, 0.0018)])
    path = tmp_path / "orders.csv"
    write_order_csv(path, recs)
    lines = path.read_text().splitlines()
    assert lines[0] == "step_tilde,step_t,eps,error,order"
    assert lines[1].endswith(",") and float(lines[2].split(",")[4]) == pytest.approx(2.0)
    assert float(lines[1].split(",")[1]) == 0.005
    script = gnuplot_script("orders.csv", "table")
    assert "set logscale xy" in script and "'orders.csv'" in script


@pytest.mark.parametrize("htilde", [0.5, 0.25])
def test_energy_error_bounded_for_structured_schemes(htilde):
    """Energy error vs tau: no significant linear trend for HSBX/SCPD, RK2 worse.

    The trend test asks the least-squares slope to lie within three bootstrap
    standard deviations of zero (block bootstrap over ten windows).
    """
    eps = 0.01
    fm = strong_field(eps)
    s0 = ParticleState(X0, V0)
    clock = ScaledClock(eps, htilde, 1.0)
    terminal = {}
    for scheme in ("hsbx", "scpd", "rk2"):
        tr = integrate(scheme, s0, clock, fm)
        H = 0.5 * np.sum(tr.w**2, axis=1) + 0.5 * np.sum(tr.z**2, axis=1)
        st = drift_statistics(tr.tau, H - H[0])
        terminal[scheme] = st["terminal"]
        if scheme != "rk2":
            assert abs(st["slope"]) < 3 * st["slope_std"], (scheme, st)
    assert terminal["rk2"] > terminal["hsbx"] and terminal["rk2"] > terminal["scpd"]

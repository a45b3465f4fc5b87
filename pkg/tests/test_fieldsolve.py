import math

import numpy as np
import pytest

from vpsplit.ensemble import Box3, Ensemble
from vpsplit.experiments import _manufactured
from vpsplit.fieldsolve import (LoadVector, MeshSpec, NodalField, SolverError, density_at_nodes,
                                deposit, eval_field, eval_potential, field_energy, gradient_error,
                                l2_error, load_from_function, mass_matrix, pcg, solve_poisson,
                                stiffness_matrix, write_nodal_csv)
from vpsplit.mollify import ShapeSpec, tent

BOX = Box3.cube(-1.0, 1.0)


def test_mesh_spec():
    m = MeshSpec(Box3((0, 0, 0), (1, 2, 4)), (2, 4, 8))
    assert np.allclose(m.spacing, 0.5)
    assert m.hx == pytest.approx(math.sqrt(0.75))
    assert m.node_shape == (3, 5, 9) and m.n_nodes == 135 and m.n_interior == 21
    with pytest.raises(ValueError):
        MeshSpec(BOX, (4, 4, 4), k=2)
    with pytest.raises(ValueError):
        MeshSpec(BOX, (4, 0, 4))


def test_empty_deposit_is_zero():
    load = deposit(Ensemble.empty(), MeshSpec(BOX, (4, 4, 4)), ShapeSpec("tent", 0.3))
    assert np.array_equal(load.values, np.zeros((5, 5, 5)))


def test_background_only_deposit():
    mesh = MeshSpec(BOX, (4, 4, 4))
    load = deposit(Ensemble.empty(), mesh, ShapeSpec("tent", 0.3), rho0=0.5)
    assert np.all(load.values < 0)
    assert load.total == pytest.approx(-0.5 * BOX.volume, rel=1e-14)


@pytest.mark.parametrize("method", ["separable", "quadrature"])
def test_centered_particle_deposits_its_weight(method):
    mesh = MeshSpec(BOX, (8, 8, 8))
    one = Ensemble([[0.125, -0.375, 0.625]], [[0, 0, 0]], [0.7])
    load = deposit(one, mesh, ShapeSpec("tent", 0.2), method=method)
    assert load.total == pytest.approx(0.7, rel=1e-13)
    assert load.stats["clipped_particles"] == 0 and abs(load.stats["clipped_charge"]) < 1e-14


def test_deposit_paths_agree_for_tent():
    mesh = MeshSpec(BOX, (6, 6, 6))
    rng = np.random.default_rng(3)
    X = rng.uniform(-1.2, 1.2, (40, 3))
    ens = Ensemble(X, np.zeros_like(X), rng.uniform(0.5, 1.0, 40))
    a = deposit(ens, mesh, ShapeSpec("tent", 0.27), method="separable")
    b = deposit(ens, mesh, ShapeSpec("tent", 0.27), method="quadrature")
    c = deposit(ens, mesh, ShapeSpec("custom", 0.27, func=tent))
    assert np.max(np.abs(a.values - b.values)) < 1e-13
    assert np.max(np.abs(a.values - c.values)) < 1e-13
    assert a.stats["outside_particles"] == b.stats["outside_particles"]
    assert a.stats["clipped_charge"] + a.stats["deposited_charge"] == pytest.approx(ens.alpha.sum())


def test_deposit_method_validation():
    mesh = MeshSpec(BOX, (2, 2, 2))
    custom = ShapeSpec("custom", 0.3, func=tent)
    with pytest.raises(ValueError):
        deposit(Ensemble.empty(), mesh, custom, method="separable")
    with pytest.raises(ValueError):
        deposit(Ensemble.empty(), mesh, ShapeSpec(), method="spline")


def test_load_from_constant_function():
    mesh = MeshSpec(BOX, (3, 4, 5))
    load = load_from_function(mesh, lambda x: np.ones(x.shape[:-1]))
    assert load.total == pytest.approx(BOX.volume, rel=1e-14)


def test_zero_rhs_gives_zero_field():
    mesh = MeshSpec(BOX, (4, 4, 4))
    phi = solve_poisson(LoadVector(mesh, np.zeros(mesh.node_shape)))
    assert np.array_equal(phi.values, np.zeros(mesh.node_shape)) and phi.iterations == 0
    assert np.array_equal(eval_field(phi, [0.1, 0.2, 0.3]), np.zeros(3))


def test_solution_is_linear_in_rhs():
    rho, _, _ = _manufactured()
    mesh = MeshSpec.unit_cube(8)
    load = load_from_function(mesh, rho)
    phi = solve_poisson(load, rtol=1e-13)
    phi3 = solve_poisson(load.scaled(3.0), rtol=1e-13)
    assert np.max(np.abs(phi3.values - 3.0 * phi.values)) < 1e-12 * np.max(np.abs(phi3.values))


def test_manufactured_solution_orders():
    rho, exact, grad = _manufactured()
    l2, h1 = [], []
    for n in (4, 8, 16):
        phi = solve_poisson(load_from_function(MeshSpec.unit_cube(n), rho))
        l2.append(l2_error(phi, exact))
        h1.append(gradient_error(phi, grad))
    for a, b in zip(l2[:-1], l2[1:]):
        assert 1.8 <= math.log2(a / b) <= 2.2
    for a, b in zip(h1[:-1], h1[1:]):
        assert 0.8 <= math.log2(a / b) <= 1.2


def test_linear_potential_field_and_energy():
    mesh = MeshSpec(Box3((0, 0, 0), (1, 2, 0.5)), (3, 5, 2))
    a = np.array([0.4, -1.2, 2.0])
    phi = NodalField.interpolate(mesh, lambda x: x @ a + 0.3)
    pts = np.random.default_rng(0).uniform([0, 0, 0], [1, 2, 0.5], (20, 3))
    assert np.max(np.abs(eval_field(phi, pts) + a)) < 1e-13
    assert np.allclose(eval_potential(phi, pts), pts @ a + 0.3, atol=1e-14)
    assert field_energy(phi) == pytest.approx(0.5 * (a @ a) * 1.0, rel=1e-12)


def test_stiffness_symmetric():
    A = stiffness_matrix(MeshSpec(Box3((0, 0, 0), (1, 2, 3)), (4, 3, 5)))
    rng = np.random.default_rng(1)
    u, v = rng.normal(size=(2, A.shape[0]))
    assert abs(u @ (A @ v) - v @ (A @ u)) < 1e-12 * abs(u @ (A @ v))


def test_stiffness_and_mass_reproduce_known_integrals():
    mesh = MeshSpec(BOX, (4, 4, 4))
    A = stiffness_matrix(mesh, interior=False)
    M = mass_matrix(mesh, interior=False)
    ones = np.ones(mesh.n_nodes)
    x = mesh.nodes().reshape(-1, 3)[:, 0]
    assert np.max(np.abs(A @ ones)) < 1e-13
    assert ones @ (M @ ones) == pytest.approx(BOX.volume, rel=1e-14)
    assert x @ (A @ x) == pytest.approx(BOX.volume, rel=1e-13)  # int |grad x|^2


def test_galerkin_orthogonality():
    rho, _, _ = _manufactured()
    mesh = MeshSpec.unit_cube(8)
    load = load_from_function(mesh, rho)
    phi = solve_poisson(load)
    A = stiffness_matrix(mesh)
    rng = np.random.default_rng(2)
    scale = np.linalg.norm(load.interior)
    for _ in range(20):
        v = rng.normal(size=mesh.n_interior)
        v /= np.linalg.norm(v)
        assert abs(v @ (A @ phi.interior - load.interior)) < 1e-9 * scale


def test_discrete_maximum_principle():
    mesh = MeshSpec(BOX, (6, 6, 6))
    rng = np.random.default_rng(4)
    vals = np.zeros(mesh.node_shape)
    vals[1:-1, 1:-1, 1:-1] = rng.uniform(0.0, 1.0, (5, 5, 5)) * (rng.random((5, 5, 5)) < 0.3)
    phi = solve_poisson(LoadVector(mesh, vals), rtol=1e-13)
    assert np.min(phi.values) >= -1e-14


def test_pcg_reports_cap():
    mesh = MeshSpec(BOX, (8, 8, 8))
    A = stiffness_matrix(mesh)
    with pytest.raises(SolverError) as info:
        pcg(A, np.ones(A.shape[0]), maxiter=2)
    assert info.value.iterations == 2 and info.value.residual > 1e-10


def test_evaluation_outside_box_is_rejected():
    phi = NodalField.zeros(MeshSpec(BOX, (2, 2, 2)))
    with pytest.raises(ValueError):
        eval_field(phi, [1.5, 0.0, 0.0])


def test_solve_rejects_foreign_mesh():
    load = LoadVector(MeshSpec(BOX, (2, 2, 2)), np.zeros((3, 3, 3)))
    with pytest.raises(ValueError):
        solve_poisson(load, MeshSpec(BOX, (4, 4, 4)))


def test_density_at_nodes_and_dump(tmp_path):
    mesh = MeshSpec(BOX, (2, 2, 2))
    one = Ensemble([[0.0, 0.0, 0.0]], [[0, 0, 0]], [2.0])
    rho = density_at_nodes(one, mesh, ShapeSpec("tent", 0.5), rho0=0.25)
    assert rho.values[1, 1, 1] == pytest.approx(2.0 * 8.0 - 0.25)
    assert rho.values[0, 0, 0] == -0.25
    path = tmp_path / "rho.csv"
    write_nodal_csv(path, rho, column="rho")
    lines = path.read_text().splitlines()
    assert lines[0] == "i,j,k,x1,x2,x3,rho" and len(lines) == 28
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.array_equal(data[:, 6], rho.values.ravel())

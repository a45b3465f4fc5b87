import math

import numpy as np
import pytest

from oracles import expm_series, gauss_integral
from vpsplit.rotation import (SMALL_ANGLE, apply_rotation, hat, rot_exp, rot_exp_integral,
                              rotation_pair)


def test_hat_zero_field():
    assert np.array_equal(hat([0.0, 0.0, 0.0]), np.zeros((3, 3)))


def test_hat_unit_z():
    assert np.array_equal(hat([0, 0, 1]), [[0, 1, 0], [-1, 0, 0], [0, 0, 0]])


def test_hat_acts_as_cross_product():
    assert np.allclose(hat([1, 2, 3]) @ [1, 0, 0], [0, -3, 2], atol=0)
    rng = np.random.default_rng(0)
    B, y = rng.normal(size=(2, 50, 3))
    assert np.allclose(np.einsum("nij,nj->ni", hat(B), y), np.cross(y, B), atol=1e-15)


def test_hat_is_skew():
    H = hat([0.3, -1.2, 2.5])
    assert np.array_equal(H, -H.T)


def test_rot_exp_identity_at_zero():
    assert np.array_equal(rot_exp([1.0, 2.0, 3.0], 0.0), np.eye(3))


def test_rot_exp_planar_gyration():
    h = 0.37
    out = rot_exp([0, 0, 1], h) @ [1, 0, 0]
    assert np.allclose(out, [math.cos(h), -math.sin(h), 0.0], atol=1e-15)


def test_rot_exp_matches_series():
    A = 0.3 * hat([1.0, 1.0, 1.0])
    assert np.max(np.abs(rot_exp([1, 1, 1], 0.3) - expm_series(A))) < 1e-12


@pytest.mark.parametrize("B", [[0.2, -3.0, 1.1], [10.0, 0.0, 0.0], [1e-3, 2e-3, -1e-3]])
def test_rot_exp_orthogonal_unit_determinant(B):
    R = rot_exp(B, 1.7)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-14)
    assert abs(np.linalg.det(R) - 1.0) < 1e-14


def test_rot_exp_integral_zero_length():
    assert np.array_equal(rot_exp_integral([1.0, 2.0, 3.0], 0.0), np.zeros((3, 3)))


def test_rot_exp_integral_zero_field():
    assert np.allclose(rot_exp_integral([0, 0, 0], 0.25), 0.25 * np.eye(3), atol=0)


def test_rot_exp_integral_quarter_turn():
    want = np.array([[1, 1, 0], [-1, 1, 0], [0, 0, math.pi / 2]])
    got = rot_exp_integral([0, 0, 1], math.pi / 2)
    assert np.allclose(got, want, atol=1e-15)
    oracle = gauss_integral(lambda s: rot_exp([0, 0, 1], s), 0.0, math.pi / 2)
    assert np.max(np.abs(got - oracle)) < 1e-13


def test_rot_exp_integral_generic_field_vs_quadrature():
    B = [0.4, -1.3, 0.9]
    got = rot_exp_integral(B, 2.2)
    oracle = gauss_integral(lambda s: rot_exp(B, s), 0.0, 2.2)
    assert np.max(np.abs(got - oracle)) < 1e-13


def test_small_angle_branch_agrees_on_both_sides():
    B = np.array([0.3, 0.4, 1.2])
    b = np.linalg.norm(B)
    for s in (0.999 * SMALL_ANGLE / b, 1.001 * SMALL_ANGLE / b):
        want_R = expm_series(s * hat(B), squarings=0)
        want_Q = gauss_integral(lambda t: expm_series(t * hat(B), squarings=0), 0.0, s, n=10, pieces=1)
        assert np.max(np.abs(rot_exp(B, s) - want_R)) < 1e-15
        assert np.max(np.abs(rot_exp_integral(B, s) - want_Q)) < 1e-18


def test_vanishing_field_in_batch():
    B = np.array([[0.0, 0.0, 0.0], [1e-12, 0.0, 0.0], [0.0, 2.0, 0.0]])
    R, Q = rotation_pair(B, 0.5)
    assert np.all(np.isfinite(R)) and np.all(np.isfinite(Q))
    assert np.allclose(R[0], np.eye(3), atol=0)
    assert np.allclose(Q[0], 0.5 * np.eye(3), atol=0)
    assert np.allclose(R[2], expm_series(0.5 * hat(B[2])), atol=1e-14)


def test_rotation_pair_matches_separate_calls():
    B = np.random.default_rng(3).normal(size=(7, 3))
    R, Q = rotation_pair(B, 0.8)
    assert np.array_equal(R, rot_exp(B, 0.8))
    assert np.array_equal(Q, rot_exp_integral(B, 0.8))


def test_hat_cube_and_projection_identities():
    rng = np.random.default_rng(11)
    for _ in range(200):
        B, y = rng.normal(size=(2, 3)) * rng.uniform(0.1, 10.0)
        H = hat(B)
        b2 = B @ B
        lhs = H @ H @ H
        assert np.max(np.abs(lhs + b2 * H)) <= 1e-12 * max(1.0, np.max(np.abs(lhs)))
        left = (B @ y) * B
        right = H @ H @ y + b2 * y
        assert np.max(np.abs(left - right)) <= 1e-12 * max(1.0, np.max(np.abs(left)))


def test_apply_rotation_matches_matrices():
    rng = np.random.default_rng(8)
    B, w = rng.normal(size=(2, 6, 3))
    s = 0.7
    Rw, Qw = apply_rotation(B, s, w)
    R, Q = rotation_pair(B, s)
    assert np.allclose(Rw, np.einsum("nij,nj->ni", R, w), atol=1e-14)
    assert np.allclose(Qw, np.einsum("nij,nj->ni", Q, w), atol=1e-14)
    Rw0, Qw0 = apply_rotation([0.0, 0.0, 0.0], s, w[0])
    assert np.array_equal(Rw0, w[0]) and np.allclose(Qw0, s * w[0], atol=0)

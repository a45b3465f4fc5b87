import numpy as np
import pytest
import sympy as sp

from vpsplit.fields import (FieldModel, QuadratureError, adaptive_gauss, line_integral_B,
                            line_integrals_along, linear_restoring, strong_field, uniform_field)


def _quadrature_only(fm):
    return FieldModel(fm.bfun, fm.efun)


def test_degenerate_segment_is_zero():
    fm = _quadrature_only(strong_field(0.01))
    assert line_integral_B(fm, 0, 0, 0.7, 0.7, [0.7, 0.1, -0.3], 0.01) == 0.0


def test_constant_component():
    c = 2.5
    fm = FieldModel(lambda y: np.broadcast_to([0.0, c, 0.0], np.shape(y)).copy())
    got = line_integral_B(fm, 1, 2, -0.4, 1.1, [0.2, 0.3, 0.0], 0.05)
    assert got == pytest.approx(c * 1.5 / 0.05, rel=1e-14)


@pytest.mark.parametrize("reading", ["physical", "profile"])
def test_closed_form_matches_quadrature(reading):
    eps = 0.01
    fm = strong_field(eps, reading)
    generic = _quadrature_only(fm)
    rng = np.random.default_rng(4)
    for _ in range(20):
        frozen = rng.uniform(-2, 2, 3)
        j = int(rng.integers(3))
        a, b = frozen[j], frozen[j] + rng.uniform(-1, 1)
        quad = line_integrals_along(generic, j, a, b, frozen, eps)
        for i in range(3):
            closed = fm.line_integral(i, j, a, b, frozen, eps)
            assert abs(closed - quad[i]) <= 1e-12 * max(abs(closed), 1.0)


def test_axis_one_segment_against_symbolic_antiderivative():
    eps_v = 0.01
    z1, z2, z3, a, b, e = sp.symbols("z1 z2 z3 a b e")
    # B(e z) with the physical reading: e3 + e P(z)
    B1 = e * z1 * (z3 - z2)
    expr = sp.integrate(B1, (z1, a, b)) / e
    f = sp.lambdify((a, b, z2, z3, e), expr)
    fm = strong_field(eps_v)
    rng = np.random.default_rng(9)
    for _ in range(10):
        fz = rng.uniform(-1.5, 1.5, 3)
        lo, hi = fz[0], fz[0] + rng.uniform(-1, 1)
        want = f(lo, hi, fz[1], fz[2], eps_v)
        got_closed = fm.line_integral(0, 0, lo, hi, fz, eps_v)
        got_quad = line_integral_B(_quadrature_only(fm), 0, 0, lo, hi, fz, eps_v)
        assert abs(got_closed - want) <= 1e-12 * max(abs(want), 1e-3)
        assert abs(got_quad - want) <= 1e-12 * max(abs(want), 1e-3)


def test_field_readings_differ_by_eps_power():
    eps = 0.1
    y = np.array([0.3, -0.2, 0.5])
    P = np.array([y[0] * (y[2] - y[1]), y[1] * (y[0] - y[2]), y[2] * (y[1] - y[0])])
    phys = strong_field(eps, "physical").B_scaled(y, eps)
    prof = strong_field(eps, "profile").B_scaled(y, eps)
    assert np.allclose(phys, [0, 0, 1] + eps * P, atol=1e-15)
    assert np.allclose(prof, [0, 0, 1] + eps**2 * P, atol=1e-15)


def test_strong_field_rejects_bad_inputs():
    with pytest.raises(ValueError):
        strong_field(0.1, "sideways")
    fm = strong_field(0.1)
    with pytest.raises(ValueError):
        fm.line_integral(0, 0, 0.0, 1.0, np.zeros(3), 0.2)


def test_uniform_field():
    fm = uniform_field([1.0, -2.0, 3.0])
    assert fm.line_integral(1, 0, 0.0, 2.0, np.zeros(3), 0.5) == pytest.approx(-8.0)
    assert fm.lipschitz_estimate([-1] * 3, [1] * 3) == 0.0
    assert np.array_equal(fm.efun(np.ones(3)), np.zeros(3))


def test_linear_restoring_and_with_efun():
    fm = uniform_field().with_efun(linear_restoring)
    assert np.array_equal(fm.efun(np.array([1.0, 2.0, 3.0])), [-1.0, -2.0, -3.0])


def test_lipschitz_estimate_scales_like_inverse_eps():
    # the physical reading has profile e3 + P(y) / eps
    L1 = strong_field(0.1).lipschitz_estimate([-1] * 3, [1] * 3)
    L2 = strong_field(0.05).lipschitz_estimate([-1] * 3, [1] * 3)
    assert L1 > 0.0
    assert L2 == pytest.approx(2.0 * L1, rel=1e-6)


def test_adaptive_gauss_reports_nonconvergence():
    with pytest.raises(QuadratureError):
        adaptive_gauss(lambda t: np.abs(t - 0.3) ** -0.9, 0.0, 1.0, max_depth=4)


def test_adaptive_gauss_smooth_integrand():
    val, evals = adaptive_gauss(lambda t: np.exp(t)[:, None] * [1.0, 2.0], 0.0, 1.0)
    assert np.allclose(val, [np.e - 1, 2 * (np.e - 1)], rtol=1e-14)
    assert evals >= 21

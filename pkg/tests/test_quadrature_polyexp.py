"""Quadrature and polynomial-times-Gaussian engine oracles.

Everything downstream leans on these two modules, so the oracles here are
independent closed forms (Gaussian moments, hand-expanded polynomials,
finite differences), not calls back into the code under test.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transportlab import quadrature
from transportlab.measures import TruncationBox
from transportlab.polyexp import (PolyExp, gaussian_poly_expectations,
                                  holomorphic_log_derivs,
                                  holomorphic_to_real_poly,
                                  modulus_squared_poly, poly_deriv,
                                  poly_eval)


def test_gauss_legendre_exact_for_polynomials():
    # order-16 panels integrate degree-5 exactly
    nodes, w = quadrature.gauss_legendre_1d(-1.0, 3.0, order=16, panels=1)
    for k in range(6):
        got = float(np.dot(w, nodes ** k))
        want = (3.0 ** (k + 1) - (-1.0) ** (k + 1)) / (k + 1)
        assert abs(got - want) < 1e-12 * max(1.0, abs(want))


def test_box_rule_total_weight_is_volume():
    box = TruncationBox.cube(2, 1.5)
    _, w = quadrature.box_gauss_legendre(box, order=8, panels=2)
    assert abs(w.sum() - 9.0) < 1e-12


def test_gauss_hermite_standard_moments():
    pts, w = quadrature.gauss_hermite(2, order=24)
    assert abs(w.sum() - 1.0) < 1e-12
    assert abs(float(w @ (pts[:, 0] ** 2)) - 1.0) < 1e-12
    assert abs(float(w @ (pts[:, 0] ** 4)) - 3.0) < 1e-11
    assert abs(float(w @ (pts[:, 0] * pts[:, 1]))) < 1e-13


def test_cumulative_integral_matches_gaussian_cdf():
    from scipy.stats import norm
    ci = quadrature.CumulativeIntegral(
        lambda r: norm.pdf(r), 0.0, 8.0, panels=1024)
    # value() accumulates from the left endpoint
    for r in (0.3, 1.0, 2.5):
        assert abs(ci.value(np.array([r]))[0]
                   - (norm.cdf(r) - 0.5)) < 1e-10


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=0.02, max_value=0.97))
def test_cumulative_integral_inverse_roundtrip(q):
    ci = quadrature.CumulativeIntegral(
        lambda r: np.exp(-r), 0.0, 20.0, panels=512)
    target = q * ci.total
    x = ci.inverse(np.array([target]))[0]
    assert abs(ci.value(np.array([x]))[0] - target) < 1e-9 * ci.total


def test_monte_carlo_box_unbiased_smoke():
    box = TruncationBox.cube(1, 1.0)
    rng = np.random.default_rng(0)
    val, half = quadrature.monte_carlo_box(
        lambda x: x[:, 0] ** 2, box, 40000, rng)
    assert abs(val - 2.0 / 3.0) < 4 * half


# ---------------------------------------------------------------------------
# polynomial dictionaries


def test_poly_eval_and_deriv():
    poly = {(2, 0): 1.0, (1, 1): -3.0, (0, 0): 2.0}
    x = np.array([[1.0, 2.0], [0.5, -1.0]])
    got = poly_eval(poly, x)
    want = x[:, 0] ** 2 - 3 * x[:, 0] * x[:, 1] + 2.0
    assert np.allclose(got, want, atol=1e-14)
    dx = poly_deriv(poly, 0)
    assert np.allclose(poly_eval(dx, x), 2 * x[:, 0] - 3 * x[:, 1])


def test_gaussian_poly_expectations_against_moments():
    # E[x^2] = sigma^2 + m^2, E[x^4] = 3 sigma^4 + 6 sigma^2 m^2 + m^4
    mean = np.array([[0.7, -0.2]])
    cov = np.diag([2.0, 0.5])
    vals = gaussian_poly_expectations(
        [{(2, 0): 1.0}, {(4, 0): 1.0}, {(1, 1): 1.0}], mean, cov)
    assert abs(vals[0][0] - (2.0 + 0.49)) < 1e-12
    assert abs(vals[1][0] - (3 * 4.0 + 6 * 2.0 * 0.49 + 0.49 ** 2)) < 1e-11
    assert abs(vals[2][0] - 0.7 * (-0.2)) < 1e-12


def test_modulus_squared_poly_hand_expansion():
    # |1 + z|^2 = (1 + x)^2 + y^2
    msq = modulus_squared_poly([1.0, 1.0])
    x = np.array([[0.3, -1.2], [2.0, 0.1]])
    want = (1 + x[:, 0]) ** 2 + x[:, 1] ** 2
    assert np.allclose(poly_eval(msq, x), want, atol=1e-13)


def test_holomorphic_real_poly_abs():
    coeffs = [0.5, -1.0, 0.0, 2.0]  # 0.5 - z + 2 z^3
    cpoly = holomorphic_to_real_poly(coeffs)
    pts = np.array([[0.4, 0.9], [-1.1, 0.2]])
    z = pts[:, 0] + 1j * pts[:, 1]
    f = 0.5 - z + 2 * z ** 3
    got = sum(c * pts[:, 0] ** a * pts[:, 1] ** b
              for (a, b), c in cpoly.items())
    assert np.allclose(got, f, atol=1e-12)


def test_holomorphic_log_derivs_match_finite_differences():
    coeffs = [1.0, 2.0, 0.0, 1.0]
    pts = np.array([[0.6, 0.3], [-0.4, 1.1]])

    def logabs(p):
        z = p[:, 0] + 1j * p[:, 1]
        return np.log(np.abs(1.0 + 2 * z + z ** 3))

    _, grad, hess = holomorphic_log_derivs(
        coeffs, pts[:, 0] + 1j * pts[:, 1])
    h = 1e-5
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (logabs(pts + e) - logabs(pts - e)) / (2 * h)
        assert np.allclose(grad[:, i], fd, atol=1e-7)
    # log|f| is harmonic away from zeros
    assert np.allclose(hess[:, 0, 0] + hess[:, 1, 1], 0.0, atol=1e-10)


# ---------------------------------------------------------------------------
# PolyExp families


def _fd_log_derivs(fam, x, h=1e-5):
    n = x.shape[1]
    logf = lambda p: np.log(fam.value(p))
    grad = np.zeros_like(x)
    hess = np.zeros((x.shape[0], n, n))
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h
        grad[:, i] = (logf(x + ei) - logf(x - ei)) / (2 * h)
        for j in range(n):
            ej = np.zeros(n)
            ej[j] = h
            hess[:, i, j] = (logf(x + ei + ej) - logf(x + ei - ej)
                             - logf(x - ei + ej) + logf(x - ei - ej)) / (4 * h * h)
    return grad, hess


def test_polyexp_log_derivs_match_finite_differences():
    fam = PolyExp.poly_times_gaussian(
        2, {(2, 0): 1.0, (0, 2): 1.0, (0, 0): 0.3}, beta=0.8)
    x = np.array([[0.4, -0.7], [1.2, 0.5]])
    _, grad, hess = fam.log_derivs(x)
    fd_g, fd_h = _fd_log_derivs(fam, x)
    assert np.allclose(grad, fd_g, atol=1e-6)
    assert np.allclose(hess, fd_h, atol=1e-4)


def test_polyexp_multiply_is_pointwise_product():
    a = PolyExp.poly_times_gaussian(2, {(1, 0): 1.0, (0, 0): 2.0}, beta=0.5)
    b = PolyExp.quadratic_exponent(2, beta=0.3, c=-0.2)
    x = np.random.default_rng(5).normal(size=(20, 2))
    assert np.allclose(a.multiply(b).value(x), a.value(x) * b.value(x),
                       rtol=1e-12)


def test_polyexp_mixture_weights():
    parts = [PolyExp.constant(2, 1.0), PolyExp.quadratic_exponent(2, beta=1.0)]
    mix = PolyExp.mixture(parts, [0.25, 0.75])
    x = np.array([[0.3, 0.4]])
    want = 0.25 + 0.75 * math.exp(-0.5 * 0.25)
    assert abs(mix.value(x)[0] - want) < 1e-14


def test_smoothed_log_derivs_gaussian_weight_closed_form():
    # int e^{-beta|z + sqrt(s) y|^2/2} dgamma(y)
    #   = (1 + beta s)^{-n/2} exp(-beta |z|^2 / (2 (1 + beta s)))
    beta, s, n = 1.7, 0.6, 2
    fam = PolyExp.quadratic_exponent(n, beta=beta)
    z = np.array([[0.5, -1.1], [2.0, 0.3]])
    logv, grad, hess = fam.smoothed_log_derivs(z, s)
    c = beta / (1.0 + beta * s)
    want_log = (-n / 2) * math.log1p(beta * s) \
        - 0.5 * c * np.einsum("mi,mi->m", z, z)
    assert np.allclose(logv, want_log, atol=1e-12)
    assert np.allclose(grad, -c * z, atol=1e-12)
    assert np.allclose(hess, -c * np.eye(n)[None], atol=1e-12)


def test_gamma_weighted_expectations_vs_hermite():
    fam = PolyExp.poly_times_gaussian(2, {(2, 0): 1.0, (0, 2): 1.0}, beta=0.4)
    got = fam.gamma_weighted_expectations([{(0, 0): 1.0}, {(2, 0): 1.0}])
    pts, w = quadrature.gauss_hermite(2, order=48)
    fv = fam.value(pts)
    assert abs(got[0] - float(w @ fv)) < 1e-10
    assert abs(got[1] - float(w @ (fv * pts[:, 0] ** 2))) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=-1.5, max_value=1.5),
       st.floats(min_value=-1.5, max_value=1.5),
       st.floats(min_value=0.1, max_value=2.0))
def test_smoothed_value_agrees_with_hermite(zx, zy, s):
    fam = PolyExp.poly_times_gaussian(2, {(2, 0): 1.0, (0, 0): 0.5}, beta=0.9)
    z = np.array([[zx, zy]])
    got = fam.smoothed_value(z, s)[0]
    pts, w = quadrature.gauss_hermite(2, order=32)
    want = float(w @ fam.value(z + math.sqrt(s) * pts))
    assert abs(got - want) < 1e-9 * max(1.0, abs(want))


def test_polyexp_rejects_mismatched_dims():
    a = PolyExp.constant(2, 1.0)
    b = PolyExp.constant(3, 1.0)
    with pytest.raises(Exception):
        a.multiply(b)

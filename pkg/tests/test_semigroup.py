"""Ornstein-Uhlenbeck smoothing: closed forms, bounds, mollification."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transportlab import semigroup
from transportlab.errors import DomainError
from transportlab.measures import TruncationBox
from transportlab.polyexp import PolyExp
from transportlab.semigroup import (SemigroupKind, apply,
                                    check_smoothing_bounds,
                                    covariance_identity_check,
                                    mollified_kappa, mollify, smoothing_rhs,
                                    smoothing_window)

OU = SemigroupKind.ORNSTEIN_UHLENBECK


def _gaussian_weight(beta, dim=2):
    return PolyExp.quadratic_exponent(dim, beta=beta)


def test_kernel_params():
    a, s = semigroup.kernel_params(OU, 0.7)
    assert a == pytest.approx(math.exp(-0.7))
    assert s == pytest.approx(1.0 - math.exp(-1.4))
    a, s = semigroup.kernel_params("heat", 0.7)
    assert (a, s) == (1.0, 0.7)


def test_gaussian_weight_closed_form_value_and_hessian():
    # P_t e^{-beta |x|^2/2} = (1 + beta s)^{-n/2}
    #   * exp(-beta a^2 |x|^2 / (2 (1 + beta s)))
    for beta in (0.5, 1.0, 3.0):
        f = _gaussian_weight(beta)
        for t in (0.1, 0.4, 1.0, 2.0):
            a, s = semigroup.kernel_params(OU, t)
            x = np.random.default_rng(7).normal(size=(20, 2))
            ev = apply(OU, f, t, x)
            c = beta * a * a / (1.0 + beta * s)
            want = (1.0 + beta * s) ** -1.0 \
                * np.exp(-0.5 * c * np.einsum("mi,mi->m", x, x))
            assert np.allclose(ev.value, want, rtol=1e-12)
            assert np.allclose(ev.hess_log, -c * np.eye(2)[None], atol=1e-12)


def test_closed_form_agrees_with_hermite_quadrature():
    f = PolyExp.poly_times_gaussian(
        2, {(2, 0): 1.0, (0, 2): 1.0}, beta=0.6)
    x = np.array([[0.5, -0.8], [1.5, 0.2]])
    ev_cf = apply(OU, f, 0.7, x, method="closed_form")
    ev_gh = apply(OU, f, 0.7, x, method="gauss_hermite", order=64)
    assert np.allclose(ev_cf.value, ev_gh.value, rtol=1e-10)
    assert np.allclose(ev_cf.grad_log, ev_gh.grad_log, atol=1e-8)
    assert np.allclose(ev_cf.hess_log, ev_gh.hess_log, atol=1e-7)


def test_smoothing_rhs_window():
    # log-concave transfer blows up as s -> 1/c
    assert smoothing_window(0.5) == np.inf
    tw = smoothing_window(2.0)
    assert 0 < tw < np.inf
    with pytest.raises(DomainError):
        smoothing_rhs("log_concave", 2.0, OU, 10.0 * tw)


def test_smoothing_bounds_pass_for_gaussian_weights():
    # classes take the signed constant: hess log f = -beta Id means c = -beta
    probes = np.random.default_rng(0).normal(size=(50, 2))
    for beta in (0.5, 1.0, 3.0):
        f = _gaussian_weight(beta)
        for t in (0.2, 0.8):
            for klass, c in (("unconditional", None),
                             ("log_concave", -beta),
                             ("log_convex", -beta),
                             ("log_subharmonic", -beta)):
                cert = check_smoothing_bounds(f, klass, t, probes, c=c)
                assert cert.verdict == "pass", (klass, beta, t, cert.observed)


def test_log_concave_smoothing_is_sharp_for_gaussian():
    # equality case: hess log P_t f = c a^2/(1 - c s) Id for f = e^{c|x|^2/2}
    beta = 0.8
    f = _gaussian_weight(beta)
    t = 0.5
    cert = check_smoothing_bounds(f, "log_concave", t, np.zeros((1, 2)),
                                  c=-beta)
    assert cert.observed == pytest.approx(cert.theoretical_rhs, rel=1e-12)


def test_cross_term_weight_has_positive_laplacian():
    # f = e^{x1 x2}: quadratic exponent with B = [[0,-1],[-1,0]]
    f = PolyExp.quadratic_exponent(2, B=np.array([[0.0, -1.0], [-1.0, 0.0]]))
    probes = np.random.default_rng(4).normal(size=(40, 2)) * 1.5
    for t in (0.1, 0.5, 1.0):
        ev = apply(OU, f, t, probes)
        lap = np.trace(ev.hess_log, axis1=1, axis2=2)
        assert np.all(np.isfinite(lap))
        assert np.all(lap > 0.0), t


def test_mollified_kappa_formula_and_decay():
    # closed form at k = 1: kappa e^{-2} / (1 + kappa (1 - e^{-2}))
    kappa = 2.0
    e = math.exp(-2.0)
    assert mollified_kappa(kappa, 1) == pytest.approx(
        kappa * e / (1 + kappa * (1 - e)))
    # monotone recovery toward kappa
    vals = [mollified_kappa(kappa, k) for k in (1, 2, 5, 20, 100)]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(kappa, rel=1e-1)


@settings(max_examples=60, deadline=None)
@given(st.floats(min_value=0.05, max_value=8.0),
       st.integers(min_value=5, max_value=200))
def test_mollified_kappa_gap_bound(kappa, k):
    gap = kappa - mollified_kappa(kappa, k)
    assert gap <= kappa * (kappa + 1.0) * (2.0 / k) + 1e-12


def test_mollify_pair_matches_formula_constants():
    from transportlab.measures import gaussian
    mu = gaussian(np.zeros(2), 4.0 * np.eye(2))
    nu = gaussian(np.zeros(2), np.eye(2))
    pair = mollify(mu, nu, alpha=0.25, kappa=1.0, k=5,
                   validation_box=TruncationBox.cube(2, 2.5), probes=32)
    assert pair.kappa_k == pytest.approx(mollified_kappa(1.0, 5))
    # smoothed Gaussian target is still Gaussian: sampled hessian of the
    # potential must sit exactly at kappa_k
    x = np.random.default_rng(2).normal(size=(30, 2))
    eigs = np.linalg.eigvalsh(-pair.target.hess_log(x))
    assert np.allclose(eigs.min(axis=1), pair.kappa_k, rtol=1e-6)


def test_covariance_identity_at_probe():
    f = PolyExp.poly_times_gaussian(2, {(2, 0): 1.0, (0, 0): 0.5}, beta=0.7)
    rep = covariance_identity_check(f, 0.6, np.array([[0.4, -0.2]]))
    assert rep.frobenius_discrepancy < 1e-8


def test_apply_rejects_negative_time():
    with pytest.raises(DomainError):
        semigroup.kernel_params(OU, -0.1)

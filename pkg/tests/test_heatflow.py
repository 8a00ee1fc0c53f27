"""Heat-flow integration, determinant routes, and contraction certificates."""

import numpy as np
import pytest

from transportlab.errors import (ConvexityViolationError, DomainError)
from transportlab.heatflow import (FlowSchedule, FlowState,
                                   check_km_contraction, flow_table,
                                   integrate_flow, km_bound_rhs,
                                   km_pushforward_check, midflow_moment_check,
                                   tail_log_det, terminal_determinants)
from transportlab.polyexp import PolyExp
from transportlab.scenarios import flow_gaussian_weight


def _sigma_half_flow(m=9, stepper="adaptive_rk45", steps=64, seed=5):
    f, mu, alpha = flow_gaussian_weight(0.5)
    rng = np.random.default_rng(seed)
    pts = mu.sampler(rng, m) if m > 16 else rng.normal(scale=0.5, size=(m, 2))
    sched = FlowSchedule(t_max=8.0, steps=steps, stepper=stepper)
    return integrate_flow(f, pts, schedule=sched), f, alpha


def test_schedule_rejects_bad_parameters():
    with pytest.raises(DomainError):
        FlowSchedule(t_max=2.0)
    with pytest.raises(DomainError):
        FlowSchedule(steps=32)
    with pytest.raises(DomainError):
        FlowSchedule(stepper="euler")
    sched = FlowSchedule(t_max=6.0, steps=100)
    assert sched.times[0] == 0.0 and sched.times[-1] == 6.0
    assert sched.times.size == 101
    assert FlowSchedule(stepper="rk4").stepper_tolerance == \
        pytest.approx((8.0 / 64.0) ** 4)
    assert FlowSchedule().stepper_tolerance == 1e-8


def test_km_bound_rhs_closed_form():
    assert km_bound_rhs(4.0, 0.0, 2) == pytest.approx(1.0)
    assert km_bound_rhs(4.0, 50.0, 2) == pytest.approx(4.0)
    s = -np.expm1(-2.0 * 0.7)
    assert km_bound_rhs(4.0, 0.7, 3) == pytest.approx((3.0 * s + 1.0) ** 1.5)
    # alpha = 1 is the fixed point: no contraction bound at any time
    assert np.allclose(km_bound_rhs(1.0, [0.1, 1.0, 9.0], 2), 1.0)


def test_gaussian_weight_flow_matches_closed_form():
    states, f, alpha = _sigma_half_flow()
    assert states[0].t == 0.0 and states[-1].t == 8.0
    for st in states:
        rhs = km_bound_rhs(alpha, st.t, 2)
        # Gaussian weights saturate the volume bound at every time
        assert np.allclose(st.determinants, rhs, rtol=1e-6)
        assert st.route_agreement() <= 1e-6
    term, bar = terminal_determinants(states, f)
    assert bar == 0.0
    assert np.allclose(term, 4.0, rtol=1e-5)


def test_contraction_certificate_on_sigma_half_flow():
    states, f, alpha = _sigma_half_flow()
    cert = check_km_contraction(states, alpha, f=f, atol=1e-6)
    assert cert.verdict == "pass"
    assert cert.observed == pytest.approx(1.0, abs=1e-6)
    assert cert.details["terminal_rhs"] == pytest.approx(4.0)
    assert cert.details["tail_error_bar"] == 0.0
    assert len(cert.details["per_time"]) == len(states)
    # understating the convexity constant must flip the verdict
    bad = check_km_contraction(states, 2.0, f=f, atol=1e-6)
    assert bad.verdict == "fail"
    assert bad.observed > 1.5


def test_rk4_and_rk45_agree():
    st45, _, _ = _sigma_half_flow(m=4)
    st4, _, _ = _sigma_half_flow(m=4, stepper="rk4")
    t45 = {s.t: s for s in st45}
    shared = [s for s in st4 if s.t in t45]
    assert len(shared) >= 32
    for s in shared:
        ref = t45[s.t]
        assert np.abs(s.log_dets - ref.log_dets).max() < 1e-3
        assert np.abs(s.positions - ref.positions).max() < 1e-3


def test_pushforward_moments_reach_standard_gaussian():
    states, _, _ = _sigma_half_flow(m=400)
    f, mu, _ = flow_gaussian_weight(0.5)
    cert = km_pushforward_check(states, mu)
    assert cert.verdict == "pass"
    assert cert.theoretical_rhs == 3.0
    assert cert.observed < 3.0
    with pytest.raises(DomainError):
        km_pushforward_check(states, mu, moments=5)


def test_midflow_moments_track_the_semigroup():
    states, f, _ = _sigma_half_flow(m=400)
    mid = len(states) // 2
    row = midflow_moment_check(states, f, mid)
    t = row["t"]
    ref = np.exp(-2 * t) * 0.25 + (1 - np.exp(-2 * t))
    assert row["reference"] == pytest.approx([ref, ref], rel=1e-12)
    assert row["relative_error"] < 0.15


def test_tail_log_det_quadratic_is_exact():
    f, _, _ = flow_gaussian_weight(0.5)
    inc, bar = tail_log_det(f, 8.0)
    s = -np.expm1(-16.0)
    assert bar == 0.0
    assert inc == pytest.approx(np.log(4.0) - np.log(1.0 + 3.0 * s),
                                abs=1e-15)


def test_tail_log_det_general_weight_needs_positions():
    f = PolyExp.poly_times_gaussian(2, {(2, 0): 1.0, (0, 0): 0.5}, beta=0.7)
    with pytest.raises(DomainError):
        tail_log_det(f, 8.0)
    inc, bar = tail_log_det(f, 8.0, positions=np.zeros((3, 2)))
    assert inc == 0.0
    assert 0.0 <= bar < 1e-5


def test_flow_state_guards():
    pos = np.zeros((2, 2))
    good = np.broadcast_to(np.eye(2), (2, 2, 2)).copy()
    bad = good.copy()
    bad[1, 0, 0] = -1.0
    with pytest.raises(ConvexityViolationError):
        FlowState(t=0.5, positions=pos, jacobians=bad, log_dets=np.zeros(2))
    with pytest.raises(DomainError):
        FlowState(t=0.5, positions=pos, jacobians=good,
                  log_dets=np.array([0.0, np.inf]))


def test_flow_table_layout():
    states, _, _ = _sigma_half_flow(m=3)
    tab = flow_table(states)
    assert tab.shape == (3 * len(states), 5)
    assert np.allclose(np.unique(tab[:, 0]), [s.t for s in states])

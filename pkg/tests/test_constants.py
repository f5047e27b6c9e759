from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from thermorothe.coefficients import BoundsReport
from thermorothe.constants import (
    SCHEME_B,
    SPLIT_A,
    SPLIT_B,
    DomainConstants,
    afg_condition,
    ball_radii,
    check_smallness,
    coercivity_constants,
    coercivity_two_parameter,
    domain_constants,
    max_truncation,
    max_truncation_sss3_closed_form,
    optimal_epsilon,
    poincare_constant,
    radius_report,
    radius_scheme_b,
    rhs_functional,
    sfg_condition,
    tau_limits,
    trace_constant,
)
from thermorothe.discretization import DomainSpec, build_mesh
from thermorothe.errors import NeverHolds, NotCoercive, SmallnessViolated, StepTooLarge, UnsupportedDomain


def bounds(b=(1.0, 1.0), k=(1.0, 1.0), sigma=(0.1, 0.1), alpha=0.1, Pi=0.1, gamma=(1.0, 1.0), M=1.0):
    return BoundsReport(b[0], b[1], k[0], k[1], sigma[0], sigma[1], alpha, Pi, gamma[0], gamma[1], M)


UNIT = DomainConstants(1.0, 1.0, "user-supplied")


def _trace_scan_1d():
    """sup over v = cosh(c x) of v(1)^2 / (||v||^2 + ||v'||^2), by a scalar scan."""
    def neg_ratio(c):
        den = quad(lambda x: math.cosh(c * x) ** 2 + (c * math.sinh(c * x)) ** 2, 0, 1)[0]
        return -math.cosh(c) ** 2 / den

    res = minimize_scalar(neg_ratio, bounds=(0.0, 5.0), method="bounded", options={"xatol": 1e-10})
    return math.sqrt(-res.fun)


def test_poincare_analytic():
    assert poincare_constant(DomainSpec.interval()) == pytest.approx(1 / math.pi, rel=1e-14)
    assert poincare_constant(DomainSpec.rectangle()) == pytest.approx(math.sqrt(2) / math.pi, rel=1e-14)


def test_poincare_discrete():
    assert poincare_constant(DomainSpec.interval(), "discrete", 128) == pytest.approx(1 / math.pi, rel=0.02)
    P_sq = poincare_constant(DomainSpec.rectangle(gamma_n=("left",)), "discrete", 24)
    assert P_sq == pytest.approx(1 / math.pi, rel=0.02)
    assert P_sq <= poincare_constant(DomainSpec.rectangle()) * (1 + 1e-9)


def test_poincare_boundary_constraint_is_finite():
    P = poincare_constant(DomainSpec.interval(), "discrete", 32, constraint="boundary")
    assert 0 < P < 1


def test_poincare_unsupported():
    with pytest.raises(UnsupportedDomain):
        poincare_constant("disk")


def test_trace_constant_examples():
    mesh = build_mesh(DomainSpec.interval(gamma=("right",), gamma_n=("left",)), 128)
    K = trace_constant(mesh, "Gamma")
    assert K >= 1.0
    assert 1.0 <= K <= 1.5
    oracle = _trace_scan_1d()
    assert oracle == pytest.approx(math.sqrt(1 / math.tanh(1.0)), rel=1e-8)
    assert K <= oracle * (1 + 1e-9)
    assert K == pytest.approx(oracle, rel=1e-3)


def test_trace_constant_square_edge_against_trial_scan():
    mesh = build_mesh(DomainSpec.rectangle(gamma_n=("left",)), 16)
    K = trace_constant(mesh)
    # functions of x alone reduce the square to the interval problem
    assert K == pytest.approx(_trace_scan_1d(), rel=5e-3)


def test_coercivity_examples():
    b = bounds()
    assert b.a_lo == pytest.approx(0.99)
    A = coercivity_constants(b, 1.0, SPLIT_A)
    assert A.L1 == pytest.approx(0.93, abs=1e-12)
    assert A.L2 == pytest.approx(0.04, abs=1e-12)
    B = coercivity_constants(b, 1.0, SPLIT_B)
    w = math.sqrt(0.1) * 1.2 / 2
    assert B.L1 == pytest.approx(0.99 - w, abs=1e-12)
    assert B.L2 == pytest.approx(0.1 * (1 - w), abs=1e-12)
    assert B.L1 == pytest.approx(0.8003, abs=1e-4) and B.L2 == pytest.approx(0.0810, abs=1e-4)


@pytest.mark.parametrize("variant", [SPLIT_A, SPLIT_B])
@pytest.mark.parametrize("eps", [0.1, 1.0, 7.0])
def test_coercivity_decoupled(variant, eps):
    b = bounds(alpha=0.0, Pi=0.0, M=0.0)
    pair = coercivity_constants(b, eps, variant)
    assert pair.L1 == pytest.approx(b.a_lo) and pair.L2 == pytest.approx(b.sigma_lo)


def test_coercivity_scheme_b_and_failure():
    b = bounds()
    pair = coercivity_constants(b, 1.0, SCHEME_B)
    assert pair.L1 == pytest.approx(0.99)
    assert pair.L2 == pytest.approx(0.99 * 0.1 / (2 * 1.1 * 0.1))
    with pytest.raises(NotCoercive):
        coercivity_constants(bounds(sigma=(0.01, 5.0)), 1.0, SPLIT_A)


def test_two_parameter_split_reduces_to_single():
    b = bounds()
    two = coercivity_two_parameter(b, 1.0, 1.0)
    one = coercivity_constants(b, 1.0, SPLIT_A)
    assert two.L1 > 0 and two.L2 > 0
    assert two.L1 == pytest.approx(one.L1) or two.L2 == pytest.approx(one.L2)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.5, 2.0), st.floats(0.05, 0.2), st.floats(0.0, 0.2))
def test_coercivity_monotone(k, sigma, alpha):
    b = bounds(k=(k, k), sigma=(sigma, sigma), alpha=alpha, Pi=0.1)
    try:
        base = coercivity_constants(b, 1.0, SPLIT_A)
    except NotCoercive:
        return
    up_a = coercivity_constants(bounds(k=(k + 0.1, k + 0.1), sigma=(sigma, sigma), alpha=alpha, Pi=0.1), 1.0)
    assert up_a.L1 > base.L1
    try:
        up_s = coercivity_constants(bounds(k=(k, k), sigma=(sigma, sigma * 1.2), alpha=alpha, Pi=0.1), 1.0)
    except NotCoercive:
        return
    assert up_s.L1 <= base.L1 + 1e-15 and up_s.L2 <= base.L2 + 1e-15


def test_smallness_examples():
    v = check_smallness(bounds(), truncation=1.0)
    assert v.akM.holds and v.akM.rhs == pytest.approx(0.01)
    assert v.sss3.holds and v.sss3.rhs == pytest.approx(0.032)
    assert v.sss1.holds
    assert v.sss1.lhs == pytest.approx(0.396) and v.sss1.rhs == pytest.approx(0.0144)
    for _, cond in v.items():
        assert cond.holds == (cond.margin > 0)


def test_akM_threshold_at_100():
    assert check_smallness(bounds(), truncation=99.9).akM.holds
    assert not check_smallness(bounds(), truncation=100.1).akM.holds


def test_decoupled_limit_all_hold():
    v = check_smallness(bounds(alpha=0.0, Pi=0.0, M=0.0))
    for name, cond in v.items():
        assert cond.holds, name
        assert cond.margin == pytest.approx(cond.lhs)


@settings(max_examples=80, deadline=None)
@given(st.floats(0.5, 2.0), st.floats(0.02, 1.0), st.floats(1.0, 1.5), st.floats(0.0, 0.3), st.floats(0.0, 0.3),
       st.floats(0.0, 1.0))
def test_cross_implications(k, s_lo, s_ratio, alpha, Pi, M):
    b = bounds(k=(k, k), sigma=(s_lo, s_lo * s_ratio), alpha=alpha, Pi=Pi, M=M)
    v = check_smallness(b)
    if v.sss1.holds and b.a_lo > 0:
        eps = optimal_epsilon(b, "afg")
        assert afg_condition(b, eps).holds
        assert v.afg.holds
    if v.sss2.holds and b.a_lo > 0:
        assert sfg_condition(b, optimal_epsilon(b, "sfg")).holds
    if v.sss3.holds and b.a_lo > 0:
        assert v.asfg.holds


def test_rhs_functional_examples():
    assert rhs_functional(0.0, 0.0, bounds(), UNIT, 1.0, 0.5, 2.0) == 0.0
    assert rhs_functional(2.0, 0.0, bounds(), UNIT, 1.0, 0.5, 2.0) == pytest.approx(2.0)
    assert rhs_functional(0.0, 4.0, bounds(), UNIT, 1.0, 0.5, 2.0) == pytest.approx(2.0)


def test_ball_radii_examples():
    assert ball_radii(0.0, 1.0, 1.0, 1.0, 2.0) == (1.0, 0.0, 1.0)
    R1, R2, R = ball_radii(1.0, 1.0, 2.0, 1.0, 2.0)
    assert R1 == pytest.approx(math.sqrt(2) + 1, abs=1e-14)
    assert R2 == pytest.approx(2.0, abs=1e-14)
    assert R == R1


def test_ball_radii_continuous_across_branch():
    below = ball_radii(1.0, 1.0, 2.0 - 1e-9, 1.0, 3.0)
    above = ball_radii(1.0, 1.0, 2.0 + 1e-9, 1.0, 3.0)
    assert below[2] == pytest.approx(above[2], rel=1e-8)


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10))
def test_radii_monotone_in_data(f2, Hp, g):
    b = bounds(M=0.0)
    r0 = rhs_functional(f2, Hp, b, UNIT, 0.05, 0.1, 3.0, g_norm_sq=g)
    r1 = rhs_functional(f2 + 1, Hp + 1, b, UNIT, 0.05, 0.1, 3.0, g_norm_sq=g + 1)
    assert r1 >= r0
    assert ball_radii(r1, 0.5, 0.05, 1.0, 3.0)[2] >= ball_radii(r0, 0.5, 0.05, 1.0, 3.0)[2]
    n0 = {"f_norm_sq": f2, "H_norm_pow": Hp, "g_norm": g}
    n1 = {"f_norm_sq": f2 + 1, "H_norm_pow": Hp + 1, "g_norm": g + 1}
    assert radius_scheme_b(n1, b, UNIT, 0.1, 3.0) >= radius_scheme_b(n0, b, UNIT, 0.1, 3.0)


def test_radius_scheme_b_examples():
    b = bounds(alpha=0.1, Pi=0.1, M=0.0)
    assert b.a_lo == 1.0 and b.F_hi == pytest.approx(0.1)
    assert radius_scheme_b({}, b, UNIT, 0.5, 2.0) == 0.0
    tau = 0.5
    R = radius_scheme_b({"f_norm_sq": tau * b.b_lo}, b, UNIT, tau, 2.0)
    assert R == pytest.approx(1 / (1 - 0.002), abs=1e-14)
    # without coupling the radius is the data root over sqrt(a_lo)
    b0 = bounds(k=(2.0, 2.0), alpha=0.0, Pi=0.0, M=0.0)
    norms = {"f_norm_sq": 0.3, "H_norm_pow": 0.2, "g_norm": 5.0}
    expected = math.sqrt(0.3 / (0.25 * 1.0) + 2 * 0.2 / (2.0 * 1.0)) / math.sqrt(2.0)
    assert radius_scheme_b(norms, b0, UNIT, 0.25, 2.0) == pytest.approx(expected, rel=1e-14)


def test_radius_scheme_b_errors():
    with pytest.raises(StepTooLarge):
        radius_scheme_b({}, bounds(M=0.0), UNIT, 2.0, 2.0)
    with pytest.raises(SmallnessViolated):
        radius_scheme_b({}, bounds(k=(0.1, 0.1), sigma=(1.0, 1.0), alpha=0.5, Pi=0.5, M=0.0), UNIT, 0.01, 2.0)


def test_tau_limits():
    t1, t2 = tau_limits(bounds(b=(1.0, 2.0), M=0.0))
    assert t1 == pytest.approx(0.5) and t2 == pytest.approx(1.0)


def test_max_truncation_examples():
    b = bounds()
    closed = max_truncation_sss3_closed_form(b)
    assert closed == pytest.approx(min(100.0, (100 - 0.2) / 3), abs=1e-12)
    assert max_truncation(b, "sss3") == pytest.approx(closed, abs=1e-9)
    assert max_truncation(bounds(alpha=0.0), "sss3") == math.inf
    with pytest.raises(NeverHolds):
        max_truncation(bounds(k=(0.01, 0.01), sigma=(1.0, 1.0), alpha=1.0, Pi=1.0), "sss3")


def test_radius_report_consistency():
    mesh = build_mesh(DomainSpec.interval(), 16)
    dc = domain_constants(mesh)
    b = bounds(M=0.5)
    pair = coercivity_constants(b, optimal_epsilon(b))
    rr = radius_report({"f_norm_sq": 1.0, "H_norm_pow": 0.5, "g_norm": 0.1}, b, dc, pair, 0.1, 2.0)
    assert rr.R_ball == max(rr.R1, rr.R2)
    assert all(np.isfinite([rr.R_script, rr.R1, rr.R2, rr.R_schemeB]))
    assert dc.product >= dc.K2 > 0

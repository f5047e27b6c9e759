from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg as sla
from scipy.optimize import brentq

from thermorothe.coefficients import CoefficientBundle, ScalarCoefficient
from thermorothe.discretization import (
    MEAN_ZERO_VOLUME,
    DomainSpec,
    FunctionSpace,
    assemble_boundary_load,
    assemble_boundary_mass,
    assemble_weighted_stiffness,
    build_mesh,
)
from thermorothe.elliptic import (
    FixedPointConfig,
    NewtonConfig,
    StepProblem,
    fixed_point_scheme_a,
    fixed_point_scheme_b,
    solve_coupled_frozen,
    solve_coupled_schur,
    solve_phi_given,
    solve_theta_given,
    step_residuals,
)
from thermorothe.errors import InvalidSpec

from conftest import constant_bundle, mild_bundle


def spaces(domain=None, n=16):
    mesh = build_mesh(domain or DomainSpec.interval(), n)
    return FunctionSpace(mesh), FunctionSpace(mesh, MEAN_ZERO_VOLUME)


def problem(bundle, prev=None, H=None, tau=0.1, domain=None, n=16):
    Vt, Vp = spaces(domain, n)
    prev = np.zeros(Vt.dof_count) if prev is None else prev
    if callable(prev):
        prev = prev(Vt.mesh.vertices)
    H = (lambda x: bundle.h(x, tau)) if H is None else H
    return StepProblem.from_previous(prev, H, tau, bundle, Vt, Vp, time=tau)


def test_phi_zero_data():
    p = problem(constant_bundle(alpha=0.0, g=0.0))
    phi = solve_phi_given(np.linspace(0, 1, 17), p)
    np.testing.assert_allclose(phi.nodal_values, 0.0, atol=1e-14)


def test_phi_closed_form_seebeck():
    alpha = 0.3
    p = problem(CoefficientBundle(1.0, 1.0, 1.0, alpha, 0.0, 1.0, ell=2.0, truncation=0.0))
    x = p.mesh.vertices[:, 0]
    phi = solve_phi_given(x.copy(), p)
    np.testing.assert_allclose(phi.nodal_values, -alpha * (x - 0.5), atol=1e-12)


def test_phi_pure_neumann_current():
    bundle = CoefficientBundle(1.0, 1.0, 1.0, 0.0, 0.0, 1.0, g=lambda x: 2 * x[..., 0] - 1, ell=2.0,
                               truncation=0.0)
    p = problem(bundle, domain=DomainSpec((1.0,), (), ("left", "right")))
    x = p.mesh.vertices[:, 0]
    np.testing.assert_allclose(solve_phi_given(np.zeros_like(x), p).nodal_values, x - 0.5, atol=1e-12)


def test_current_without_neumann_part_rejected():
    with pytest.raises(InvalidSpec):
        problem(constant_bundle(g=1.0), domain=DomainSpec((1.0,), ("left", "right"), ()))


def test_theta_zero_data():
    p = problem(constant_bundle(alpha=0.0, Pi=0.0, M=0.0, ell=5.0))
    th = solve_theta_given(np.zeros(17), np.zeros(17), p)
    np.testing.assert_allclose(th.nodal_values, 0.0, atol=1e-14)


def test_theta_scalar_radiation_root_by_bisection():
    # One cell: eliminating the interior node leaves c*t + gamma*|t|^3 t = d for the boundary node.
    tau, k, gamma, H = 0.2, 1.5, 2.0, 3.0
    bundle = constant_bundle(k=k, sigma=1.0, alpha=0.0, Pi=0.0, M=0.0, gamma=gamma, ell=5.0)
    p = problem(bundle, prev=np.array([1.0, 0.5]), H=lambda x: H + 0 * x[..., 0], tau=tau, n=1)
    m = 0.5 / tau
    f0, f1 = 1.0, 0.5
    d0 = m * f0

    def scalar(t1):
        t0 = (d0 + k * t1) / (m + k)
        return -k * t0 + (m + k) * t1 + gamma * abs(t1) ** 3 * t1 - (m * f1 + H)

    root = brentq(scalar, -10, 10, xtol=1e-15)
    th = solve_theta_given(np.zeros(2), np.zeros(2), p).nodal_values
    assert th[1] == pytest.approx(root, abs=1e-11)
    assert th[0] == pytest.approx((d0 + k * root) / (m + k), abs=1e-11)


def test_coupled_zero_sources():
    p = problem(constant_bundle(ell=5.0))
    th, ph = solve_coupled_frozen((np.zeros(17), np.zeros(17)), p)
    np.testing.assert_allclose(th.nodal_values, 0, atol=1e-14)
    np.testing.assert_allclose(ph.nodal_values, 0, atol=1e-14)


def test_coupled_linear_matches_schur():
    bundle = mild_bundle(ell=2.0)
    p = problem(bundle, prev=lambda X: np.cos(np.pi * X[:, 0]))
    rng = np.random.default_rng(3)
    u = (rng.normal(size=17), rng.normal(size=17) * 0.1)
    th, ph = solve_coupled_frozen(u, p)
    th2, ph2 = solve_coupled_schur(u, p)
    np.testing.assert_allclose(th.nodal_values, th2.nodal_values, atol=1e-10)
    np.testing.assert_allclose(ph.nodal_values, ph2.nodal_values, atol=1e-10)


def test_coupled_decouples():
    bundle = CoefficientBundle(1.0, ScalarCoefficient.expression("1 + 0.2*sin(e)", 0.8, 1.2), 1.0, 0.0, 0.0, 1.0,
                               h=0.5, g=0.4, ell=5.0, truncation=0.0)
    p = problem(bundle, prev=lambda X: X[:, 0] ** 2)
    u = (np.linspace(0, 1, 17), np.zeros(17))
    th, ph = solve_coupled_frozen(u, p)
    phi_alone = solve_phi_given(u[0], p)
    th_alone = solve_theta_given(u[0], phi_alone, p)
    np.testing.assert_allclose(ph.nodal_values, phi_alone.nodal_values, atol=1e-12)
    np.testing.assert_allclose(th.nodal_values, th_alone.nodal_values, atol=1e-12)


def test_scheme_a_constant_coefficients_one_iteration():
    bundle = constant_bundle(M=0.0, ell=2.0, h=0.3, g=0.2)
    p = problem(bundle, prev=lambda X: np.sin(3 * X[:, 0]))
    sol = fixed_point_scheme_a(p, (np.zeros(17), np.zeros(17)))
    assert sol.outer_iterations == 1
    assert sol.newton_iterations_total <= 2


def test_scheme_a_zero_data():
    p = problem(mild_bundle(ell=5.0, g=0.0, h=0.0))
    rng = np.random.default_rng(0)
    sol = fixed_point_scheme_a(p, (rng.normal(size=17), rng.normal(size=17)))
    np.testing.assert_allclose(sol.theta.nodal_values, 0, atol=1e-10)
    np.testing.assert_allclose(sol.phi.nodal_values, 0, atol=1e-10)


def test_scheme_a_mild_nonlinearity_self_consistent():
    p = problem(mild_bundle(ell=5.0), prev=lambda X: 1 + np.cos(np.pi * X[:, 0]))
    sol = fixed_point_scheme_a(p, (p.theta_prev, np.zeros(17)))
    assert sol.converged
    inc = [v for v in sol.increments if v > 0]
    assert all(b < a for a, b in zip(inc, inc[1:]))
    res = step_residuals(sol.theta, sol.phi, p, "a")
    assert res["residual_theta"] <= 1e-9 * max(1.0, res["scale_theta"])
    assert res["residual_phi"] <= 1e-9 * max(1.0, res["scale_phi"])


def test_scheme_b_zero_data():
    p = problem(mild_bundle(ell=2.0, g=0.0, h=0.0))
    sol = fixed_point_scheme_b(np.zeros(17), p)
    np.testing.assert_allclose(sol.theta.nodal_values, 0, atol=1e-12)
    np.testing.assert_allclose(sol.phi.nodal_values, 0, atol=1e-12)


def test_scheme_b_linear_step_matches_direct_solve():
    k, sigma, alpha, Pi, gamma, tau, H, g = 1.2, 0.5, 0.1, 0.2, 1.5, 0.05, 0.7, 0.3
    bundle = CoefficientBundle(1.0, k, sigma, alpha, Pi, gamma, h=H, g=g, ell=2.0, truncation=0.0)
    p = problem(bundle, prev=lambda X: np.cos(2 * X[:, 0]), tau=tau)
    V = p.theta_space
    n = V.dof_count
    K = assemble_weighted_stiffness(V).matrix.toarray()
    m = V.volume_weights
    c = V.volume_weights
    # potential from the previous temperature, mean-zero via a bordered matrix
    A = np.block([[sigma * K, c[:, None]], [c[None, :], np.zeros((1, 1))]])
    rhs = np.concatenate([-sigma * alpha * K @ p.theta_prev + assemble_boundary_load(V, g, "GammaN"), [0.0]])
    phi = sla.solve(A, rhs)[:n]
    Mb = assemble_boundary_mass(V, gamma).matrix.toarray()
    At = np.diag(m / tau) + k * K + Mb
    theta = sla.solve(At, m * p.f / tau + assemble_boundary_load(V, H) - sigma * Pi * K @ phi)
    sol = fixed_point_scheme_b(p.theta_prev, p)
    np.testing.assert_allclose(sol.phi.nodal_values, phi, atol=1e-12)
    np.testing.assert_allclose(sol.theta.nodal_values, theta, atol=1e-12)


def test_schemes_agree_when_decoupled():
    bundle = CoefficientBundle(ScalarCoefficient.expression("1 + 0.3*tanh(e)^2", 1.0, 1.3),
                               ScalarCoefficient.expression("1 + 0.1*sin(e)", 0.9, 1.1),
                               1.0, 0.0, 0.0, 1.0, h=0.4, g=0.2, ell=5.0, truncation=0.0)
    p = problem(bundle, prev=lambda X: 1 - X[:, 0])
    a = fixed_point_scheme_a(p, (p.theta_prev, np.zeros(17)))
    b = fixed_point_scheme_b(p.theta_prev, p)
    np.testing.assert_allclose(a.theta.nodal_values, b.theta.nodal_values, atol=1e-12)
    np.testing.assert_allclose(a.phi.nodal_values, b.phi.nodal_values, atol=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        FixedPointConfig(relaxation=0.0)
    with pytest.raises(ValueError):
        FixedPointConfig(norm="max")
    assert NewtonConfig().rtol == 1e-10 and FixedPointConfig().tol == 1e-9

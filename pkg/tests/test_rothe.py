from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.optimize import brentq

from thermorothe.coefficients import CoefficientBundle, ScalarCoefficient
from thermorothe.discretization import DiscreteField, DomainSpec, FunctionSpace, build_mesh
from thermorothe.elliptic import FixedPointConfig
from thermorothe.errors import OutOfRange, StepFailure, StepTooLarge
from thermorothe.rothe import (
    TimeGrid,
    build_interpolants,
    compute_fluxes,
    read_trajectory,
    run_scheme_a,
    run_scheme_b,
    sample_h,
    weak_divergence_residual,
    write_trajectory,
)

from conftest import ROBIN_LAMBDA, decoupled_bundle, mild_bundle, robin_mode

X = np.array([[0.3], [0.9]])


def stationary_bundle(c=0.7, ell=5.0):
    gamma = ScalarCoefficient.expression("1 + 0.5*tanh(e)^2", 1.0, 1.5)
    h = float(gamma(np.zeros(1), np.array(c))) * abs(c) ** (ell - 2) * c
    return CoefficientBundle(
        ScalarCoefficient.expression("1 + e^2/(1 + e^2)", 1.0, 2.0),
        ScalarCoefficient.expression("1 + 0.1*sin(e)", 0.9, 1.1),
        ScalarCoefficient.expression("0.1 + 0.01*tanh(e)", 0.09, 0.11),
        0.1, 0.1, gamma, h=h, g=0.0, ell=ell, truncation=1.0)


def test_robin_lambda_frozen():
    lam = brentq(lambda l: (l * l - 1) * math.sin(l) - 2 * l * math.cos(l), 0.5, 2.0, xtol=1e-15)
    assert lam == pytest.approx(ROBIN_LAMBDA, abs=1e-14)
    # the mode satisfies u'(0) = u(0) and -u'(1) = u(1)
    d = lambda x: ROBIN_LAMBDA * (-ROBIN_LAMBDA * math.sin(ROBIN_LAMBDA * x) + math.cos(ROBIN_LAMBDA * x))
    assert d(0.0) == pytest.approx(float(robin_mode(0.0)))
    assert -d(1.0) == pytest.approx(float(robin_mode(1.0)))


def test_time_grid():
    g = TimeGrid(1.0, 4)
    assert g.tau == 0.25 and g.node(4) == 1.0
    assert np.all(np.diff(g.nodes) > 0)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)


def test_sample_h_examples():
    grid = TimeGrid(1.0, 4)
    const = sample_h(lambda x, t: 2.0 + 0 * x[..., 0], grid, 1)
    assert np.all(const(X) == sample_h(lambda x, t: 2.0 + 0 * x[..., 0], grid, 3)(X))
    lin = lambda x, t: t + 0 * x[..., 0]
    np.testing.assert_allclose(sample_h(lin, grid, 2)(X), 0.5)
    np.testing.assert_allclose(sample_h(lin, grid, 2, "average")(X), 0.375, atol=1e-15)


def test_single_step_trajectory(interval_mesh):
    tr = run_scheme_a(mild_bundle(), interval_mesh, 0.5, TimeGrid(1.0, 1))
    assert len(tr.theta_steps) == 2 and len(tr.phi_steps) == 1
    np.testing.assert_array_equal(tr.theta_steps[0].nodal_values, 0.5)


@pytest.mark.parametrize("ell", [2.0, 5.0])
@pytest.mark.parametrize("runner", [run_scheme_a, run_scheme_b])
def test_stationary_datum(ell, runner):
    mesh = build_mesh(DomainSpec.interval(), 64)
    tr = runner(stationary_bundle(ell=ell), mesh, 0.7, TimeGrid(1.0, 8), with_estimates=False)
    assert np.max(np.abs(tr.theta_array() - 0.7)) <= 1e-10
    assert np.max(np.abs(tr.phi_array())) <= 1e-10


def test_decoupled_heat_oracle(robin_mesh):
    theta0 = robin_mode(robin_mesh.vertices[:, 0])
    errs = []
    for M in (10, 20, 40):
        tr = run_scheme_a(decoupled_bundle(), robin_mesh, theta0, TimeGrid(0.5, M), with_estimates=False)
        exact = math.exp(-ROBIN_LAMBDA**2 * 0.5) * theta0
        errs.append(DiscreteField(tr.theta_space, tr.theta_steps[-1].nodal_values - exact).norms()["l2_volume"])
    rates = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(rates) > 0.8


def test_scheme_b_matches_a_when_decoupled(robin_mesh):
    theta0 = robin_mode(robin_mesh.vertices[:, 0])
    g = TimeGrid(0.5, 8)
    a = run_scheme_a(decoupled_bundle(), robin_mesh, theta0, g)
    b = run_scheme_b(decoupled_bundle(), robin_mesh, theta0, g)
    assert np.max(np.abs(a.theta_array() - b.theta_array())) <= 1e-12


def test_scheme_b_rejects_large_step(interval_mesh):
    bundle = CoefficientBundle(4.0, 1.0, 0.1, 0.1, 0.1, 1.0, ell=2.0, truncation=0.0)
    with pytest.raises(StepTooLarge):
        run_scheme_b(bundle, interval_mesh, 0.0, TimeGrid(1.0, 2))


def test_step_failure_carries_partial_trajectory(interval_mesh):
    with pytest.raises(StepFailure) as exc:
        run_scheme_a(mild_bundle(ell=5.0), interval_mesh, lambda x: 1 + np.cos(np.pi * x[:, 0]), TimeGrid(1.0, 4),
                     fp_cfg=FixedPointConfig(max_iter=1, adaptive=False))
    assert exc.value.step == 1
    assert exc.value.trajectory.steps_done == 0


def test_causality_prefix_unchanged(interval_mesh):
    base = mild_bundle(h=lambda x, t: 0.3 + 0 * x[..., 0])
    late = mild_bundle(h=lambda x, t: 0.3 + (t > 0.6) * 5.0 + 0 * x[..., 0])
    g = TimeGrid(1.0, 8)
    a = run_scheme_a(base, interval_mesh, 0.2, g, with_estimates=False)
    b = run_scheme_a(late, interval_mesh, 0.2, g, with_estimates=False)
    np.testing.assert_array_equal(a.theta_array()[:5], b.theta_array()[:5])
    assert np.abs(a.theta_array()[-1] - b.theta_array()[-1]).max() > 1e-3


def test_interpolants(interval_mesh):
    tr = run_scheme_a(mild_bundle(), interval_mesh, lambda x: np.cos(np.pi * x[:, 0]), TimeGrid(1.0, 4),
                      with_estimates=False)
    it = build_interpolants(tr)
    B = tr.B_array()
    np.testing.assert_array_equal(it.theta_pc(0.0), tr.theta_steps[0].nodal_values)
    np.testing.assert_allclose(it.B_affine(0.0), B[0])
    np.testing.assert_allclose(it.B_affine(0.375), 0.5 * (B[1] + B[2]), atol=1e-14)
    np.testing.assert_array_equal(it.theta_pc(0.3), tr.theta_steps[2].nodal_values)
    np.testing.assert_allclose(it.Z_pc(0.3), (B[2] - B[1]) / 0.25, atol=1e-12)
    for t in (0.1, 0.5, 0.77, 1.0):
        np.testing.assert_allclose(it.integral_Z(t), it.B_affine(t) - B[0], atol=1e-12)
    for m in range(5):
        np.testing.assert_allclose(it.Theta_affine(0.25 * m), it.theta_pc(0.25 * m), atol=1e-14)
    with pytest.raises(OutOfRange):
        it.theta_pc(1.5)


def test_constant_b_affine_interpolant(robin_mesh):
    bundle = CoefficientBundle(2.0, 1.0, 1.0, 0.0, 0.0, 1.0, ell=2.0, truncation=0.0)
    tr = run_scheme_a(bundle, robin_mesh, 1.0, TimeGrid(1.0, 4), with_estimates=False)
    it = build_interpolants(tr)
    for t in (0.0, 0.1, 0.6):
        np.testing.assert_allclose(it.B_affine(t), 2.0 * it.Theta_affine(t), atol=1e-14)


def test_fluxes():
    mesh = build_mesh(DomainSpec.interval(), 8)
    V = FunctionSpace(mesh)
    bundle = CoefficientBundle(1.0, 1.0, 1.0, 0.0, 0.0, 1.0, ell=2.0, truncation=0.0)
    zero = compute_fluxes(DiscreteField(V, np.ones(9)), DiscreteField(V, np.ones(9)), bundle)
    assert all(np.all(zero[n] == 0) for n in ("q", "j", "J"))
    fl = compute_fluxes(DiscreteField(V, np.zeros(9)), DiscreteField(V, mesh.vertices[:, 0].copy()), bundle)
    np.testing.assert_allclose(fl["j"], -1.0)


def test_weak_divergence_of_current(interval_mesh):
    tr = run_scheme_a(mild_bundle(), interval_mesh, lambda x: np.cos(np.pi * x[:, 0]), TimeGrid(1.0, 4),
                      with_estimates=False)
    for th, ph in zip(tr.theta_steps[1:], tr.phi_steps):
        res = weak_divergence_residual(th, ph, tr.bundle, constraint=tr.phi_space.constraint_vector())
        assert res["max_abs"] <= 1e-9 * max(res["scale"], 1.0)


def test_trajectory_round_trip(tmp_path, interval_mesh):
    tr = run_scheme_a(mild_bundle(), interval_mesh, 0.3, TimeGrid(1.0, 4), with_estimates=False)
    write_trajectory(tr, tmp_path, stride=2, config_hash="abc")
    back = read_trajectory(tmp_path)
    assert back["steps"] == [0, 2, 4]
    np.testing.assert_array_equal(back["theta"][-1], tr.theta_steps[-1].nodal_values)
    np.testing.assert_array_equal(back["phi"][1], tr.phi_steps[1].nodal_values)
    with open(tmp_path / "snapshot_00002.csv", "a") as fh:
        fh.write("tampered\n")
    with pytest.raises(ValueError):
        read_trajectory(tmp_path)


def test_net_surface_current_and_warning(interval_mesh):
    from thermorothe.errors import CurrentImbalanceWarning
    from thermorothe.rothe import net_surface_current
    from thermorothe.scenarios import scenario

    V = FunctionSpace(interval_mesh)
    assert net_surface_current(V, mild_bundle(g=0.3).g) == pytest.approx((0.3, 0.3))
    with pytest.warns(CurrentImbalanceWarning):
        run_scheme_a(mild_bundle(g=0.3), interval_mesh, 0.0, TimeGrid(1.0, 1), with_estimates=False)
    plate = scenario("thermoelectric-plate")
    mesh = build_mesh(plate.domain, (4, 4))
    net, size = net_surface_current(FunctionSpace(mesh), plate.bundle.g)
    assert size > 0.3 and abs(net) <= 1e-14 * size


def test_open_bar_carries_no_current(interval_mesh):
    # one end insulated electrically: the only divergence-free current is zero
    import warnings

    from thermorothe.errors import CurrentImbalanceWarning

    with warnings.catch_warnings():
        warnings.simplefilter("error", CurrentImbalanceWarning)
        tr = run_scheme_a(mild_bundle(g=0.0), interval_mesh, lambda x: np.cos(np.pi * x[:, 0]), TimeGrid(1.0, 4),
                          with_estimates=False)
    fl = compute_fluxes(tr.theta_steps[-1], tr.phi_steps[-1], tr.bundle)
    assert np.max(np.abs(fl["j"])) <= 1e-10

"""Observed orders of the Rothe scheme on a problem with a known solution.

With the thermoelectric coupling switched off and unit coefficients, the
temperature is a single Robin mode decaying like exp(-lambda^2 t).  Backward
Euler should give first order in time; piecewise linear elements give second
order in space once the time error is removed with the time-discrete solution
(1 + tau lambda^2)^(-m).
"""

from __future__ import annotations

import math

from thermorothe import DomainSpec, TimeGrid, build_mesh, run_scheme_a
from thermorothe.coefficients import CoefficientBundle
from thermorothe.discretization import DiscreteField
from thermorothe.scenarios import decoupled_heat_eigenvalue

LAM = decoupled_heat_eigenvalue()
T = 0.5
DOMAIN = DomainSpec((1.0,), ("left", "right"), ())
BUNDLE = CoefficientBundle(1.0, 1.0, 1.0, 0.0, 0.0, 1.0, ell=2.0, truncation=0.0)


def mode(x):
    return LAM * math.cos(LAM * x) + math.sin(LAM * x)


def final_error(cells, steps, factor):
    mesh = build_mesh(DOMAIN, cells)
    traj = run_scheme_a(BUNDLE, mesh, lambda X: [mode(x) for x in X[:, 0]], TimeGrid(T, steps), with_estimates=False)
    exact = [factor * mode(x) for x in mesh.vertices[:, 0]]
    return DiscreteField(traj.theta_space, traj.theta_steps[-1].nodal_values - exact).norms()["l2_volume"]


def table(label, values, errors):
    print(f"\n{label:>6}   L2 error     order")
    for i, (v, e) in enumerate(zip(values, errors)):
        order = f"{math.log2(errors[i - 1] / e):.3f}" if i else ""
        print(f"{v:6d}   {e:.3e}    {order}")


def main():
    print(f"Robin eigenvalue lambda = {LAM:.12f}")
    Ms = [8, 16, 32, 64]
    table("M", Ms, [final_error(256, M, math.exp(-LAM**2 * T)) for M in Ms])
    Ns = [8, 16, 32, 64]
    table("cells", Ns, [final_error(N, 64, (1 + T / 64 * LAM**2) ** -64) for N in Ns])


if __name__ == "__main__":
    main()

"""Discrete checks of the energy estimates along a Rothe trajectory, and
empirical convergence studies.

Volume L2 norms and integrals of B and Psi use the nodal (lumped) quadrature
of the time-derivative term, which is the inner product in which the discrete
estimates are exact consequences of the step equations.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .coefficients import CoefficientBundle
from .constants import SCHEME_B, coercivity_constants, domain_constants
from .discretization import GAMMA, GAMMA_N, DiscreteField, FunctionSpace, Mesh, boundary_power_integral, build_mesh
from .elliptic import (
    LINEAR_TOL,
    EstimateContext,
    StepProblem,
    StepSolution,
    coupled_step_energy,
    h1_norm,
    lagged_step_energy,
    step_residuals,
)
from .errors import EstimateViolated, PropertyViolated
from .rothe import SCHEME_A_NAME, SCHEME_B_NAME, TimeGrid, Trajectory, run, sample_h, weak_divergence_residual

SLACK = 1e-8


def _grad_sq(space: FunctionSpace, v) -> float:
    g = space.cell_gradients(v)
    return float(np.sum(space.mesh.cell_measure * (g**2).sum(axis=1)))


def _lumped(space: FunctionSpace, v) -> float:
    return float(np.sum(space.volume_weights * v))


def _within(lhs, rhs, budget=0.0, slack=SLACK) -> bool:
    return lhs <= rhs * (1 + slack) + budget + 1e-300


def rebuild_problems(traj: Trajectory) -> list:
    """Step problems reconstructed from the stored temperatures and the data."""
    out = []
    for m in range(1, traj.steps_done + 1):
        H = sample_h(traj.bundle.h, traj.grid, m, traj.sample_mode)
        out.append(StepProblem.from_previous(traj.theta_steps[m - 1].nodal_values, H, traj.grid.tau,
                                             traj.bundle, traj.theta_space, traj.phi_space, traj.grid.node(m)))
    return out


def default_context(traj: Trajectory) -> EstimateContext:
    if traj.context is not None:
        return traj.context
    bounds = traj.bundle.bounds()
    from .constants import check_smallness

    v = check_smallness(bounds)
    if traj.scheme == SCHEME_B_NAME:
        pair = coercivity_constants(bounds, 1.0, SCHEME_B)
    elif v.afg.holds:
        pair = coercivity_constants(bounds, v.epsilon_used, "split-A")
    else:
        pair = coercivity_constants(bounds, v.epsilon_sfg, "split-B")
    constraint = "boundary" if traj.phi_space.constraint == "mean-zero-boundary" else "volume"
    return EstimateContext(bounds, pair, domain_constants(traj.mesh, constraint=constraint))


def inflate_constants(ctx: EstimateContext, factor: float = 10.0, which: str = "L1") -> EstimateContext:
    """Deliberately corrupted constants for negative controls."""
    pair = replace(ctx.pair, **{which: getattr(ctx.pair, which) * factor})
    return replace(ctx, pair=pair)


# -- global ledger -------------------------------------------------------------------

LEDGER_COLUMNS = ("step", "time", "psi", "grad_theta", "grad_phi", "boundary", "mass_term", "rhs_h", "rhs_g",
                  "budget", "cum_lhs", "cum_rhs", "cumulative_pass", "step_lhs", "step_rhs", "step_budget",
                  "step_pass", "phi_lhs", "phi_rhs", "phi_pass", "flux_residual", "flux_pass")


@dataclass
class EnergyLedger:
    scheme: str
    rows: list
    psi0: float
    theta0_term: float
    lhs: float
    rhs: float
    budget: float
    displayed_pass: bool
    cumulative_pass: bool
    step_pass: bool
    phi_pass: bool
    flux_pass: bool
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.displayed_pass and self.cumulative_pass

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LEDGER_COLUMNS)
            for r in self.rows:
                w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in LEDGER_COLUMNS])
            w.writerow(["total", "", "", "", "", "", "", "", "", repr(self.budget), repr(self.lhs), repr(self.rhs),
                        self.displayed_pass, "", "", "", self.step_pass, "", "", self.phi_pass, "", self.flux_pass])
        return path


def _residual_budget(theta, phi, res) -> float:
    return abs(float(theta @ res["R_theta"])) + abs(float(phi @ res["R_phi"]))


def verify_global_estimate(trajectory: Trajectory, constants: EstimateContext | None = None,
                           bundle: CoefficientBundle | None = None, raise_on_violation: bool | None = None,
                           slack: float = SLACK) -> EnergyLedger:
    """Evaluate the cumulative and global energy estimates of a trajectory.

    Scheme A is checked against the coupled estimate; scheme B against the
    lagged variant, which is reported but does not raise by default.
    """
    traj = trajectory
    if bundle is not None and bundle is not traj.bundle:
        traj = replace(traj, bundle=bundle)
    ctx = constants or default_context(traj)
    scheme = traj.scheme
    if raise_on_violation is None:
        raise_on_violation = scheme == SCHEME_A_NAME
    V = traj.theta_space
    X = traj.mesh.vertices
    bnd = ctx.bounds
    b = traj.bundle
    ell = b.ell
    ellc = ell / (ell - 1)
    tau = traj.grid.tau
    theta0 = traj.theta_steps[0].nodal_values
    psi0 = _lumped(V, b.b.first_moment(X, theta0))
    theta0_term = bnd.b_hi * _lumped(V, theta0**2)
    problems = rebuild_problems(traj)
    L1 = ctx.pair.L1 if scheme == SCHEME_A_NAME else bnd.a_lo
    L2 = ctx.pair.L2
    gcoef = 0.0 if math.isinf(L2) else ctx.domain.product**2 / (2 * L2)
    rows = []
    cum_lhs_sum, cum_rhs, budget = 0.0, 0.0, 0.0
    cum_ok = step_ok = phi_ok = flux_ok = True
    max_psi = 0.0
    sum_terms = 0.0
    grad_theta_QT = grad_phi_QT = 0.0
    for m, problem in enumerate(problems, start=1):
        th = traj.theta_steps[m].nodal_values
        ph = traj.phi_steps[m - 1].nodal_values
        norms = problem.data_norms()
        res = step_residuals(th, ph, problem, "a" if scheme == SCHEME_A_NAME else "b")
        bud = tau * _residual_budget(th, ph, res)
        budget += bud
        psi = _lumped(V, b.b.first_moment(X, th))
        gth = _grad_sq(V, th)
        gph = _grad_sq(V, ph)
        grad_theta_QT += tau * gth
        grad_phi_QT += tau * gph
        bdry = boundary_power_integral(V, 1.0, th, ell)
        terms = {
            "grad_theta": L1 * gth,
            "grad_phi": (L2 / 2 * gph) if scheme == SCHEME_A_NAME else 0.0,
            "boundary": bnd.gamma_lo / ellc * bdry,
        }
        mass_term = float(np.sum(V.volume_weights * (b.b.antiderivative(X, th) - problem.f) * th)) / tau
        rhs_h = norms["H_norm_pow"] / (ellc * bnd.gamma_lo ** (1 / (ell - 1)))
        rhs_g = gcoef * norms["g_norm"] ** 2
        step_sum = sum(terms.values())
        sum_terms += tau * step_sum
        cum_rhs += tau * (rhs_h + rhs_g)
        max_psi = max(max_psi, psi)
        cum_lhs = psi + sum_terms
        c_ok = _within(cum_lhs, psi0 + cum_rhs, budget, slack)
        cum_ok &= c_ok
        # one-step estimate
        if scheme == SCHEME_A_NAME:
            st = coupled_step_energy(problem, th, ph, ctx)
        else:
            st = lagged_step_energy(problem, th, ph, ctx)
        s_bud = _residual_budget(th, ph, res)
        s_ok = _within(st["lhs"], st["rhs"], s_bud, slack)
        step_ok &= s_ok
        # potential estimate, with coefficients at the temperature that drives it
        src = th if scheme == SCHEME_A_NAME else problem.theta_prev
        p_lhs, p_rhs = _phi_estimate(problem, src, ph, ctx, norms)
        p_ok = _within(p_lhs, p_rhs, math.sqrt(abs(float(ph @ res["R_phi"]))), slack)
        phi_ok &= p_ok
        flux = weak_divergence_residual(DiscreteField(V, th), DiscreteField(traj.phi_space, ph), b,
                                        source_theta=DiscreteField(V, src),
                                        constraint=problem.constraint)
        f_ok = flux["max_abs"] <= 10 * LINEAR_TOL * max(flux["scale"], 1.0)
        flux_ok &= f_ok
        rows.append({
            "step": m, "time": traj.grid.node(m), "psi": psi, "grad_theta": terms["grad_theta"],
            "grad_phi": terms["grad_phi"], "boundary": terms["boundary"], "mass_term": mass_term,
            "rhs_h": rhs_h, "rhs_g": rhs_g, "budget": bud, "cum_lhs": cum_lhs, "cum_rhs": psi0 + cum_rhs,
            "cumulative_pass": bool(c_ok), "step_lhs": st["lhs"], "step_rhs": st["rhs"], "step_budget": s_bud,
            "step_pass": bool(s_ok), "phi_lhs": p_lhs, "phi_rhs": p_rhs, "phi_pass": bool(p_ok),
            "flux_residual": flux["max_abs"], "flux_pass": bool(f_ok),
        })
    lhs = max_psi + sum_terms
    rhs = theta0_term + cum_rhs
    displayed_ok = _within(lhs, rhs, budget, slack)
    extra = {}
    if scheme == SCHEME_B_NAME:
        # lagged-scheme potential bound in space-time form, as stated
        T = traj.grid.T_final
        gnorm = problems[0].data_norms()["g_norm"] if problems else 0.0
        lhs_phi = math.sqrt(grad_phi_QT)
        rhs_phi = bnd.a_hi * math.sqrt(grad_theta_QT) \
            + T * ctx.domain.product / bnd.sigma_lo * gnorm
        extra["phi_QT_lhs"] = lhs_phi
        extra["phi_QT_rhs"] = rhs_phi
        extra["phi_QT_pass"] = bool(_within(lhs_phi, rhs_phi, 0.0, slack))
    ledger = EnergyLedger(scheme, rows, psi0, theta0_term, lhs, rhs, budget, bool(displayed_ok), bool(cum_ok),
                          bool(step_ok), bool(phi_ok), bool(flux_ok), extra)
    if raise_on_violation:
        if not cum_ok:
            raise EstimateViolated("cumulative energy estimate violated", "cumulative", ledger)
        if not displayed_ok:
            raise EstimateViolated("global energy estimate violated", "global", ledger)
    return ledger


def _phi_estimate(problem: StepProblem, src, phi, ctx: EstimateContext, norms: dict):
    V = problem.theta_space
    mesh = V.mesh
    b = problem.bundle
    e = V.at_qp(src)
    sig = b.sigma(mesh.qp_points, e)
    gp = V.cell_gradients(phi)
    lhs = math.sqrt(float(np.sum(mesh.qp_weights * sig * (gp**2).sum(axis=1)[:, None])))
    bnd = ctx.bounds
    rhs = math.sqrt(bnd.sigma_hi) * bnd.alpha_hi * math.sqrt(_grad_sq(V, src)) \
        + ctx.domain.product * norms["g_norm"] / math.sqrt(bnd.sigma_lo)
    return lhs, rhs


@dataclass
class StepReport:
    lhs: float
    rhs: float
    budget: float
    margin: float
    passed: bool
    terms: dict


def verify_step_estimate(step_solution: StepSolution, constants: EstimateContext, problem: StepProblem,
                         scheme: str = "a", slack: float = SLACK, raise_on_violation: bool = True) -> StepReport:
    """One-step a-priori estimate for a solved step."""
    th = step_solution.theta.nodal_values
    ph = step_solution.phi.nodal_values
    if scheme.lower() == "a":
        terms = coupled_step_energy(problem, th, ph, constants)
    else:
        terms = lagged_step_energy(problem, th, ph, constants)
    res = step_residuals(th, ph, problem, scheme.lower())
    budget = _residual_budget(th, ph, res)
    ok = _within(terms["lhs"], terms["rhs"], budget, slack)
    rep = StepReport(terms["lhs"], terms["rhs"], budget, terms["rhs"] - terms["lhs"], bool(ok), terms)
    if raise_on_violation and not ok:
        raise EstimateViolated("one-step estimate violated", "step", rep)
    return rep


# -- increments, translations, lemma -----------------------------------------------

@dataclass
class IncrementReport:
    M_values: list
    S_volume: list
    S_boundary: list
    ratios_volume: list
    ratios_boundary: list
    passed: bool
    factor: float = 2.0


def increment_statistics(traj: Trajectory) -> tuple[float, float]:
    V = traj.theta_space
    tau = traj.grid.tau
    ell = traj.bundle.ell
    th = traj.theta_array()
    d = np.diff(th, axis=0)
    vol = max((math.sqrt(_lumped(V, di**2)) for di in d), default=0.0)
    bd = max((boundary_power_integral(V, 1.0, di, ell) ** (1 / ell) for di in d), default=0.0) \
        if traj.mesh.has_tag(GAMMA) else 0.0
    return vol / math.sqrt(tau), bd / tau ** (1 / ell)


def _ratios(seq):
    return [(b / a if a > 0 else (0.0 if b == 0 else math.inf)) for a, b in zip(seq, seq[1:])]


def verify_increment_scaling(trajectories, grid=None, factor: float = 2.0) -> IncrementReport:
    """Boundedness of ``max_m ||theta^m - theta^{m-1}|| / sqrt(tau)`` under refinement."""
    trajs = sorted(trajectories, key=lambda t: t.grid.M)
    if len(trajs) < 2:
        raise ValueError("need runs for at least two values of M")
    stats = [increment_statistics(t) for t in trajs]
    Sv = [s[0] for s in stats]
    Sb = [s[1] for s in stats]
    rv, rb = _ratios(Sv), _ratios(Sb)
    ok = all(r <= factor for r in rv) and all(r <= factor for r in rb)
    return IncrementReport([t.grid.M for t in trajs], Sv, Sb, rv, rb, bool(ok), factor)


@dataclass
class TranslationReport:
    shifts: list
    Q: list
    ratio: float
    passed: bool
    bound: float = 4.0


def translation_quantity(interp, space: FunctionSpace, k: int) -> float:
    """``(1/z) int_0^{T-z} int (B(t+z) - B(t)) (theta(t+z) - theta(t))`` for ``z = k tau``."""
    M = interp.M
    if not 1 <= k < M + 1:
        raise ValueError("shift must be a positive multiple of tau below T")
    w = space.volume_weights
    total = 0.0
    for j in range(1, M - k + 1):
        total += float(np.sum(w * (interp.B[j + k] - interp.B[j]) * (interp.theta[j + k] - interp.theta[j])))
    return interp.tau * total / (k * interp.tau)


def verify_translation_estimate(interpolants, space: FunctionSpace, z_values=None, bound: float = 4.0) -> TranslationReport:
    """Uniform boundedness of the translation quotient over several shifts."""
    tau = interpolants.tau
    if z_values is None:
        z_values = [tau * k for k in (1, 2, 4, 8) if k < interpolants.M]
    shifts = []
    for z in z_values:
        k = int(round(z / tau))
        if abs(k * tau - z) > 1e-9 * max(tau, 1.0) or k < 1 or k >= interpolants.M:
            raise ValueError(f"shift {z} is not a multiple of tau below T")
        shifts.append(k)
    Q = [translation_quantity(interpolants, space, k) for k in shifts]
    pos = [q for q in Q if q > 0]
    if not pos:
        ratio = 1.0 if all(q == 0 for q in Q) else math.inf
    else:
        ratio = max(Q) / min(Q) if min(Q) > 0 else math.inf
    return TranslationReport([k * tau for k in shifts], Q, float(ratio), bool(ratio <= bound), bound)


@dataclass
class LemmaReport:
    n_samples: int
    min_monotone_margin: float
    min_chain_margin: float
    min_convexity_margin: float
    passed: bool


def verify_monotonicity_lemma(bundle: CoefficientBundle, n_samples: int = 1000, space: FunctionSpace | None = None,
                              rng=None, scale: float = 2.0, rtol: float = 1e-12) -> LemmaReport:
    """Random nodal pairs against the three capacity inequalities (lumped integrals)."""
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    rng = np.random.default_rng(rng)
    if space is None:
        from .discretization import DomainSpec

        space = FunctionSpace(build_mesh(DomainSpec.interval(), 16))
    X = space.mesh.vertices
    w = space.volume_weights
    bb = bundle.b
    b_lo, b_hi = bb.lower_bound, bb.upper_bound
    mins = [math.inf, math.inf, math.inf]
    for i in range(n_samples):
        u = rng.normal(scale=scale, size=space.dof_count)
        v = u if i == 0 else rng.normal(scale=scale, size=space.dof_count)
        Bu, Bv = bb.antiderivative(X, u), bb.antiderivative(X, v)
        Pu, Pv = bb.first_moment(X, u), bb.first_moment(X, v)
        lhs1 = float(np.sum(w * (Bu - Bv) * (u - v)))
        rhs1 = b_lo * float(np.sum(w * (u - v) ** 2))
        psi_u, Bu_u, cap = float(np.sum(w * Pu)), float(np.sum(w * Bu * u)), b_hi * float(np.sum(w * u**2))
        lhs3 = float(np.sum(w * (Bu - Bv) * u))
        rhs3 = float(np.sum(w * (Pu - Pv)))
        tolv = rtol * max(abs(lhs1), abs(rhs1), 1e-300)
        tolc = rtol * max(cap, 1e-300)
        tol3 = rtol * max(abs(lhs3), abs(rhs3), float(np.sum(w * Pu)) + float(np.sum(w * Pv)), 1e-300)
        m1 = lhs1 - rhs1 + tolv
        m2 = min(psi_u + tolc, Bu_u - psi_u + tolc, cap - Bu_u + tolc)
        m3 = lhs3 - rhs3 + tol3
        mins = [min(mins[0], m1), min(mins[1], m2), min(mins[2], m3)]
        if m1 < 0 or m2 < 0 or m3 < 0:
            raise PropertyViolated("capacity inequality violated", counterexample={"u": u, "v": v})
    return LemmaReport(n_samples, mins[0], mins[1], mins[2], True)


# -- studies -------------------------------------------------------------------------

def _spacetime_diff(coarse: Trajectory, fine: Trajectory, which: str) -> float:
    """L1 (of B) or L2 (of theta) space-time difference on the fine grid."""
    V = fine.theta_space
    w = V.volume_weights
    tau = fine.grid.tau
    ratio = fine.grid.M // coarse.grid.M
    if which == "B":
        A, C = fine.B_array(), coarse.B_array()
    else:
        A, C = fine.theta_array(), coarse.theta_array()
    total = 0.0
    for j in range(1, fine.grid.M + 1):
        d = A[j] - C[int(math.ceil(j / ratio))]
        total += tau * (float(np.sum(w * np.abs(d))) if which == "B" else float(np.sum(w * d**2)))
    return total if which == "B" else math.sqrt(total)


@dataclass
class ConvergenceStudy:
    M_values: list
    diff_B_L1: list
    diff_theta_L2: list
    rates_B: list
    rates_theta: list
    scheme: str
    errors: list = field(default_factory=list)
    error_rates: list = field(default_factory=list)
    monotone: bool = True

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["M", "M_fine", "diff_B_L1", "diff_theta_L2", "rate_B", "rate_theta", "error", "error_rate",
                        "decreasing"])
            for i, M in enumerate(self.M_values[:-1]):
                rb = self.rates_B[i - 1] if i >= 1 else ""
                rt = self.rates_theta[i - 1] if i >= 1 else ""
                w.writerow([M, self.M_values[i + 1], repr(self.diff_B_L1[i]), repr(self.diff_theta_L2[i]),
                            repr(rb) if rb != "" else "", repr(rt) if rt != "" else "",
                            repr(self.errors[i]) if self.errors else "",
                            repr(self.error_rates[i - 1]) if (self.error_rates and i >= 1) else "",
                            self.monotone])
        return path


def _rates(seq):
    return [math.log2(a / b) if a > 0 and b > 0 else math.nan for a, b in zip(seq, seq[1:])]


def convergence_study(bundle: CoefficientBundle, mesh: Mesh, theta0, M_list, scheme: str = "A",
                      T_final: float = 1.0, reference=None, run_kwargs=None, trajectories=None) -> ConvergenceStudy:
    """Cauchy differences between runs with M and 2M steps.

    ``reference(x, t)`` optionally supplies an exact solution; the final-time
    L2 error of each run is then reported with its observed order.
    """
    Ms = list(M_list)
    if any(b != 2 * a for a, b in zip(Ms, Ms[1:])):
        raise ValueError("M values must double")
    kw = {"with_estimates": False, "keep_problems": False}
    kw.update(run_kwargs or {})
    trajs = trajectories or [run(scheme, bundle, mesh, theta0, TimeGrid(T_final, M), **kw) for M in Ms]
    dB = [_spacetime_diff(c, f, "B") for c, f in zip(trajs, trajs[1:])]
    dT = [_spacetime_diff(c, f, "theta") for c, f in zip(trajs, trajs[1:])]
    errors = []
    if reference is not None:
        for t in trajs:
            V = t.theta_space
            exact = reference(mesh.vertices, T_final)
            diff = DiscreteField(V, t.theta_steps[-1].nodal_values - exact)
            errors.append(diff.norms()["l2_volume"])
    monotone = all(b < a for a, b in zip(dB, dB[1:])) or all(d == 0 for d in dB)
    return ConvergenceStudy(Ms, dB, dT, _rates(dB), _rates(dT), scheme, errors, _rates(errors), bool(monotone))


@dataclass
class SchemeComparison:
    M_values: list
    discrepancy: list
    ratios: list


def scheme_discrepancy(ta: Trajectory, tb: Trajectory) -> float:
    w = ta.theta_space.volume_weights
    d = ta.theta_array() - tb.theta_array()
    return float(max(math.sqrt(float(np.sum(w * di**2))) for di in d))


def compare_schemes(bundle: CoefficientBundle, mesh: Mesh, theta0, M_list, T_final: float = 1.0,
                    run_kwargs=None) -> SchemeComparison:
    """Sup-in-time L2 distance between the coupled and lagged trajectories."""
    kw = {"with_estimates": False, "keep_problems": False}
    kw.update(run_kwargs or {})
    disc = []
    for M in M_list:
        g = TimeGrid(T_final, M)
        disc.append(scheme_discrepancy(run("A", bundle, mesh, theta0, g, **kw), run("B", bundle, mesh, theta0, g, **kw)))
    ratios = [a / b if b > 0 else math.inf for a, b in zip(disc, disc[1:])]
    return SchemeComparison(list(M_list), disc, ratios)


def ball_report(traj: Trajectory) -> dict:
    """Ball checks collected from the per-step diagnostics."""
    ok = all(d.in_ball for d in traj.diagnostics)
    worst = 0.0
    for d in traj.diagnostics:
        if math.isfinite(d.radius) and d.ball_norms:
            worst = max(worst, max(d.ball_norms) / d.radius)
    return {"in_ball": bool(ok), "max_norm_over_radius": worst}


def acceptance_line(number: int, name: str, passed: bool, detail: str = "") -> str:
    return f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name}" + (f" ({detail})" if detail else "")

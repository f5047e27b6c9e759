"""One implicit time step: frozen-coefficient solves and the outer fixed points.

Scheme A freezes the coefficient argument ``u = (u1, u2)`` of the coupled
temperature/potential system, solves the resulting monotone problem
monolithically and iterates ``u -> T(u)``.  Scheme B computes the potential
once from the previous temperature and iterates on the temperature alone.

The time-derivative term is lumped: with nodal weights ``m_i = int phi_i`` it
reads ``m_i (B(theta_i) - f_i) / tau``, and frozen coefficients use the secant
capacity ``B(u_i)/u_i``, so a fixed point solves the step equation exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import CoefficientBundle, truncate
from .constants import CoercivityPair, DomainConstants
from .discretization import (
    GAMMA,
    GAMMA_N,
    MEAN_ZERO_VOLUME,
    DiscreteField,
    FunctionSpace,
    assemble_boundary_load,
    assemble_boundary_power,
    assemble_weighted_stiffness,
    boundary_power_integral,
)
from .errors import InvalidSpec, NewtonDiverged, NonCoercive, NonConvergence, SingularSystem

LINEAR_TOL = 1e-10


@dataclass(frozen=True)
class NewtonConfig:
    rtol: float = 1e-10
    atol: float = 1e-12
    max_iter: int = 50
    max_backtracks: int = 40


@dataclass(frozen=True)
class FixedPointConfig:
    tol: float = 1e-9
    max_iter: int = 200
    relaxation: float = 1.0
    norm: str = "h1-increment"
    adaptive: bool = True
    min_relaxation: float = 1.0 / 1024

    def __post_init__(self):
        if not 0 < self.relaxation <= 1:
            raise ValueError("relaxation must lie in (0, 1]")
        if self.norm not in ("h1-increment", "l2-increment"):
            raise ValueError(f"unknown increment norm {self.norm!r}")


@dataclass(eq=False)
class StepProblem:
    """Data of one step: ``f = B(theta_prev)`` nodally and boundary source ``H``."""

    f: np.ndarray
    H: object
    tau: float
    bundle: CoefficientBundle
    theta_space: FunctionSpace
    phi_space: FunctionSpace
    theta_prev: np.ndarray | None = None
    time: float = 0.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        self.f = np.asarray(self.f.nodal_values if isinstance(self.f, DiscreteField) else self.f,
                            dtype=float)
        if self.f.size != self.theta_space.dof_count:
            raise ValueError("f must live on the temperature space")
        if self.phi_space.constraint not in ("mean-zero-volume", "mean-zero-boundary"):
            raise ValueError("the potential space needs a mean-zero constraint")
        if self.theta_prev is not None:
            self.theta_prev = np.asarray(self.theta_prev, dtype=float)
        if not self.mesh.has_tag(GAMMA_N) and np.any(self.bundle.g(self.mesh.bqp_points) != 0):
            raise InvalidSpec("surface current given but Gamma_N is empty")

    @classmethod
    def from_previous(cls, theta_prev, H, tau, bundle, theta_space, phi_space, time=0.0) -> "StepProblem":
        prev = np.asarray(theta_prev.nodal_values if isinstance(theta_prev, DiscreteField) else theta_prev,
                          dtype=float)
        f = bundle.b.antiderivative(theta_space.mesh.vertices, prev)
        return cls(f, H, tau, bundle, theta_space, phi_space, prev, time)

    @property
    def mesh(self):
        return self.theta_space.mesh

    @cached_property
    def lumped(self) -> np.ndarray:
        return self.theta_space.volume_weights

    @cached_property
    def load_H(self) -> np.ndarray:
        return assemble_boundary_load(self.theta_space, self.H, GAMMA)

    @cached_property
    def load_g(self) -> np.ndarray:
        if not self.mesh.has_tag(GAMMA_N):
            return np.zeros(self.theta_space.dof_count)
        return assemble_boundary_load(self.theta_space, self.bundle.g, GAMMA_N)

    @cached_property
    def constraint(self) -> np.ndarray:
        return self.phi_space.constraint_vector()

    @cached_property
    def H_at_bqp(self) -> np.ndarray:
        H = self.H
        pts = self.mesh.bqp_points
        vals = H(pts) if callable(H) else np.asarray(H, dtype=float)
        return np.broadcast_to(vals, pts.shape[:-1])

    @cached_property
    def state_independent(self) -> bool:
        """True when the frozen problem does not depend on the coefficient argument."""
        b = self.bundle
        consts = all(getattr(b, n).is_constant for n in ("b", "k", "sigma", "alpha_S", "Pi", "gamma"))
        return consts and b.truncation == 0

    def data_norms(self) -> dict:
        """Lumped ``||f||^2``, ``||H||^{l'}`` on Gamma and ``||g||`` on Gamma_N."""
        ell = self.bundle.ell
        ellc = ell / (ell - 1)
        mesh = self.mesh
        mask = mesh.facet_mask(GAMMA)
        Hp = float(np.sum(mesh.bqp_weights[mask] * np.abs(self.H_at_bqp[mask]) ** ellc)) if mask.any() else 0.0
        maskn = mesh.facet_mask(GAMMA_N)
        if maskn.any():
            gq = self.bundle.g(mesh.bqp_points)[maskn]
            g2 = float(np.sum(mesh.bqp_weights[maskn] * gq**2))
        else:
            g2 = 0.0
        return {"f_norm_sq": float(np.sum(self.lumped * self.f**2)), "H_norm_pow": Hp,
                "g_norm": math.sqrt(g2)}


@dataclass
class StepSolution:
    theta: DiscreteField
    phi: DiscreteField
    outer_iterations: int
    newton_iterations_total: int
    residual_theta: float
    residual_phi: float
    energy_terms: dict = field(default_factory=dict)
    in_ball: bool = True
    converged: bool = True
    increments: list = field(default_factory=list)
    ball_norms: list = field(default_factory=list)
    radius: float = math.inf
    multiplier: float = 0.0
    relaxation_final: float = 1.0


# -- frozen operators --------------------------------------------------------------

@dataclass(eq=False)
class FrozenCoefficients:
    """Coefficients sampled at quadrature points for a fixed argument ``(u1, u2)``."""

    problem: StepProblem
    u1: np.ndarray
    u2: np.ndarray

    @cached_property
    def qp(self):
        p = self.problem
        b = p.bundle
        V = p.theta_space
        x = V.mesh.qp_points
        e = V.at_qp(self.u1)
        d = V.at_qp(self.u2)
        k, sig, al, Pi = b.k(x, e), b.sigma(x, e), b.alpha_S(x, e), b.Pi(x, e)
        T = truncate(b.truncation, d)
        return {"a": k + T * al * sig, "F": Pi + T, "sigma": sig, "alpha": al}

    @cached_property
    def bbar(self) -> np.ndarray:
        p = self.problem
        return p.bundle.b.secant(p.mesh.vertices, self.u1)

    @cached_property
    def gamma_bqp(self) -> np.ndarray:
        p = self.problem
        e = p.theta_space.at_bqp(self.u1)
        return p.bundle.gamma(p.mesh.bqp_points, e)

    def check_coercive(self, coupled: bool = True):
        q = self.qp
        if not np.all(q["a"] > 0):
            raise NonCoercive(f"effective conductivity not positive (min {q['a'].min():.3g})")
        if coupled:
            det = q["a"] * q["sigma"] - q["sigma"] ** 2 * (q["F"] + q["alpha"]) ** 2 / 4
            if not np.all(det > 0):
                raise NonCoercive("frozen coupled form is not coercive at some quadrature point")

    def stiffness(self, name: str):
        q = self.qp
        V = self.problem.theta_space
        weights = {"a": q["a"], "sigmaF": q["sigma"] * q["F"], "sigma": q["sigma"],
                   "sigmaalpha": q["sigma"] * q["alpha"]}[name]
        return assemble_weighted_stiffness(V, weights, allow_nonpositive=True).matrix

    def mass_diag(self) -> np.ndarray:
        p = self.problem
        return p.lumped * self.bbar / p.tau


def _solve(A, rhs):
    try:
        x = spla.spsolve(A.tocsc(), rhs)
    except RuntimeError as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystem("linear solve produced non-finite values")
    return x


def _newton(residual_jac, z0, cfg: NewtonConfig, ref_scale: float):
    """Damped Newton on ``R(z) = 0``; returns ``(z, iterations, residual_inf)``."""
    z = np.array(z0, dtype=float)
    R, J = residual_jac(z)
    norm = float(np.max(np.abs(R))) if R.size else 0.0
    target = cfg.atol + cfg.rtol * max(ref_scale, norm)
    it = 0
    while norm > target:
        if it >= cfg.max_iter:
            raise NewtonDiverged(f"Newton did not converge in {cfg.max_iter} iterations", norm)
        dz = _solve(J, -R)
        step = 1.0
        for _ in range(cfg.max_backtracks):
            z_try = z + step * dz
            R_try, J_try = residual_jac(z_try)
            n_try = float(np.max(np.abs(R_try)))
            if n_try <= (1 - 1e-4 * step) * norm or n_try <= target:
                break
            step *= 0.5
        else:
            if n_try > norm:
                raise NewtonDiverged("line search failed to reduce the residual", norm)
        z, R, J, norm = z_try, R_try, J_try, n_try
        it += 1
    return z, it, norm


def _phi_system(problem: StepProblem, sigma_q, sa_q, theta_src):
    V = problem.theta_space
    Ks = assemble_weighted_stiffness(V, sigma_q, allow_nonpositive=True).matrix
    Ksa = assemble_weighted_stiffness(V, sa_q, allow_nonpositive=True).matrix
    c = problem.constraint
    n = V.dof_count
    A = sp.bmat([[Ks, sp.csr_matrix(c[:, None])], [sp.csr_matrix(c[None, :]), None]], format="csc")
    rhs = np.concatenate([problem.load_g - Ksa @ theta_src, [0.0]])
    return A, rhs, Ks, Ksa


def _solve_phi(problem: StepProblem, theta_src: np.ndarray):
    """Potential for the temperature ``theta_src`` with coefficients at ``theta_src``."""
    b = problem.bundle
    V = problem.theta_space
    x = V.mesh.qp_points
    e = V.at_qp(theta_src)
    sig = b.sigma(x, e)
    if not np.all(sig > 0):
        raise NonCoercive("electrical conductivity not positive")
    A, rhs, _, _ = _phi_system(problem, sig, sig * b.alpha_S(x, e), theta_src)
    sol = _solve(A, rhs)
    return sol[:-1], float(sol[-1])


def solve_phi_given(theta_source, problem: StepProblem) -> DiscreteField:
    """Mean-zero potential driven by the temperature gradient and the surface current."""
    src = theta_source.nodal_values if isinstance(theta_source, DiscreteField) else np.asarray(theta_source)
    phi, _ = _solve_phi(problem, src)
    return DiscreteField(problem.phi_space, phi)


def _theta_newton(problem: StepProblem, frozen: FrozenCoefficients, phi: np.ndarray, theta0,
                  cfg: NewtonConfig):
    frozen.check_coercive(coupled=False)
    A = sp.diags(frozen.mass_diag()) + frozen.stiffness("a")
    rhs = problem.lumped * problem.f / problem.tau + problem.load_H - frozen.stiffness("sigmaF") @ phi
    gam = frozen.gamma_bqp
    ell = problem.bundle.ell
    V = problem.theta_space

    def rj(z):
        r, J = assemble_boundary_power(V, gam, z, ell)
        return A @ z + r - rhs, (A + J).tocsc()

    scale = float(np.max(np.abs(rhs))) if rhs.size else 1.0
    return _newton(rj, theta0, cfg, scale)


def solve_theta_given(u, phi, problem: StepProblem, newton_cfg: NewtonConfig = NewtonConfig()) -> DiscreteField:
    """Temperature for frozen coefficient argument ``u`` and given potential ``phi``."""
    uv = u.nodal_values if isinstance(u, DiscreteField) else np.asarray(u, float)
    pv = phi.nodal_values if isinstance(phi, DiscreteField) else np.asarray(phi, float)
    frozen = FrozenCoefficients(problem, uv, pv)
    theta, _, _ = _theta_newton(problem, frozen, pv, uv, newton_cfg)
    return DiscreteField(problem.theta_space, theta)


def _coupled_newton(problem: StepProblem, frozen: FrozenCoefficients, z0, cfg: NewtonConfig):
    frozen.check_coercive(coupled=True)
    n = problem.theta_space.dof_count
    A = (sp.diags(frozen.mass_diag()) + frozen.stiffness("a")).tocsr()
    KsF = frozen.stiffness("sigmaF")
    Ks = frozen.stiffness("sigma")
    Ksa = frozen.stiffness("sigmaalpha")
    c = problem.constraint
    ccol = sp.csr_matrix(c[:, None])
    b1 = problem.lumped * problem.f / problem.tau + problem.load_H
    b2 = problem.load_g
    gam = frozen.gamma_bqp
    ell = problem.bundle.ell
    V = problem.theta_space

    def rj(z):
        th, ph, lam = z[:n], z[n:2 * n], z[2 * n]
        r, J = assemble_boundary_power(V, gam, th, ell)
        R = np.concatenate([A @ th + r + KsF @ ph - b1, Ksa @ th + Ks @ ph + c * lam - b2, [c @ ph]])
        Jac = sp.bmat([[A + J, KsF, None], [Ksa, Ks, ccol], [None, ccol.T, None]], format="csc")
        return R, Jac

    scale = max(float(np.max(np.abs(b1))), float(np.max(np.abs(b2))), 1e-300)
    return _newton(rj, z0, cfg, scale)


def solve_coupled_frozen(u, problem: StepProblem, newton_cfg: NewtonConfig = NewtonConfig()):
    """Coupled temperature/potential solve for the frozen argument ``u = (u1, u2)``."""
    u1, u2 = (v.nodal_values if isinstance(v, DiscreteField) else np.asarray(v, float) for v in u)
    frozen = FrozenCoefficients(problem, u1, u2)
    n = problem.theta_space.dof_count
    z, _, _ = _coupled_newton(problem, frozen, np.concatenate([u1, u2, [0.0]]), newton_cfg)
    return DiscreteField(problem.theta_space, z[:n]), DiscreteField(problem.phi_space, z[n:2 * n])


def solve_coupled_schur(u, problem: StepProblem):
    """Dense Schur-complement elimination of the potential (linear boundary term only)."""
    if problem.bundle.ell != 2:
        raise ValueError("the elimination path handles the linear case ell = 2 only")
    u1, u2 = (v.nodal_values if isinstance(v, DiscreteField) else np.asarray(v, float) for v in u)
    frozen = FrozenCoefficients(problem, u1, u2)
    n = problem.theta_space.dof_count
    A = (sp.diags(frozen.mass_diag()) + frozen.stiffness("a")).toarray()
    _, J = assemble_boundary_power(problem.theta_space, frozen.gamma_bqp, np.zeros(n), 2.0)
    A = A + J.toarray()
    KsF = frozen.stiffness("sigmaF").toarray()
    Ks = frozen.stiffness("sigma").toarray()
    Ksa = frozen.stiffness("sigmaalpha").toarray()
    c = problem.constraint
    P = np.block([[Ks, c[:, None]], [c[None, :], np.zeros((1, 1))]])
    rhs_g = np.concatenate([problem.load_g, [0.0]])
    rhs_t = np.vstack([Ksa, np.zeros((1, n))])
    sol = sla.solve(P, np.column_stack([rhs_g, rhs_t]))
    phi_g, phi_t = sol[:n, 0], sol[:n, 1:]
    b1 = problem.lumped * problem.f / problem.tau + problem.load_H
    theta = sla.solve(A - KsF @ phi_t, b1 - KsF @ phi_g)
    phi = phi_g - phi_t @ theta
    return DiscreteField(problem.theta_space, theta), DiscreteField(problem.phi_space, phi)


# -- norms -------------------------------------------------------------------------

def _grad_sq(space: FunctionSpace, v) -> float:
    g = space.cell_gradients(v)
    return float(np.sum(space.mesh.cell_measure * (g**2).sum(axis=1)))


def _lumped_sq(space: FunctionSpace, v) -> float:
    return float(np.sum(space.volume_weights * np.asarray(v) ** 2))


def _boundary_ell(space: FunctionSpace, v, ell) -> float:
    return boundary_power_integral(space, 1.0, v, ell) ** (1.0 / ell)


def h1_norm(space: FunctionSpace, v) -> float:
    """``sqrt(||v||^2 + ||grad v||^2)`` with the lumped volume norm."""
    return math.sqrt(_lumped_sq(space, v) + _grad_sq(space, v))


def ball_norm_a(problem: StepProblem, theta, phi) -> float:
    V = problem.theta_space
    return math.sqrt(_grad_sq(V, phi)) + math.sqrt(_grad_sq(V, theta)) + _boundary_ell(V, theta, problem.bundle.ell)


def _increment(space, du, norm):
    if norm == "l2-increment":
        return math.sqrt(_lumped_sq(space, du))
    return h1_norm(space, du)


# -- residuals ---------------------------------------------------------------------

def step_residuals(theta, phi, problem: StepProblem, scheme: str = "a") -> dict:
    """Nonlinear step residuals with coefficients evaluated at the solution.

    For scheme ``b`` the potential equation uses the previous temperature.
    The potential residual is measured modulo the constraint direction.
    """
    th = theta.nodal_values if isinstance(theta, DiscreteField) else np.asarray(theta, float)
    ph = phi.nodal_values if isinstance(phi, DiscreteField) else np.asarray(phi, float)
    p = problem
    V = p.theta_space
    frozen = FrozenCoefficients(p, th, ph)
    Bth = p.bundle.b.antiderivative(p.mesh.vertices, th)
    r, _ = assemble_boundary_power(V, frozen.gamma_bqp, th, p.bundle.ell)
    rhs_t = p.lumped * p.f / p.tau + p.load_H
    R_t = p.lumped * Bth / p.tau + frozen.stiffness("a") @ th + frozen.stiffness("sigmaF") @ ph + r - rhs_t
    if scheme == "b":
        if p.theta_prev is None:
            raise ValueError("scheme b residual needs the previous temperature")
        src = p.theta_prev
    else:
        src = th
    fr_phi = FrozenCoefficients(p, src, ph)
    R_p = fr_phi.stiffness("sigma") @ ph + fr_phi.stiffness("sigmaalpha") @ src - p.load_g
    c = p.constraint
    R_p = R_p - (R_p @ c) / (c @ c) * c
    scale_t = max(float(np.max(np.abs(rhs_t))), float(np.max(np.abs(p.lumped * Bth / p.tau))), 1e-300)
    scale_p = max(float(np.max(np.abs(p.load_g))),
                  float(np.max(np.abs(fr_phi.stiffness("sigmaalpha") @ src))), 1e-300)
    return {
        "R_theta": R_t, "R_phi": R_p,
        "residual_theta": float(np.max(np.abs(R_t))), "residual_phi": float(np.max(np.abs(R_p))),
        "scale_theta": scale_t, "scale_phi": scale_p,
        "constraint": float(c @ ph),
    }


# -- per-step energy terms -----------------------------------------------------------

@dataclass(frozen=True)
class EstimateContext:
    """Bounds and constants needed to evaluate the one-step a-priori estimate."""

    bounds: object
    pair: CoercivityPair
    domain: DomainConstants
    radius: float = math.inf


def coupled_step_energy(problem: StepProblem, theta, phi, ctx: EstimateContext) -> dict:
    from .constants import rhs_functional

    V = problem.theta_space
    bnd = ctx.bounds
    ell = problem.bundle.ell
    ellc = ell / (ell - 1)
    norms = problem.data_norms()
    terms = {
        "mass": bnd.b_lo / (2 * problem.tau) * _lumped_sq(V, theta),
        "grad_theta": ctx.pair.L1 * _grad_sq(V, theta),
        "grad_phi": ctx.pair.L2 / 2 * _grad_sq(V, phi),
        "boundary": bnd.gamma_lo / ellc * boundary_power_integral(V, 1.0, theta, ell),
    }
    terms["lhs"] = sum(terms.values())
    terms["rhs"] = rhs_functional(norms["f_norm_sq"], norms["H_norm_pow"], bnd, ctx.domain, ctx.pair.L2,
                                  problem.tau, ell, g_norm_sq=norms["g_norm"] ** 2)
    return terms


def lagged_step_energy(problem: StepProblem, theta, phi, ctx: EstimateContext) -> dict:
    """Terms of the temperature estimate with the potential lagged one step.

    The potential is controlled in the conductivity of the previous step, so
    its bound is transferred to the current conductivity at the cost of the
    factor ``sigma_hi / sigma_lo``.
    """
    V = problem.theta_space
    bnd = ctx.bounds
    ell = problem.bundle.ell
    ellc = ell / (ell - 1)
    a = bnd.a_lo
    norms = problem.data_norms()
    u = problem.theta_prev if problem.theta_prev is not None else np.zeros(V.dof_count)
    lhs = {
        "mass": bnd.b_lo / (2 * problem.tau) * _lumped_sq(V, theta),
        "grad_theta": a / 2 * _grad_sq(V, theta),
        "boundary": bnd.gamma_lo / ellc * boundary_power_integral(V, 1.0, theta, ell),
    }
    lag = bnd.sigma_hi / bnd.sigma_lo
    rhs = (norms["f_norm_sq"] / (2 * problem.tau * bnd.b_lo)
           + norms["H_norm_pow"] / (ellc * bnd.gamma_lo ** (1 / (ell - 1)))
           + lag * bnd.F_hi**2 * bnd.sigma_hi / a * (bnd.sigma_hi * bnd.alpha_hi**2 * _grad_sq(V, u)
                                                     + ctx.domain.product**2 / bnd.sigma_lo * norms["g_norm"] ** 2))
    out = dict(lhs)
    out["lhs"] = sum(lhs.values())
    out["rhs"] = rhs
    return out


# -- outer fixed points ------------------------------------------------------------

def fixed_point_scheme_a(problem: StepProblem, init, fp_cfg: FixedPointConfig = FixedPointConfig(),
                         radius: float = math.inf, newton_cfg: NewtonConfig = NewtonConfig(),
                         estimates: EstimateContext | None = None) -> StepSolution:
    """Iterate the coupled frozen solve to a fixed point in ``(theta, phi)``."""
    V = problem.theta_space
    n = V.dof_count
    u1, u2 = (np.array(v.nodal_values if isinstance(v, DiscreteField) else v, dtype=float) for v in init)
    omega = fp_cfg.relaxation
    increments, ball, newton_total = [], [], 0
    in_ball = True
    prev_inc = math.inf
    best = None
    lam = 0.0
    evaluations = 0
    converged = False
    z = np.concatenate([u1, u2, [0.0]])
    while evaluations < fp_cfg.max_iter:
        frozen = FrozenCoefficients(problem, u1, u2)
        z, its, _ = _coupled_newton(problem, frozen, z, newton_cfg)
        evaluations += 1
        newton_total += its
        t1, t2, lam = z[:n], z[n:2 * n], float(z[2 * n])
        bn = ball_norm_a(problem, t1, t2)
        ball.append(bn)
        if ball_norm_a(problem, u1, u2) <= radius and bn > radius * (1 + 1e-8):
            in_ball = False
        if problem.state_independent:
            u1, u2 = t1, t2
            increments.append(0.0)
            converged = True
            break
        inc = math.sqrt(_increment(V, t1 - u1, fp_cfg.norm) ** 2 + _increment(V, t2 - u2, fp_cfg.norm) ** 2)
        increments.append(inc)
        size = math.sqrt(h1_norm(V, t1) ** 2 + h1_norm(V, t2) ** 2)
        if best is None or inc < best[0]:
            best = (inc, t1.copy(), t2.copy())
        if inc <= fp_cfg.tol * max(1.0, size):
            u1, u2 = t1, t2
            converged = True
            evaluations -= 1 if evaluations > 1 else 0
            break
        if fp_cfg.adaptive and inc > prev_inc:
            omega = max(omega / 2, fp_cfg.min_relaxation)
        prev_inc = inc
        u1 = u1 + omega * (t1 - u1)
        u2 = u2 + omega * (t2 - u2)
        z = np.concatenate([u1, u2, [lam]])
    if not converged:
        _, t1, t2 = best
        sol = _finish(problem, t1, t2, "a", evaluations, newton_total, increments, ball, in_ball, radius,
                      omega, estimates, converged=False)
        raise NonConvergence(f"outer fixed point did not converge in {fp_cfg.max_iter} iterations",
                             best=sol, diagnostics={"increments": increments, "relaxation": omega})
    # the potential is recomputed from the converged temperature so that its
    # equation holds with coefficients at the solution up to round-off
    phi, lam = _solve_phi(problem, u1)
    return _finish(problem, u1, phi, "a", evaluations, newton_total, increments, ball, in_ball, radius,
                   omega, estimates, multiplier=lam)


def fixed_point_scheme_b(theta_prev, problem: StepProblem, fp_cfg: FixedPointConfig = FixedPointConfig(),
                         radius: float = math.inf, newton_cfg: NewtonConfig = NewtonConfig(),
                         estimates: EstimateContext | None = None, init=None) -> StepSolution:
    """Lagged potential from ``theta_prev``, then a fixed point over the temperature."""
    V = problem.theta_space
    prev = np.asarray(theta_prev.nodal_values if isinstance(theta_prev, DiscreteField) else theta_prev, float)
    if problem.theta_prev is None:
        problem.theta_prev = prev
    phi, lam = _solve_phi(problem, prev)
    u = prev.copy() if init is None else np.array(init.nodal_values if isinstance(init, DiscreteField) else init,
                                                   dtype=float)
    omega = fp_cfg.relaxation
    increments, ball, newton_total = [], [], 0
    in_ball = True
    prev_inc = math.inf
    best = None
    evaluations = 0
    converged = False
    theta = u.copy()
    while evaluations < fp_cfg.max_iter:
        frozen = FrozenCoefficients(problem, u, phi)
        theta, its, _ = _theta_newton(problem, frozen, phi, theta, newton_cfg)
        evaluations += 1
        newton_total += its
        bn = h1_norm(V, theta)
        ball.append(bn)
        if h1_norm(V, u) <= radius and bn > radius * (1 + 1e-8):
            in_ball = False
        if problem.state_independent:
            u = theta
            increments.append(0.0)
            converged = True
            break
        inc = _increment(V, theta - u, fp_cfg.norm)
        increments.append(inc)
        if best is None or inc < best[0]:
            best = (inc, theta.copy())
        if inc <= fp_cfg.tol * max(1.0, h1_norm(V, theta)):
            u = theta
            converged = True
            evaluations -= 1 if evaluations > 1 else 0
            break
        if fp_cfg.adaptive and inc > prev_inc:
            omega = max(omega / 2, fp_cfg.min_relaxation)
        prev_inc = inc
        u = u + omega * (theta - u)
    if not converged:
        sol = _finish(problem, best[1], phi, "b", evaluations, newton_total, increments, ball, in_ball, radius,
                      omega, estimates, converged=False, multiplier=lam)
        raise NonConvergence(f"outer fixed point did not converge in {fp_cfg.max_iter} iterations",
                             best=sol, diagnostics={"increments": increments, "relaxation": omega})
    return _finish(problem, u, phi, "b", evaluations, newton_total, increments, ball, in_ball, radius,
                   omega, estimates, multiplier=lam)


def _finish(problem, theta, phi, scheme, outer, newton_total, increments, ball, in_ball, radius, omega,
            estimates, converged=True, multiplier=0.0) -> StepSolution:
    res = step_residuals(theta, phi, problem, scheme)
    energy = {}
    if estimates is not None:
        energy = (coupled_step_energy if scheme == "a" else lagged_step_energy)(problem, theta, phi, estimates)
    return StepSolution(
        theta=DiscreteField(problem.theta_space, theta),
        phi=DiscreteField(problem.phi_space, phi),
        outer_iterations=max(outer, 1),
        newton_iterations_total=newton_total,
        residual_theta=res["residual_theta"],
        residual_phi=res["residual_phi"],
        energy_terms=energy,
        in_ball=in_ball,
        converged=converged,
        increments=increments,
        ball_norms=ball,
        radius=radius,
        multiplier=multiplier,
        relaxation_final=omega,
    )

"""Quantitative constants: Poincare/trace constants, coercivity pairs,
smallness verdicts, the data functional and invariant-ball radii."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import BoundsReport
from .discretization import (
    GAMMA,
    GAMMA_N,
    DomainSpec,
    FunctionSpace,
    Mesh,
    assemble_boundary_mass,
    assemble_weighted_mass,
    assemble_weighted_stiffness,
    build_mesh,
)
from .errors import EigenSolveFailure, NeverHolds, NotCoercive, SmallnessViolated, StepTooLarge, UnsupportedDomain

ANALYTIC = "analytic-bound"
DISCRETE = "discrete-eigenvalue"
USER = "user-supplied"

SPLIT_A = "split-A"
SPLIT_B = "split-B"
SCHEME_B = "scheme-B"

DENSE_LIMIT = 1500


@dataclass(frozen=True)
class DomainConstants:
    P2: float
    K2: float
    source: str = DISCRETE

    def __post_init__(self):
        if not (self.P2 > 0 and self.K2 > 0):
            raise ValueError("domain constants must be strictly positive")

    @property
    def product(self) -> float:
        """``K2 (P2 + 1)``: bounds the boundary L2 norm by the gradient norm for mean-zero fields."""
        return self.K2 * (self.P2 + 1.0)


def poincare_constant(domain, mode: str = "analytic", resolution=64, constraint: str = "volume") -> float:
    """Bound ``P`` with ``||v|| <= P ||grad v||`` for mean-zero ``v``.

    ``analytic`` returns ``diam/pi`` (convex domains); ``discrete`` returns
    ``1/sqrt(lambda_1)`` of the P1 Neumann Laplacian on the given mesh (or on a
    uniform mesh of ``resolution`` cells per axis when a DomainSpec is given).
    """
    if isinstance(domain, Mesh):
        mesh = domain
        spec = mesh.domain
    elif isinstance(domain, DomainSpec):
        spec = domain
        mesh = None
    else:
        raise UnsupportedDomain(f"expected a DomainSpec or Mesh, got {type(domain).__name__}")
    if spec.dim not in (1, 2):
        raise UnsupportedDomain("only intervals and rectangles are supported")
    if mode == "analytic":
        return spec.diameter / math.pi
    if mode != "discrete":
        raise ValueError(f"unknown mode {mode!r}")
    if mesh is None:
        mesh = build_mesh(spec, resolution)
    lam = _first_nonzero_eigenvalue(mesh, constraint)
    return 1.0 / math.sqrt(lam)


def _first_nonzero_eigenvalue(mesh: Mesh, constraint: str) -> float:
    V = FunctionSpace(mesh)
    K = assemble_weighted_stiffness(V).matrix
    M = assemble_weighted_mass(V).matrix
    n = mesh.n_vertices
    if constraint == "boundary":
        # restrict to the hyperplane of zero boundary mean
        c = V.boundary_weights
        Q = sla.null_space(c[None, :])
        Kr = Q.T @ K.toarray() @ Q
        Mr = Q.T @ M.toarray() @ Q
        try:
            vals = sla.eigh(Kr, Mr, eigvals_only=True, subset_by_index=[0, 0])
        except (sla.LinAlgError, ValueError) as exc:
            raise EigenSolveFailure(str(exc)) from exc
        return float(vals[0])
    if constraint != "volume":
        raise ValueError(f"unknown constraint {constraint!r}")
    # the constants are M-orthogonal to every other eigenvector, so the second
    # Neumann eigenvalue is the volume mean-zero minimum
    try:
        if n <= DENSE_LIMIT:
            vals = sla.eigh(K.toarray(), M.toarray(), eigvals_only=True, subset_by_index=[0, 1])
        else:
            vals = np.sort(spla.eigsh(K.tocsc(), k=2, M=M.tocsc(), sigma=-1.0, which="LM",
                                      return_eigenvectors=False))
    except (sla.LinAlgError, spla.ArpackError, ValueError) as exc:
        raise EigenSolveFailure(str(exc)) from exc
    return float(vals[1])


def trace_constant(mesh: Mesh, tags=None) -> float:
    """Discrete trace constant ``K`` with ``||v||_part <= K (||v|| + ||grad v||)``.

    Computed as ``sqrt(lambda_max)`` of boundary mass against the full H1 Gram
    matrix, which bounds the smallest admissible ``K`` from above.  ``tags``
    defaults to the Neumann part, falling back to Gamma and then to the whole
    boundary.
    """
    if tags is None:
        tags = GAMMA_N if mesh.has_tag(GAMMA_N) else (GAMMA if mesh.has_tag(GAMMA) else None)
    if mesh.part_measure(tags) <= 0:
        raise EigenSolveFailure("selected boundary part is empty")
    V = FunctionSpace(mesh)
    Mb = assemble_boundary_mass(V, 1.0, tags if tags is not None else (GAMMA, GAMMA_N)).matrix
    G = (assemble_weighted_mass(V).matrix + assemble_weighted_stiffness(V).matrix)
    try:
        if mesh.n_vertices <= DENSE_LIMIT:
            lam = sla.eigh(Mb.toarray(), G.toarray(), eigvals_only=True,
                           subset_by_index=[mesh.n_vertices - 1, mesh.n_vertices - 1])[0]
        else:
            lam = spla.eigsh(Mb.tocsc(), k=1, M=G.tocsc(), which="LA", return_eigenvectors=False)[0]
    except (sla.LinAlgError, spla.ArpackError, ValueError) as exc:
        raise EigenSolveFailure(str(exc)) from exc
    if not lam > 0:
        raise EigenSolveFailure(f"nonpositive trace eigenvalue {lam}")
    return float(math.sqrt(lam))


def domain_constants(mesh: Mesh, constraint: str = "volume", P2: float | None = None,
                     K2: float | None = None) -> DomainConstants:
    """Discrete constants on ``mesh``, with optional user overrides."""
    source = USER if (P2 is not None and K2 is not None) else DISCRETE
    if P2 is None:
        P2 = poincare_constant(mesh, "discrete", constraint=constraint)
    if K2 is None:
        K2 = trace_constant(mesh)
    return DomainConstants(float(P2), float(K2), source)


# -- coercivity -------------------------------------------------------------------

@dataclass(frozen=True)
class CoercivityPair:
    L1: float
    L2: float
    variant: str
    epsilon: float = 1.0


def coercivity_constants(bounds: BoundsReport, epsilon: float = 1.0, variant: str = SPLIT_A) -> CoercivityPair:
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    a, s_lo, s_hi = bounds.a_lo, bounds.sigma_lo, bounds.sigma_hi
    c = bounds.F_hi + bounds.alpha_hi
    if variant == SPLIT_A:
        L1 = a - epsilon * s_hi * c / 2
        L2 = s_lo - s_hi * c / (2 * epsilon)
    elif variant == SPLIT_B:
        L1 = a - epsilon * math.sqrt(s_hi) * c / 2
        L2 = s_lo * (1 - math.sqrt(s_hi) * c / (2 * epsilon))
    elif variant == SCHEME_B:
        L1 = a
        L2 = math.inf if bounds.F_hi == 0 else a * s_lo / (2 * bounds.F_hi * s_hi)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    if not (L1 > 0 and L2 > 0):
        raise NotCoercive(f"{variant} with epsilon={epsilon:g} gives L1={L1:.4g}, L2={L2:.4g}")
    return CoercivityPair(float(L1), float(L2), variant, float(epsilon))


def coercivity_two_parameter(bounds: BoundsReport, eps1: float, eps2: float) -> CoercivityPair:
    """Young splitting with separate weights for the two coupling terms."""
    a, s_lo, s_hi = bounds.a_lo, bounds.sigma_lo, bounds.sigma_hi
    F, al = bounds.F_hi, bounds.alpha_hi
    L1 = a - s_hi * (eps1 * F + eps2 * al) / 2
    L2 = s_lo - s_hi * (F / eps1 + al / eps2) / 2
    if not (L1 > 0 and L2 > 0):
        raise NotCoercive(f"eps=({eps1:g}, {eps2:g}) gives L1={L1:.4g}, L2={L2:.4g}")
    return CoercivityPair(float(L1), float(L2), "split-A-two-parameter", float(eps1))


# -- smallness --------------------------------------------------------------------

@dataclass(frozen=True)
class Condition:
    holds: bool
    lhs: float
    rhs: float
    margin: float

    @classmethod
    def compare(cls, lhs: float, rhs: float) -> "Condition":
        margin = float(lhs - rhs)
        return cls(bool(margin > 0), float(lhs), float(rhs), margin)


CONDITION_NAMES = ("akM", "sss1", "sss2", "sss3", "afg", "sfg", "asfg")


@dataclass(frozen=True)
class SmallnessVerdict:
    akM: Condition
    sss1: Condition
    sss2: Condition
    sss3: Condition
    afg: Condition
    sfg: Condition
    asfg: Condition
    epsilon_used: float
    epsilon_sfg: float = 1.0

    def items(self):
        return [(n, getattr(self, n)) for n in CONDITION_NAMES]

    @property
    def theorem_holds(self) -> bool:
        """Truncation condition plus at least one of the three alternatives."""
        return self.akM.holds and (self.sss1.holds or self.sss2.holds or self.sss3.holds)


def _two_sided(c1: Condition, c2: Condition) -> Condition:
    binding = c1 if c1.margin <= c2.margin else c2
    return Condition(c1.holds and c2.holds, binding.lhs, binding.rhs, binding.margin)


def afg_condition(bounds: BoundsReport, epsilon: float) -> Condition:
    c = bounds.F_hi + bounds.alpha_hi
    first = Condition.compare(bounds.a_lo, epsilon * bounds.sigma_hi * c / 2)
    second = Condition.compare(epsilon * bounds.sigma_lo, bounds.sigma_hi * c / 2)
    return _two_sided(first, second)


def sfg_condition(bounds: BoundsReport, epsilon: float) -> Condition:
    c = bounds.F_hi + bounds.alpha_hi
    r = math.sqrt(bounds.sigma_hi)
    first = Condition.compare(bounds.a_lo, epsilon * r * c / 2)
    second = Condition.compare(epsilon, r * c / 2)
    return _two_sided(first, second)


def optimal_epsilon(bounds: BoundsReport, which: str = "afg") -> float:
    """Geometric mean of the two admissible endpoints for epsilon."""
    if bounds.F_hi + bounds.alpha_hi == 0:
        return 1.0
    a = max(bounds.a_lo, 0.0)
    if which == "afg":
        return math.sqrt(a / bounds.sigma_lo) if a > 0 else 1.0
    if which == "sfg":
        return math.sqrt(a) if a > 0 else 1.0
    raise ValueError(which)


def check_smallness(bounds: BoundsReport, truncation: float | None = None,
                    epsilon: float | None = None) -> SmallnessVerdict:
    """Evaluate the truncation condition and all smallness alternatives."""
    if truncation is not None:
        bounds = bounds.with_truncation(truncation)
    M = bounds.truncation
    k, s_lo, s_hi, al, Pi = bounds.k_lo, bounds.sigma_lo, bounds.sigma_hi, bounds.alpha_hi, bounds.Pi_hi
    a = k - M * al * s_hi
    akM = Condition.compare(k, M * al * s_hi)
    sss1 = Condition.compare(4 * a * s_lo, s_hi**2 * (Pi + M + al) ** 2)
    sss2 = Condition.compare(4 * a, s_hi * (Pi + M + al) ** 2)
    sss3 = Condition.compare(k, s_hi * al * (2 * Pi + 3 * M))
    eps_a = optimal_epsilon(bounds, "afg") if epsilon is None else float(epsilon)
    eps_s = optimal_epsilon(bounds, "sfg") if epsilon is None else float(epsilon)
    afg = afg_condition(bounds, eps_a)
    sfg = sfg_condition(bounds, eps_s)
    asfg = Condition.compare(bounds.a_lo, 2 * s_hi * al * bounds.F_hi)
    return SmallnessVerdict(akM, sss1, sss2, sss3, afg, sfg, asfg, eps_a, eps_s)


_CONDITION_FUNCS = {
    "sss1": lambda b: check_smallness(b).sss1.margin,
    "sss2": lambda b: check_smallness(b).sss2.margin,
    "sss3": lambda b: check_smallness(b).sss3.margin,
}


def max_truncation(bounds: BoundsReport, condition: str = "sss3", tol: float = 1e-9) -> float:
    """Supremum of truncation levels for which ``condition`` and akM hold.

    Each condition is monotone in the truncation level, so bisection on the
    sign of the margin applies.  Returns ``inf`` when no finite bound exists.
    """
    if condition not in _CONDITION_FUNCS:
        raise ValueError(f"condition must be one of {sorted(_CONDITION_FUNCS)}")
    margin = _CONDITION_FUNCS[condition]

    def ok(M):
        b = bounds.with_truncation(M)
        return margin(b) > 0 and b.k_lo - M * b.alpha_hi * b.sigma_hi > 0

    if not ok(0.0):
        raise NeverHolds(f"{condition} fails already without truncation")
    hi = 1.0
    while ok(hi):
        hi *= 2.0
        if hi > 1e100:
            return math.inf
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def max_truncation_sss3_closed_form(bounds: BoundsReport) -> float:
    prod = bounds.sigma_hi * bounds.alpha_hi
    if prod == 0:
        return math.inf
    return min(bounds.k_lo / prod, (bounds.k_lo / prod - 2 * bounds.Pi_hi) / 3)


# -- data functional and radii -------------------------------------------------------

def rhs_functional(f_norm_sq: float, H_norm_pow: float, bounds: BoundsReport,
                   domain_constants: DomainConstants, L2: float, tau: float, ell: float,
                   g_norm_sq: float = 0.0) -> float:
    """Data functional bounding the one-step energy of the coupled problem."""
    if not (tau > 0 and L2 > 0):
        raise ValueError("tau and L2 must be positive")
    ellc = ell / (ell - 1)
    out = f_norm_sq / (2 * tau * bounds.b_lo)
    out += H_norm_pow / (ellc * bounds.gamma_lo ** (1 / (ell - 1)))
    if g_norm_sq:
        out += domain_constants.product**2 * g_norm_sq / (2 * L2)
    return float(out)


def ball_radii(script_R: float, L1: float, L2: float, gamma_lo: float, ell: float):
    if not (L1 > 0 and L2 > 0):
        raise ValueError("L1 and L2 must be positive")
    m = min(L1, L2 / 2)
    ellc = ell / (ell - 1)
    R1 = math.sqrt(2 * script_R / m) + 1
    R2 = math.sqrt((2 / m + ellc / gamma_lo) * script_R)
    return R1, R2, max(R1, R2)


def tau_limits(bounds: BoundsReport) -> tuple[float, float]:
    """Step limits ``a_lo/b_hi`` and ``b_lo/a_lo`` used by the lagged scheme."""
    a = bounds.a_lo
    return a / bounds.b_hi, (bounds.b_lo / a if a > 0 else math.inf)


def radius_scheme_b(norms: dict, bounds: BoundsReport, domain_constants: DomainConstants,
                    tau: float, ell: float) -> float:
    """Invariant-ball radius of the lagged-potential scheme."""
    a = bounds.a_lo
    if not a > 0:
        raise SmallnessViolated("a_lo must be positive")
    factor = math.sqrt(a) - 2 * bounds.F_hi * bounds.sigma_hi * bounds.alpha_hi / math.sqrt(a)
    if not factor > 0:
        raise SmallnessViolated(f"radius factor {factor:.4g} is not positive")
    t1, t2 = tau_limits(bounds)
    if tau > t1 * (1 + 1e-12):
        raise StepTooLarge(f"tau={tau:g} exceeds a_lo/b_hi={t1:g}")
    if tau > t2 * (1 + 1e-12):
        raise StepTooLarge(f"tau={tau:g} exceeds b_lo/a_lo={t2:g}")
    ellc = ell / (ell - 1)
    f2 = float(norms.get("f_norm_sq", 0.0))
    Hp = float(norms.get("H_norm_pow", 0.0))
    g = float(norms.get("g_norm", 0.0))
    rhs = math.sqrt(f2 / (tau * bounds.b_lo) + 2 * Hp / (ellc * bounds.gamma_lo ** (1 / (ell - 1))))
    rhs += 2 * bounds.F_hi * domain_constants.product * math.sqrt(
        bounds.sigma_hi / (a * bounds.sigma_lo)) * g
    return rhs / factor


@dataclass(frozen=True)
class RadiusReport:
    R_script: float
    R1: float
    R2: float
    R_ball: float
    R_schemeB: float
    tau_max: float
    tau_max_radius: float = math.inf


def radius_report(norms: dict, bounds: BoundsReport, domain_constants: DomainConstants,
                  pair: CoercivityPair, tau: float, ell: float) -> RadiusReport:
    """Both schemes' radii for one step; unavailable entries are ``nan``."""
    script = rhs_functional(norms.get("f_norm_sq", 0.0), norms.get("H_norm_pow", 0.0), bounds,
                            domain_constants, pair.L2, tau, ell,
                            g_norm_sq=norms.get("g_norm", 0.0) ** 2)
    R1, R2, R = ball_radii(script, pair.L1, pair.L2, bounds.gamma_lo, ell)
    try:
        RB = radius_scheme_b(norms, bounds, domain_constants, tau, ell)
    except (SmallnessViolated, StepTooLarge):
        RB = math.nan
    t1, t2 = tau_limits(bounds)
    return RadiusReport(script, R1, R2, R, RB, t1, t2)

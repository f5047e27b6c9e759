"""Implicit time stepping (Rothe's method) for both step schemes, interpolants
of the resulting sequence, and flux post-processing."""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coefficients import CoefficientBundle
from .constants import (
    SPLIT_A,
    SPLIT_B,
    SCHEME_B,
    DomainConstants,
    check_smallness,
    coercivity_constants,
    domain_constants,
    radius_report,
    radius_scheme_b,
    tau_limits,
)
from .discretization import (
    GAMMA_N,
    MEAN_ZERO_BOUNDARY,
    MEAN_ZERO_VOLUME,
    DiscreteField,
    FunctionSpace,
    Mesh,
    assemble_boundary_load,
    read_fields_csv,
    write_fields_csv,
)
from .elliptic import (
    EstimateContext,
    FixedPointConfig,
    NewtonConfig,
    StepProblem,
    StepSolution,
    fixed_point_scheme_a,
    fixed_point_scheme_b,
)
from .errors import (
    CurrentImbalanceWarning,
    NewtonDiverged,
    NonCoercive,
    NonConvergence,
    OutOfRange,
    SingularSystem,
    SmallnessViolated,
    SmallnessWarning,
    StepFailure,
    StepTooLarge,
)

SCHEME_A_NAME = "A"
SCHEME_B_NAME = "B"


@dataclass(frozen=True)
class TimeGrid:
    T_final: float
    M: int

    def __post_init__(self):
        if not self.T_final > 0:
            raise ValueError("T_final must be positive")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError("M must be a positive integer")
        object.__setattr__(self, "M", int(self.M))

    @property
    def tau(self) -> float:
        return self.T_final / self.M

    def node(self, m: int) -> float:
        return m * self.T_final / self.M

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.M + 1) * self.T_final / self.M

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.T_final, self.M * factor)


_AVG_NODES, _AVG_WEIGHTS = np.polynomial.legendre.leggauss(5)


def sample_h(h, grid: TimeGrid, m: int, mode: str = "right"):
    """Boundary data for step ``m``: ``h(., t_m)`` or its mean over ``(t_{m-1}, t_m]``."""
    if not 1 <= m <= grid.M:
        raise ValueError(f"step index {m} outside 1..{grid.M}")
    if mode == "right":
        t = grid.node(m)

        def hm(x):
            return np.asarray(h(x, t), dtype=float)

        return hm
    if mode == "average":
        t0, tau = grid.node(m - 1), grid.tau
        ts = t0 + 0.5 * tau * (_AVG_NODES + 1.0)
        ws = 0.5 * _AVG_WEIGHTS

        def hm(x):
            return sum(w * np.asarray(h(x, t), dtype=float) for t, w in zip(ts, ws))

        return hm
    raise ValueError(f"unknown sampling mode {mode!r}")


@dataclass
class Trajectory:
    theta_steps: list
    phi_steps: list
    diagnostics: list
    scheme: str
    grid: TimeGrid
    bundle: CoefficientBundle
    theta_space: FunctionSpace
    phi_space: FunctionSpace
    sample_mode: str = "right"
    context: EstimateContext | None = None
    problems: list = field(default_factory=list, repr=False)
    meta: dict = field(default_factory=dict)

    @property
    def mesh(self) -> Mesh:
        return self.theta_space.mesh

    @property
    def complete(self) -> bool:
        return len(self.theta_steps) == self.grid.M + 1

    @property
    def steps_done(self) -> int:
        return len(self.phi_steps)

    def theta_array(self) -> np.ndarray:
        return np.array([f.nodal_values for f in self.theta_steps])

    def phi_array(self) -> np.ndarray:
        return np.array([f.nodal_values for f in self.phi_steps]).reshape(len(self.phi_steps), -1)

    def B_array(self) -> np.ndarray:
        X = self.mesh.vertices
        return np.array([self.bundle.b.antiderivative(X, t) for t in self.theta_array()])


def _as_nodal(space: FunctionSpace, theta0) -> DiscreteField:
    if isinstance(theta0, DiscreteField):
        return theta0
    if callable(theta0):
        return space.interpolate(theta0)
    vals = np.asarray(theta0, dtype=float)
    if vals.ndim == 0:
        vals = np.full(space.dof_count, float(vals))
    return DiscreteField(space, vals)


def _spaces(mesh: Mesh, constraint: str):
    mode = {"volume": MEAN_ZERO_VOLUME, "boundary": MEAN_ZERO_BOUNDARY}.get(constraint, constraint)
    return FunctionSpace(mesh), FunctionSpace(mesh, mode)


def net_surface_current(space: FunctionSpace, g) -> tuple[float, float]:
    """``int_{Gamma_N} g`` and ``int_{Gamma_N} |g|`` (zero when there is no Neumann part)."""
    if not space.mesh.has_tag(GAMMA_N):
        return 0.0, 0.0
    load = assemble_boundary_load(space, g, GAMMA_N)
    return float(load.sum()), float(np.abs(load).sum())


def _check_current_balance(space: FunctionSpace, g, rtol: float = 1e-10):
    net, size = net_surface_current(space, g)
    if abs(net) > rtol * max(size, 1e-300) and abs(net) > 1e-300:
        warnings.warn(f"net surface current {net:.3g} is nonzero; the mean-zero potential then carries a "
                      "uniform volume source of the opposite sign", CurrentImbalanceWarning, stacklevel=4)


def _coupled_context(bundle, mesh, constraint, dconst, strict):
    bounds = bundle.bounds()
    verdict = check_smallness(bounds)
    pair = None
    if verdict.afg.holds:
        pair = coercivity_constants(bounds, verdict.epsilon_used, SPLIT_A)
    elif verdict.sfg.holds:
        pair = coercivity_constants(bounds, verdict.epsilon_sfg, SPLIT_B)
    else:
        msg = "neither smallness alternative holds for the coupled scheme"
        if strict:
            raise SmallnessViolated(msg)
        warnings.warn(msg + "; continuing without estimate bookkeeping", SmallnessWarning, stacklevel=3)
        return verdict, None
    if dconst is None:
        dconst = domain_constants(mesh, constraint=constraint)
    return verdict, EstimateContext(bounds, pair, dconst)


def _lagged_context(bundle, mesh, grid, constraint, dconst, strict):
    bounds = bundle.bounds()
    verdict = check_smallness(bounds)
    t1, t2 = tau_limits(bounds)
    if grid.tau > t1 * (1 + 1e-12) or grid.tau > t2 * (1 + 1e-12):
        raise StepTooLarge(f"tau={grid.tau:g} exceeds min(a_lo/b_hi, b_lo/a_lo)={min(t1, t2):g}")
    if not verdict.asfg.holds:
        msg = "the lagged-scheme smallness condition fails"
        if strict:
            raise SmallnessViolated(msg)
        warnings.warn(msg + "; continuing without estimate bookkeeping", SmallnessWarning, stacklevel=3)
        return verdict, None
    if dconst is None:
        dconst = domain_constants(mesh, constraint=constraint)
    pair = coercivity_constants(bounds, 1.0, SCHEME_B)
    return verdict, EstimateContext(bounds, pair, dconst)


_STEP_ERRORS = (NonConvergence, NewtonDiverged, NonCoercive, SingularSystem)


def _run(scheme, bundle, mesh, theta0, grid, fp_cfg, newton_cfg, constraint, dconst, sample_mode,
         strict, with_estimates, keep_problems):
    Vt, Vp = _spaces(mesh, constraint)
    th0 = _as_nodal(Vt, theta0)
    _check_current_balance(Vt, bundle.g)
    if scheme == SCHEME_A_NAME:
        verdict, ctx = _coupled_context(bundle, mesh, constraint, dconst, strict) if with_estimates \
            else (None, None)
    else:
        if with_estimates:
            verdict, ctx = _lagged_context(bundle, mesh, grid, constraint, dconst, strict)
        else:
            verdict, ctx = None, None
            b = bundle.bounds()
            t1, t2 = tau_limits(b)
            if grid.tau > min(t1, t2) * (1 + 1e-12):
                raise StepTooLarge(f"tau={grid.tau:g} exceeds min(a_lo/b_hi, b_lo/a_lo)={min(t1, t2):g}")
    traj = Trajectory([th0], [], [], scheme, grid, bundle, Vt, Vp, sample_mode, ctx,
                      meta={"verdict": verdict, "constraint": constraint})
    theta = th0.nodal_values
    phi = np.zeros(Vt.dof_count)
    for m in range(1, grid.M + 1):
        H = sample_h(bundle.h, grid, m, sample_mode)
        problem = StepProblem.from_previous(theta, H, grid.tau, bundle, Vt, Vp, time=grid.node(m))
        step_ctx = None
        radius = math.inf
        if ctx is not None:
            norms = problem.data_norms()
            if scheme == SCHEME_A_NAME:
                radius = radius_report(norms, ctx.bounds, ctx.domain, ctx.pair, grid.tau, bundle.ell).R_ball
            else:
                radius = radius_scheme_b(norms, ctx.bounds, ctx.domain, grid.tau, bundle.ell)
            step_ctx = EstimateContext(ctx.bounds, ctx.pair, ctx.domain, radius)
        try:
            if scheme == SCHEME_A_NAME:
                sol = fixed_point_scheme_a(problem, (theta, phi), fp_cfg, radius, newton_cfg, step_ctx)
            else:
                sol = fixed_point_scheme_b(theta, problem, fp_cfg, radius, newton_cfg, step_ctx)
        except _STEP_ERRORS as exc:
            raise StepFailure(f"step {m} of {grid.M} failed: {exc}", step=m, trajectory=traj, cause=exc) from exc
        traj.theta_steps.append(sol.theta)
        traj.phi_steps.append(sol.phi)
        traj.diagnostics.append(sol)
        if keep_problems:
            traj.problems.append(problem)
        theta, phi = sol.theta.nodal_values, sol.phi.nodal_values
    return traj


def run_scheme_a(bundle: CoefficientBundle, mesh: Mesh, theta0, grid: TimeGrid,
                 fp_cfg: FixedPointConfig = FixedPointConfig(), newton_cfg: NewtonConfig = NewtonConfig(),
                 constraint: str = "volume", domain_consts: DomainConstants | None = None,
                 sample_mode: str = "right", strict: bool = False, with_estimates: bool = True,
                 keep_problems: bool = True) -> Trajectory:
    """Coupled scheme: each step solves temperature and potential together."""
    return _run(SCHEME_A_NAME, bundle, mesh, theta0, grid, fp_cfg, newton_cfg, constraint, domain_consts,
                sample_mode, strict, with_estimates, keep_problems)


def run_scheme_b(bundle: CoefficientBundle, mesh: Mesh, theta0, grid: TimeGrid,
                 fp_cfg: FixedPointConfig = FixedPointConfig(), newton_cfg: NewtonConfig = NewtonConfig(),
                 constraint: str = "volume", domain_consts: DomainConstants | None = None,
                 sample_mode: str = "right", strict: bool = False, with_estimates: bool = True,
                 keep_problems: bool = True) -> Trajectory:
    """Lagged scheme: the potential of step m is driven by the temperature of step m-1."""
    return _run(SCHEME_B_NAME, bundle, mesh, theta0, grid, fp_cfg, newton_cfg, constraint, domain_consts,
                sample_mode, strict, with_estimates, keep_problems)


def run(scheme: str, *args, **kwargs) -> Trajectory:
    s = scheme.upper()
    if s == SCHEME_A_NAME:
        return run_scheme_a(*args, **kwargs)
    if s == SCHEME_B_NAME:
        return run_scheme_b(*args, **kwargs)
    raise ValueError(f"unknown scheme {scheme!r}")


# -- interpolants ------------------------------------------------------------------

@dataclass
class Interpolants:
    """Piecewise-constant and affine-in-time reconstructions of a trajectory."""

    times: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    B: np.ndarray
    tau: float

    @property
    def M(self) -> int:
        return len(self.times) - 1

    def _check(self, t):
        T = self.times[-1]
        if not (-1e-12 * T <= t <= T * (1 + 1e-12)):
            raise OutOfRange(f"t={t} outside [0, {T}]")

    def _interval(self, t) -> int:
        """Index m with ``t`` in ``(t_{m-1}, t_m]``, at least 1."""
        m = int(math.ceil(t / self.tau - 1e-9))
        return min(max(m, 1), self.M)

    def theta_pc(self, t):
        self._check(t)
        if t <= 0:
            return self.theta[0]
        return self.theta[self._interval(t)]

    def phi_pc(self, t):
        self._check(t)
        return self.phi[self._interval(t) - 1]

    def Z_pc(self, t):
        self._check(t)
        m = self._interval(t)
        return (self.B[m] - self.B[m - 1]) / self.tau

    def _affine(self, arr, t):
        self._check(t)
        if t <= 0:
            return arr[0]
        m = self._interval(t)
        s = (t - self.times[m - 1]) / self.tau
        return arr[m - 1] + s * (arr[m] - arr[m - 1])

    def B_affine(self, t):
        return self._affine(self.B, t)

    def Theta_affine(self, t):
        return self._affine(self.theta, t)

    def integral_Z(self, t):
        """``int_0^t Z(s) ds`` computed from the piecewise-constant values."""
        self._check(t)
        out = np.zeros_like(self.B[0])
        for m in range(1, self.M + 1):
            lo, hi = self.times[m - 1], min(self.times[m], t)
            if hi <= lo:
                break
            out = out + (hi - lo) * (self.B[m] - self.B[m - 1]) / self.tau
        return out


def build_interpolants(trajectory: Trajectory, bundle: CoefficientBundle | None = None,
                       grid: TimeGrid | None = None) -> Interpolants:
    if not trajectory.complete:
        raise ValueError("trajectory is incomplete")
    bundle = bundle or trajectory.bundle
    grid = grid or trajectory.grid
    X = trajectory.mesh.vertices
    theta = trajectory.theta_array()
    B = np.array([bundle.b.antiderivative(X, t) for t in theta])
    return Interpolants(grid.nodes, theta, trajectory.phi_array(), B, grid.tau)


# -- fluxes --------------------------------------------------------------------------

def compute_fluxes(theta: DiscreteField, phi: DiscreteField, bundle: CoefficientBundle) -> dict:
    """Cellwise heat flux ``q``, current ``j`` and energy flux ``J = q + phi j``.

    Coefficients and ``phi`` are evaluated at cell centroids.
    """
    space = theta.space
    mesh = space.mesh
    gt = space.cell_gradients(theta.nodal_values)
    gp = space.cell_gradients(phi.nodal_values)
    xc = mesh.centroids
    ec = theta.nodal_values[mesh.cells].mean(axis=1)
    pc = phi.nodal_values[mesh.cells].mean(axis=1)
    k, sig, al, Pi = (getattr(bundle, n)(xc, ec)[:, None] for n in ("k", "sigma", "alpha_S", "Pi"))
    q = -k * gt - Pi * sig * gp
    j = -al * sig * gt - sig * gp
    return {"q": q, "j": j, "J": q + pc[:, None] * j, "centroids": xc}


def weak_divergence_residual(theta: DiscreteField, phi: DiscreteField, bundle: CoefficientBundle,
                             source_theta: DiscreteField | None = None, constraint=None) -> dict:
    """Residual ``int (sigma grad phi + sigma alpha grad theta) . grad w - int_{Gamma_N} g w``.

    The current is built at quadrature points with coefficients at
    ``source_theta`` (default ``theta``).  The residual is reported after
    removing its component along ``constraint`` (the multiplier direction).
    """
    space = theta.space
    mesh = space.mesh
    src = theta if source_theta is None else source_theta
    x = mesh.qp_points
    e = space.at_qp(src.nodal_values)
    sig = bundle.sigma(x, e)
    al = bundle.alpha_S(x, e)
    gp = space.cell_gradients(phi.nodal_values)
    gt = space.cell_gradients(src.nodal_values)
    jq = sig[:, :, None] * gp[:, None, :] + (sig * al)[:, :, None] * gt[:, None, :]
    cell_j = np.einsum("cq,cqd->cd", mesh.qp_weights, jq)
    local = np.einsum("cd,ckd->ck", cell_j, mesh.basis_gradients)
    r = np.bincount(mesh.cells.reshape(-1), weights=local.reshape(-1), minlength=mesh.n_vertices)
    if mesh.has_tag(GAMMA_N):
        r = r - assemble_boundary_load(space, bundle.g, GAMMA_N)
    raw = float(np.max(np.abs(r)))
    if constraint is not None:
        c = np.asarray(constraint, float)
        r = r - (r @ c) / (c @ c) * c
    scale = max(float(np.max(np.abs(local))), 1e-300)
    return {"residual": r, "max_abs": float(np.max(np.abs(r))), "raw_max_abs": raw, "scale": scale}


# -- export --------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_trajectory(traj: Trajectory, out_dir, stride: int = 1, config_hash: str | None = None,
                     extra: dict | None = None) -> Path:
    """One nodal CSV per ``stride`` steps plus ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    steps = list(range(0, len(traj.theta_steps), max(1, int(stride))))
    if steps[-1] != len(traj.theta_steps) - 1:
        steps.append(len(traj.theta_steps) - 1)
    files = []
    for m in steps:
        phi = traj.phi_steps[m - 1].nodal_values if m >= 1 else np.full(traj.theta_space.dof_count, np.nan)
        p = write_fields_csv(out / f"snapshot_{m:05d}.csv", traj.mesh,
                             {"theta": traj.theta_steps[m], "phi": phi})
        files.append({"step": m, "time": repr(traj.grid.node(m)), "file": p.name, "sha256": _sha256(p)})
    manifest = {
        "scheme": traj.scheme,
        "grid": {"T_final": repr(traj.grid.T_final), "M": traj.grid.M, "tau": repr(traj.grid.tau)},
        "mesh": {"dimension": traj.mesh.dim, "resolution": list(traj.mesh.resolution),
                 "domain": traj.mesh.domain.as_dict(), "n_vertices": traj.mesh.n_vertices},
        "steps_completed": traj.steps_done,
        "complete": traj.complete,
        "config_sha256": config_hash,
        "snapshots": files,
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def read_trajectory(out_dir) -> dict:
    """Load snapshots written by :func:`write_trajectory`; verifies the recorded hashes."""
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    steps, theta, phi = [], [], []
    for entry in manifest["snapshots"]:
        p = out / entry["file"]
        if _sha256(p) != entry["sha256"]:
            raise ValueError(f"hash mismatch for {p.name}")
        data = read_fields_csv(p)
        steps.append(entry["step"])
        theta.append(data["theta"])
        phi.append(data["phi"])
    return {"manifest": manifest, "steps": steps, "theta": np.array(theta), "phi": np.array(phi)}

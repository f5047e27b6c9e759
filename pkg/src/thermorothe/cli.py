"""Command-line front end: ``thermorothe [run|constants|scenarios] ...``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from .config import RunConfig, load_config, parse_config, validate_regime
from .constants import (
    SCHEME_B,
    SPLIT_A,
    SPLIT_B,
    check_smallness,
    coercivity_constants,
    domain_constants,
    max_truncation,
    radius_report,
)
from .discretization import build_mesh
from .elliptic import StepProblem
from .errors import (
    ConfigError,
    EstimateViolated,
    NewtonDiverged,
    NonConvergence,
    ParseError,
    SchemaError,
    SmallnessViolated,
    StepFailure,
    StepTooLarge,
    ThermoRotheError,
    UnknownScenario,
)
from .rothe import TimeGrid, _as_nodal, _spaces, run, sample_h, write_trajectory
from .scenarios import scenario_dict, scenario_names
from .verifier import ball_report, convergence_study, inflate_constants, verify_global_estimate

log = logging.getLogger("thermorothe")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_SMALLNESS = 3
EXIT_ESTIMATE = 4
EXIT_NONCONVERGENCE = 5
EXIT_STEP = 6


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def constants_table(cfg: RunConfig) -> list:
    """(name, value) rows describing every constant entering the estimates."""
    bounds = cfg.bundle.bounds()
    mesh = build_mesh(cfg.domain, cfg.resolution)
    dc = domain_constants(mesh, constraint=cfg.constraint)
    verdict = check_smallness(bounds)
    rows = [(k, v) for k, v in bounds.as_dict().items()]
    rows += [(k, v) for k, v in (("a_lo", bounds.a_lo), ("a_hi", bounds.a_hi), ("F_hi", bounds.F_hi))
             if k not in dict(rows)]
    rows += [("ell", cfg.bundle.ell),
             ("P2", dc.P2), ("K2", dc.K2), ("P2K2", dc.product), ("epsilon_afg", verdict.epsilon_used),
             ("epsilon_sfg", verdict.epsilon_sfg)]
    for name, cond in verdict.items():
        rows += [(f"{name}_lhs", cond.lhs), (f"{name}_rhs", cond.rhs), (f"{name}_margin", cond.margin),
                 (f"{name}_holds", cond.holds)]
    rows.append(("max_truncation_sss3", max_truncation(bounds, "sss3")))
    if cfg.scheme == "B":
        pair = coercivity_constants(bounds, 1.0, SCHEME_B)
    elif verdict.afg.holds or not verdict.sfg.holds:
        pair = coercivity_constants(bounds, verdict.epsilon_used, SPLIT_A)
    else:
        pair = coercivity_constants(bounds, verdict.epsilon_sfg, SPLIT_B)
    rows += [("coercivity_variant", pair.variant), ("L1", pair.L1), ("L2", pair.L2)]
    Vt, Vp = _spaces(mesh, cfg.constraint)
    theta0 = _as_nodal(Vt, cfg.theta0).nodal_values
    grid = TimeGrid(cfg.T_final, cfg.M)
    problem = StepProblem.from_previous(theta0, sample_h(cfg.bundle.h, grid, 1, cfg.sample_mode), grid.tau,
                                        cfg.bundle, Vt, Vp, grid.node(1))
    if pair.L1 > 0 and pair.L2 > 0:
        rr = radius_report(problem.data_norms(), bounds, dc, pair, grid.tau, cfg.bundle.ell)
        rows += [("tau", grid.tau), ("step1_R_script", rr.R_script), ("step1_R1", rr.R1), ("step1_R2", rr.R2),
                 ("step1_R_ball", rr.R_ball), ("step1_R_lagged", rr.R_schemeB),
                 ("tau_limit_a_over_b", rr.tau_max), ("tau_limit_b_over_a", rr.tau_max_radius)]
    rows.append(("theorem_holds", verdict.theorem_holds))
    return rows


def _format_value(v) -> str:
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_constants(rows, out: Path) -> list:
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "constants.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "value"])
        for k, v in rows:
            w.writerow([k, _format_value(v)])
    txt_path = out / "constants.txt"
    width = max(len(k) for k, _ in rows)
    txt_path.write_text("\n".join(f"{k:<{width}}  {_format_value(v)}" for k, v in rows) + "\n")
    return [csv_path, txt_path]


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thermorothe", description="Rothe time stepping for thermoelectric conduction.")
    p.add_argument("command", nargs="?", default="run", choices=("run", "constants", "scenarios"))
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", type=Path, help="JSON configuration file")
    src.add_argument("--scenario", help="named preset (see 'thermorothe scenarios')")
    p.add_argument("--scheme", type=str.upper, choices=("A", "B"), help="A: coupled, B: lagged potential")
    p.add_argument("--M", type=int, help="number of time steps")
    p.add_argument("--mesh", help="resolution, e.g. 64 or 32x32")
    p.add_argument("--check-estimates", action="store_true", help="write and enforce the energy ledger")
    p.add_argument("--convergence-study", help="comma-separated doubling list of step counts")
    p.add_argument("--constants-only", action="store_true", help="report constants and stop")
    p.add_argument("--strict", action="store_true", help="refuse runs outside the smallness regime")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--seed", type=int, help="seed recorded in the manifest and used by sampling checks")
    p.add_argument("--workers", type=int, default=1, help="parallel runs in a convergence study")
    p.add_argument("--stride", type=int, default=1, help="write every n-th snapshot")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _load(args) -> RunConfig:
    if args.config is not None:
        cfg = load_config(args.config, strict=False)
    elif args.scenario is not None:
        cfg = parse_config(scenario_dict(args.scenario), strict=False)
    else:
        raise ConfigError("one of --config or --scenario is required")
    updates = {}
    if args.scheme:
        updates["scheme"] = args.scheme
    if args.M is not None:
        if args.M < 1:
            raise ConfigError("--M must be positive")
        updates["M"] = args.M
    if args.mesh:
        try:
            parts = tuple(int(v) for v in args.mesh.lower().split("x"))
        except ValueError:
            raise ConfigError(f"cannot parse --mesh {args.mesh!r}") from None
        if len(parts) == 1:
            parts = parts * cfg.domain.dim
        if len(parts) != cfg.domain.dim or min(parts) < 1:
            raise ConfigError(f"--mesh {args.mesh!r} does not match a {cfg.domain.dim}-D domain")
        updates["resolution"] = parts
    if args.check_estimates:
        updates["check_estimates"] = True
    if args.convergence_study:
        try:
            study = [int(v) for v in args.convergence_study.split(",")]
        except ValueError:
            raise ConfigError("--convergence-study expects integers like 8,16,32") from None
        if len(study) < 2 or any(b != 2 * a for a, b in zip(study, study[1:])) or min(study) < 1:
            raise ConfigError("--convergence-study must be a doubling list of at least two values")
        updates["convergence_study"] = study
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out is not None:
        updates["out_dir"] = str(args.out)
    cfg = replace(cfg, **updates)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore" if args.strict else "default")
        validate_regime(cfg, strict=args.strict)
    return cfg


def _write_manifest(out: Path, cfg: RunConfig, summary: dict) -> Path:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "run_manifest.json")
    manifest = {
        "config": cfg.effective_dict(),
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "summary": summary,
        "files": {p.relative_to(out).as_posix(): _sha256(p) for p in files},
    }
    path = out / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_format_value))
    return path


def _execute(cfg: RunConfig, args, stdout) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = constants_table(cfg)
    write_constants(rows, out)
    if args.command == "constants" or args.constants_only:
        for k, v in rows:
            print(f"{k}: {_format_value(v)}", file=stdout)
        _write_manifest(out, cfg, {"constants_only": True})
        return EXIT_OK
    mesh = build_mesh(cfg.domain, cfg.resolution)
    grid = TimeGrid(cfg.T_final, cfg.M)
    kw = dict(fp_cfg=cfg.fp_cfg, newton_cfg=cfg.newton_cfg, constraint=cfg.constraint,
              sample_mode=cfg.sample_mode, strict=args.strict)
    traj = run(cfg.scheme, cfg.bundle, mesh, cfg.theta0, grid, with_estimates=cfg.check_estimates, **kw)
    log.info("completed %d steps of scheme %s", traj.steps_done, cfg.scheme)
    summary = {"scheme": cfg.scheme, "M": cfg.M, "steps": traj.steps_done, **ball_report(traj),
               "outer_iterations": [d.outer_iterations for d in traj.diagnostics]}
    write_trajectory(traj, out / "trajectory", stride=args.stride, config_hash=cfg.digest())
    status = EXIT_OK
    if cfg.check_estimates:
        ctx = traj.context
        if ctx is None:
            raise SmallnessViolated("estimate bookkeeping needs the smallness regime")
        if cfg.corrupt_L1 != 1.0:
            ctx = inflate_constants(ctx, cfg.corrupt_L1, "L1")
        ledger = verify_global_estimate(traj, ctx, raise_on_violation=False)
        ledger.to_csv(out / "ledger.csv")
        checks = {"displayed": ledger.displayed_pass, "cumulative": ledger.cumulative_pass,
                  "step": ledger.step_pass, "potential": ledger.phi_pass, "flux": ledger.flux_pass}
        summary["estimates"] = checks
        summary["ledger_lhs"], summary["ledger_rhs"] = ledger.lhs, ledger.rhs
        print(f"ledger: lhs={ledger.lhs:.6g} rhs={ledger.rhs:.6g} "
              + " ".join(f"{k}={'ok' if v else 'VIOLATED'}" for k, v in checks.items()), file=stdout)
        enforced = [ledger.cumulative_pass, ledger.displayed_pass, ledger.flux_pass]
        if cfg.scheme == "A":
            enforced += [ledger.step_pass, ledger.phi_pass]
        if not all(enforced):
            status = EXIT_ESTIMATE
    if cfg.convergence_study:
        Ms = cfg.convergence_study
        ckw = dict(kw, with_estimates=False, keep_problems=False)
        ckw.pop("strict")
        with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
            trajs = list(pool.map(lambda M: run(cfg.scheme, cfg.bundle, mesh, cfg.theta0,
                                                TimeGrid(cfg.T_final, M), **ckw), Ms))
        study = convergence_study(cfg.bundle, mesh, cfg.theta0, Ms, cfg.scheme, cfg.T_final, trajectories=trajs)
        study.to_csv(out / "convergence.csv")
        summary["convergence_rates_B"] = study.rates_B
        print("convergence: diff_B_L1=" + ", ".join(f"{v:.3e}" for v in study.diff_B_L1)
              + " rates=" + ", ".join(f"{r:.2f}" for r in study.rates_B), file=stdout)
    _write_manifest(out, cfg, summary)
    print(f"wrote {out}", file=stdout)
    return status


def main(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "scenarios":
        for name in scenario_names():
            print(f"{name}: {scenario_dict(name).get('description', '')}", file=stdout)
        return EXIT_OK
    try:
        cfg = _load(args)
        return _execute(cfg, args, stdout)
    except (ParseError, SchemaError, ConfigError, UnknownScenario) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SmallnessViolated as exc:
        print(f"smallness violated: {exc}", file=sys.stderr)
        return EXIT_SMALLNESS
    except StepTooLarge as exc:
        print(f"step too large: {exc}", file=sys.stderr)
        return EXIT_STEP
    except EstimateViolated as exc:
        print(f"estimate violated: {exc}", file=sys.stderr)
        return EXIT_ESTIMATE
    except StepFailure as exc:
        print(f"nonconvergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (NonConvergence, NewtonDiverged) as exc:
        print(f"nonconvergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except ThermoRotheError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

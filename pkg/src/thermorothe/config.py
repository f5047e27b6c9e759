"""JSON run configuration (schema version 1) and its validation."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coefficients import CoefficientBundle, ScalarCoefficient
from .constants import check_smallness, tau_limits
from .discretization import DomainSpec
from .elliptic import FixedPointConfig, NewtonConfig
from .errors import ParseError, SchemaError, SmallnessViolated, SmallnessWarning, StepTooLarge
from .expressions import compile_expression

SCHEMA_VERSION = 1
COEFFICIENT_NAMES = ("b", "k", "sigma", "alpha_S", "Pi", "gamma")
TOP_LEVEL_KEYS = {"schema_version", "name", "description", "domain", "mesh", "coefficients", "theta0", "time",
                  "scheme", "solver", "newton", "potential_constraint", "verification", "output", "seed"}


@dataclass
class RunConfig:
    name: str
    domain: DomainSpec
    resolution: tuple
    bundle: CoefficientBundle
    theta0: object
    T_final: float
    M: int
    scheme: str = "A"
    fp_cfg: FixedPointConfig = field(default_factory=FixedPointConfig)
    newton_cfg: NewtonConfig = field(default_factory=NewtonConfig)
    constraint: str = "volume"
    sample_mode: str = "right"
    check_estimates: bool = False
    convergence_study: list = field(default_factory=list)
    corrupt_L1: float = 1.0
    out_dir: str = "out"
    seed: int = 0
    raw: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def tau(self) -> float:
        return self.T_final / self.M

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form of the effective configuration."""
        return hashlib.sha256(json.dumps(self.effective_dict(), sort_keys=True).encode()).hexdigest()

    def effective_dict(self) -> dict:
        d = json.loads(json.dumps(self.raw))
        d.setdefault("time", {})
        d["time"]["M"] = self.M
        d["time"]["T"] = self.T_final
        d["scheme"] = self.scheme
        d["mesh"] = {"resolution": list(self.resolution)}
        d["seed"] = self.seed
        return d


class _Errors:
    def __init__(self):
        self.items = []

    def add(self, path: str, msg: str):
        self.items.append(f"{path}: {msg}")

    def raise_if_any(self):
        if self.items:
            raise SchemaError(f"{len(self.items)} configuration error(s): " + "; ".join(self.items), self.items)


def _number(errs, path, value, positive=False, nonneg=False, default=None):
    if value is None:
        if default is None:
            errs.add(path, "required number missing")
        return default
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        errs.add(path, f"expected a finite number, got {value!r}")
        return default
    if positive and not value > 0:
        errs.add(path, "must be positive")
    if nonneg and not value >= 0:
        errs.add(path, "must be nonnegative")
    return float(value)


def _read_table(path: Path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ParseError(f"cannot read table {path}: {exc}") from None
    try:
        return [float(r["e"]) for r in rows], [float(r["value"]) for r in rows]
    except (KeyError, ValueError) as exc:
        raise ParseError(f"table {path} needs numeric columns 'e' and 'value'") from None


def _coefficient(errs, name, spec, base_dir) -> ScalarCoefficient | None:
    path = f"coefficients.{name}"
    if spec is None:
        errs.add(path, "missing")
        return None
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return ScalarCoefficient.constant(float(spec), label=name)
    if not isinstance(spec, dict):
        errs.add(path, "expected a number or an object")
        return None
    kinds = [k for k in ("constant", "expression", "table") if k in spec]
    if len(kinds) != 1:
        errs.add(path, "give exactly one of 'constant', 'expression', 'table'")
        return None
    kind = kinds[0]
    if kind == "constant":
        v = _number(errs, path + ".constant", spec["constant"])
        return None if v is None else ScalarCoefficient.constant(v, label=name)
    lo = _number(errs, path + ".lower", spec.get("lower"), default=None if kind == "expression" else math.nan)
    hi = _number(errs, path + ".upper", spec.get("upper"), default=None if kind == "expression" else math.nan)
    if kind == "expression":
        if lo is None or hi is None:
            return None
        try:
            return ScalarCoefficient.expression(str(spec["expression"]), lo, hi, label=name)
        except ParseError as exc:
            errs.add(path + ".expression", str(exc))
            return None
        except ValueError as exc:
            errs.add(path, str(exc))
            return None
    table = spec["table"]
    if isinstance(table, str):
        e, vals = _read_table((base_dir / table) if not Path(table).is_absolute() else Path(table))
    elif isinstance(table, dict) and "e" in table and "value" in table:
        e, vals = table["e"], table["value"]
    else:
        errs.add(path + ".table", "expected a CSV path or an object with 'e' and 'value'")
        return None
    try:
        return ScalarCoefficient.lookup_table(e, vals, None if lo is None or math.isnan(lo) else lo,
                                              None if hi is None or math.isnan(hi) else hi, label=name)
    except ValueError as exc:
        errs.add(path + ".table", str(exc))
        return None


def _source(errs, path, spec, variables):
    """Boundary source of the given variables: returns a callable of (x[, t])."""
    if spec is None:
        spec = 0.0
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return float(spec)
    if isinstance(spec, dict) and "expression" in spec:
        try:
            func = compile_expression(str(spec["expression"]), variables)
        except ParseError as exc:
            errs.add(path, str(exc))
            return 0.0
        if "t" in variables:
            def source(x, t):
                x = np.asarray(x, dtype=float)
                y = x[..., 1] if x.shape[-1] > 1 else np.zeros_like(x[..., 0])
                return func(x=x[..., 0], y=y, t=np.full(x.shape[:-1], float(t)))
        else:
            def source(x):
                x = np.asarray(x, dtype=float)
                y = x[..., 1] if x.shape[-1] > 1 else np.zeros_like(x[..., 0])
                return func(x=x[..., 0], y=y)
        source.source = spec["expression"]
        return source
    errs.add(path, "expected a number or an object with 'expression'")
    return 0.0


def _theta0(errs, spec, base_dir):
    if spec is None:
        errs.add("theta0", "missing")
        return 0.0
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return float(spec)
    if isinstance(spec, dict) and "expression" in spec:
        try:
            func = compile_expression(str(spec["expression"]), ("x", "y"))
        except ParseError as exc:
            errs.add("theta0", str(exc))
            return 0.0

        def theta0(X):
            y = X[:, 1] if X.shape[1] > 1 else np.zeros(len(X))
            return func(x=X[:, 0], y=y)

        return theta0
    if isinstance(spec, dict) and "csv" in spec:
        p = Path(spec["csv"])
        p = p if p.is_absolute() else base_dir / p
        try:
            with open(p, newline="") as fh:
                rows = list(csv.DictReader(fh))
            col = spec.get("column", "theta")
            return np.array([float(r[col]) for r in rows])
        except (OSError, KeyError, ValueError) as exc:
            errs.add("theta0.csv", f"cannot read nodal values: {exc}")
            return 0.0
    if isinstance(spec, dict) and "values" in spec:
        return np.asarray(spec["values"], dtype=float)
    errs.add("theta0", "expected a number, 'expression', 'csv' or 'values'")
    return 0.0


def _parse_resolution(errs, spec, dim):
    if spec is None:
        return (32,) * dim
    if isinstance(spec, dict):
        spec = spec.get("resolution")
    if isinstance(spec, str):
        try:
            spec = [int(p) for p in spec.lower().split("x")]
        except ValueError:
            errs.add("mesh", f"cannot parse resolution {spec!r}")
            return (1,) * dim
    res = list(np.atleast_1d(spec))
    if len(res) == 1 and dim == 2:
        res = res * 2
    if len(res) != dim or any((not isinstance(r, (int, np.integer))) or r < 1 for r in res):
        errs.add("mesh", f"resolution must be {dim} positive integer(s)")
        return (1,) * dim
    return tuple(int(r) for r in res)


def parse_config(raw: dict, base_dir=None, strict: bool = False) -> RunConfig:
    """Validate a configuration mapping; collect every schema error before raising."""
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    if not isinstance(raw, dict):
        raise SchemaError("configuration must be a JSON object")
    errs = _Errors()
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        errs.add("schema_version", f"unsupported version {version!r}; expected {SCHEMA_VERSION}")
    for key in raw:
        if key not in TOP_LEVEL_KEYS:
            errs.add(key, "unknown key")
    dom = raw.get("domain", {"lengths": [1.0], "gamma": ["right"], "gamma_n": ["left"]})
    domain = None
    try:
        domain = DomainSpec(tuple(dom.get("lengths", [1.0])), tuple(dom.get("gamma", ())),
                            tuple(dom.get("gamma_n", ())))
    except Exception as exc:  # InvalidSpec or malformed entries
        errs.add("domain", str(exc))
    dim = domain.dim if domain else 1
    resolution = _parse_resolution(errs, raw.get("mesh"), dim)
    coeffs = raw.get("coefficients")
    bundle = None
    if not isinstance(coeffs, dict):
        errs.add("coefficients", "missing or not an object")
    else:
        parsed = {n: _coefficient(errs, n, coeffs.get(n), base_dir) for n in COEFFICIENT_NAMES}
        ell = _number(errs, "coefficients.ell", coeffs.get("ell"), default=2.0)
        if ell is not None and not ell >= 2:
            errs.add("coefficients.ell", "the boundary exponent must be at least 2")
        trunc = _number(errs, "coefficients.truncation", coeffs.get("truncation"), nonneg=True, default=1.0)
        h = _source(errs, "coefficients.h", coeffs.get("h"), ("x", "y", "t"))
        g = _source(errs, "coefficients.g", coeffs.get("g"), ("x", "y"))
        for n in ("b", "k", "sigma", "gamma"):
            c = parsed[n]
            if c is not None and not c.lower_bound > 0:
                errs.add(f"coefficients.{n}", "needs a strictly positive lower bound")
        if not errs.items:
            bundle = CoefficientBundle(h=h, g=g, ell=ell, truncation=trunc, **parsed)
    theta0 = _theta0(errs, raw.get("theta0"), base_dir)
    time = raw.get("time", {})
    T = _number(errs, "time.T", time.get("T"), positive=True, default=1.0)
    M = time.get("M", 16)
    if isinstance(M, bool) or not isinstance(M, int) or M < 1:
        errs.add("time.M", "must be a positive integer")
        M = 1
    sample = time.get("sample", "right")
    if sample not in ("right", "average"):
        errs.add("time.sample", "must be 'right' or 'average'")
    scheme = str(raw.get("scheme", "A")).upper()
    if scheme not in ("A", "B"):
        errs.add("scheme", "must be 'A' or 'B'")
    solver = raw.get("solver", {})
    try:
        fp = FixedPointConfig(**solver)
    except (TypeError, ValueError) as exc:
        errs.add("solver", str(exc))
        fp = FixedPointConfig()
    try:
        nt = NewtonConfig(**raw.get("newton", {}))
    except (TypeError, ValueError) as exc:
        errs.add("newton", str(exc))
        nt = NewtonConfig()
    constraint = raw.get("potential_constraint", "volume")
    if constraint not in ("volume", "boundary"):
        errs.add("potential_constraint", "must be 'volume' or 'boundary'")
    ver = raw.get("verification", {})
    study = ver.get("convergence_study", [])
    if study and (not all(isinstance(v, int) and v >= 1 for v in study)
                  or any(b != 2 * a for a, b in zip(study, study[1:]))):
        errs.add("verification.convergence_study", "must be a doubling list of positive integers")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        errs.add("seed", "must be an integer")
        seed = 0
    errs.raise_if_any()
    cfg = RunConfig(
        name=str(raw.get("name", "custom")), domain=domain, resolution=resolution, bundle=bundle, theta0=theta0,
        T_final=T, M=M, scheme=scheme, fp_cfg=fp, newton_cfg=nt, constraint=constraint, sample_mode=sample,
        check_estimates=bool(ver.get("check_estimates", False)), convergence_study=list(study),
        corrupt_L1=float(ver.get("corrupt_L1_factor", 1.0)),
        out_dir=str(raw.get("output", {}).get("dir", "out")), seed=seed, raw=raw, base_dir=base_dir,
    )
    validate_regime(cfg, strict)
    return cfg


def validate_regime(cfg: RunConfig, strict: bool = False):
    """Smallness and step-size checks that depend on the chosen scheme."""
    bounds = cfg.bundle.bounds()
    verdict = check_smallness(bounds)
    if cfg.scheme == "B":
        t1, t2 = tau_limits(bounds)
        if cfg.tau > min(t1, t2) * (1 + 1e-12):
            raise StepTooLarge(f"tau={cfg.tau:g} exceeds the lagged-scheme limit {min(t1, t2):g}")
        ok, what = verdict.asfg.holds, "the lagged-scheme smallness condition"
    else:
        ok, what = verdict.afg.holds or verdict.sfg.holds, "the coupled-scheme smallness conditions"
    if not ok:
        if strict:
            raise SmallnessViolated(f"{what} fail for config {cfg.name!r}")
        warnings.warn(f"{what} fail for config {cfg.name!r}", SmallnessWarning, stacklevel=3)
    return verdict


def load_config(path, strict: bool = False) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_config(raw, base_dir=path.parent, strict=strict)

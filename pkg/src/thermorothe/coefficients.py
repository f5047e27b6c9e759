"""Material and boundary coefficients with declared bounds.

A coefficient is evaluated as ``coef(x, e)`` with ``x`` of shape ``(..., dim)``
and a scalar state ``e`` of shape ``(...)``.  Besides plain evaluation, the
heat capacity carries the antiderivative ``B(v) = int_0^v b`` and the energy
``Psi(s) = B(s)s - int_0^s B = int_0^s r b(r) dr``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import BoundViolation, QuadratureFailure
from .expressions import compile_expression

QUAD_TOL = 1e-12
_MAX_DEPTH = 46          # panels narrower than 2**-46 are accepted as they stand
_MAX_ACTIVE = 512        # live panels per value before the integrand is declared too rough
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(12)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS

CONSTANT = "constant"
EXPRESSION = "analytic-expression"
TABLE = "lookup-table-with-interpolation"


def _split_coords(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return x, np.zeros_like(x)
    if x.shape[-1] == 1:
        return x[..., 0], np.zeros_like(x[..., 0])
    return x[..., 0], x[..., 1]


def _expand_x(x, e):
    """Give ``x`` a trailing coordinate axis when it has the shape of ``e``."""
    x = np.asarray(x, dtype=float)
    e = np.asarray(e, dtype=float)
    if x.ndim == e.ndim and x.ndim > 0 and x.shape == e.shape:
        x = x[..., None]
    elif x.ndim == 0:
        x = np.broadcast_to(x, e.shape)[..., None]
    return x, e


class _PiecewiseLinear:
    """Linear interpolant clamped to its end values, with exact integrals from 0."""

    def __init__(self, knots, values):
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        order = np.argsort(knots)
        self.knots = knots[order]
        self.values = values[order]
        if np.any(np.diff(self.knots) <= 0):
            raise ValueError("table abscissae must be distinct")
        self._pos = self._half_line(self.knots, self.values)
        self._neg = self._half_line(-self.knots[::-1], self.values[::-1])

    def __call__(self, e):
        return np.interp(e, self.knots, self.values)

    @staticmethod
    def _half_line(knots, values):
        k = np.concatenate([[0.0], knots[knots > 0]])
        y = np.interp(k, knots, values)
        d = np.diff(k)
        s = np.diff(y) / np.where(d > 0, d, 1.0)
        seg0 = y[:-1] * d + s * d**2 / 2
        seg1 = k[:-1] * y[:-1] * d + (k[:-1] * s + y[:-1]) * d**2 / 2 + s * d**3 / 3
        c0 = np.concatenate([[0.0], np.cumsum(seg0)])
        c1 = np.concatenate([[0.0], np.cumsum(seg1)])
        slopes = np.concatenate([s, [0.0]])
        return k, y, slopes, c0, c1

    @staticmethod
    def _integrals(data, v):
        k, y, s, c0, c1 = data
        idx = np.clip(np.searchsorted(k, v, side="right") - 1, 0, len(k) - 1)
        e0, y0, sl = k[idx], y[idx], s[idx]
        d = v - e0
        i0 = c0[idx] + y0 * d + sl * d**2 / 2
        i1 = c1[idx] + e0 * y0 * d + (e0 * sl + y0) * d**2 / 2 + sl * d**3 / 3
        return i0, i1

    def integrals(self, v):
        """Return ``(int_0^v y, int_0^v z y(z) dz)`` elementwise."""
        v = np.asarray(v, dtype=float)
        av = np.abs(v)
        p0, p1 = self._integrals(self._pos, av)
        n0, n1 = self._integrals(self._neg, av)
        neg = v < 0
        return np.where(neg, -n0, p0), np.where(neg, n1, p1)


@dataclass(frozen=True)
class ScalarCoefficient:
    """A Caratheodory coefficient ``(x, e) -> value`` with declared bounds."""

    evaluator: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lower_bound: float
    upper_bound: float
    kind: str = EXPRESSION
    value: float | None = None
    table: _PiecewiseLinear | None = field(default=None, compare=False)
    label: str = ""

    def __post_init__(self):
        if not self.lower_bound <= self.upper_bound:
            raise ValueError(f"{self.label or 'coefficient'}: lower bound exceeds upper bound")

    @classmethod
    def constant(cls, value: float, label: str = "") -> "ScalarCoefficient":
        value = float(value)

        def evaluator(x, e):
            return np.full(np.shape(e), value)

        return cls(evaluator, value, value, CONSTANT, value=value, label=label)

    @classmethod
    def expression(cls, source: str, lower: float, upper: float, label: str = "") -> "ScalarCoefficient":
        func = compile_expression(source, ("x", "y", "e"))

        def evaluator(x, e):
            x, e = _expand_x(x, e)
            xx, yy = _split_coords(x)
            return func(x=xx, y=yy, e=e)

        evaluator.source = source
        return cls(evaluator, float(lower), float(upper), EXPRESSION, label=label)

    @classmethod
    def from_function(cls, func, lower: float, upper: float, label: str = "") -> "ScalarCoefficient":
        """Wrap ``func(x, e)``; ``func`` must broadcast over arrays."""
        return cls(func, float(lower), float(upper), EXPRESSION, label=label)

    @classmethod
    def lookup_table(cls, states, values, lower=None, upper=None, label: str = "") -> "ScalarCoefficient":
        pl = _PiecewiseLinear(states, values)
        lo = float(np.min(pl.values)) if lower is None else float(lower)
        hi = float(np.max(pl.values)) if upper is None else float(upper)

        def evaluator(x, e):
            return pl(np.asarray(e, dtype=float))

        return cls(evaluator, lo, hi, TABLE, table=pl, label=label)

    def __call__(self, x, e):
        return np.asarray(self.evaluator(x, e), dtype=float)

    @property
    def abs_upper(self) -> float:
        return max(abs(self.lower_bound), abs(self.upper_bound))

    @property
    def is_constant(self) -> bool:
        return self.kind == CONSTANT

    # -- antiderivatives, used for b only -------------------------------------------
    def _quad_mean(self, x, v, weight_power: int):
        """``int_0^1 s^p c(x, s v) ds`` by adaptive bisection of 12-point Gauss panels.

        All values are refined together; a panel is split only where its rule
        disagrees with the sum over its halves, so kinks cost a few dozen cheap
        levels instead of a global refinement.
        """
        x, v = _expand_x(x, v)
        x = np.broadcast_to(x, v.shape + x.shape[-1:])
        flat_v = v.reshape(-1)
        flat_x = x.reshape(flat_v.size, x.shape[-1])
        n = flat_v.size
        scale = np.abs(flat_v) ** (weight_power + 1)
        owner = np.arange(n)
        left = np.zeros(n)
        width = 1.0
        coarse = self._segment_rule(flat_x, flat_v, left, width, weight_power)
        # tolerance on the unscaled mean, as a density over [0, 1]
        with np.errstate(over="ignore"):
            budget = QUAD_TOL * np.maximum(1.0, scale * np.abs(coarse)) / np.where(scale > 0, scale, 1.0)
        total = np.zeros(n)
        forced = np.zeros(n)
        for depth in range(_MAX_DEPTH + 1):
            half = 0.5 * width
            lo = self._segment_rule(flat_x[owner], flat_v[owner], left, half, weight_power)
            hi = self._segment_rule(flat_x[owner], flat_v[owner], left + half, half, weight_power)
            fine = lo + hi
            err = np.abs(fine - coarse)
            last = depth == _MAX_DEPTH
            ok = (err <= budget[owner] * width) | (scale[owner] == 0) | last
            np.add.at(total, owner[ok], fine[ok])
            if last:
                np.add.at(forced, owner, err)
                break
            keep = ~ok
            if not keep.any():
                break
            owner = np.concatenate([owner[keep], owner[keep]])
            left = np.concatenate([left[keep], left[keep] + half])
            coarse = np.concatenate([lo[keep], hi[keep]])
            width = half
            if owner.size > _MAX_ACTIVE * n + 64:
                raise QuadratureFailure(
                    f"{self.label or 'coefficient'}: integrand too rough for adaptive quadrature")
        if np.any(scale * forced > QUAD_TOL * np.maximum(1.0, scale * np.abs(total))):
            raise QuadratureFailure(
                f"{self.label or 'coefficient'}: quadrature did not reach {QUAD_TOL:g}")
        return total.reshape(v.shape)

    def _segment_rule(self, x, v, left, width, weight_power):
        """Gauss rule on ``[left, left + width]`` (per value) of ``s^p c(x, s v)``."""
        s = left[:, None] + width * _GL_NODES[None, :]
        w = width * _GL_WEIGHTS[None, :]
        if weight_power:
            w = w * s**weight_power
        xs = np.broadcast_to(x[:, None, :], (x.shape[0], _GL_NODES.size, x.shape[1]))
        vals = self(xs, v[:, None] * s)
        if not np.all(np.isfinite(vals)):
            raise QuadratureFailure(f"{self.label or 'coefficient'}: non-finite integrand")
        return np.sum(vals * w, axis=1)

    def secant(self, x, v):
        """Mean value ``B(v)/v = int_0^1 c(x, s v) ds`` (equals ``c(x, 0)`` at v = 0)."""
        v = np.asarray(v, dtype=float)
        if self.kind == CONSTANT:
            return np.full(v.shape, self.value)
        if self.kind == TABLE:
            i0, _ = self.table.integrals(v)
            safe = np.where(v == 0, 1.0, v)
            return np.where(v == 0, self.table(np.zeros_like(v)), i0 / safe)
        return self._quad_mean(x, v, 0)

    def antiderivative(self, x, v):
        """``B(v) = int_0^v c(x, z) dz``."""
        v = np.asarray(v, dtype=float)
        return v * self.secant(x, v)

    def first_moment(self, x, s):
        """``Psi(s) = int_0^s r c(x, r) dr``."""
        s = np.asarray(s, dtype=float)
        if self.kind == CONSTANT:
            return 0.5 * self.value * s**2
        if self.kind == TABLE:
            return self.table.integrals(s)[1]
        return s**2 * self._quad_mean(x, s, 1)


def as_coefficient(value, label: str = "") -> ScalarCoefficient:
    if isinstance(value, ScalarCoefficient):
        return value if value.label or not label else replace(value, label=label)
    return ScalarCoefficient.constant(float(value), label=label)


def _as_boundary_source(value, with_time: bool):
    if callable(value):
        return value
    c = float(value)
    if with_time:
        def source(x, t):
            return np.full(np.asarray(x, dtype=float).shape[:-1], c)
    else:
        def source(x):
            return np.full(np.asarray(x, dtype=float).shape[:-1], c)
    source.constant = c
    return source


@dataclass(frozen=True)
class CoefficientBundle:
    """All coefficients of the thermoelectric problem.

    ``h(x, t)`` is the radiative source on Gamma and ``g(x)`` the surface
    current on Gamma_N; both take coordinates of shape ``(..., dim)``.
    """

    b: ScalarCoefficient
    k: ScalarCoefficient
    sigma: ScalarCoefficient
    alpha_S: ScalarCoefficient
    Pi: ScalarCoefficient
    gamma: ScalarCoefficient
    h: Callable = 0.0
    g: Callable = 0.0
    ell: float = 2.0
    truncation: float = 1.0

    def __post_init__(self):
        for name in ("b", "k", "sigma", "alpha_S", "Pi", "gamma"):
            object.__setattr__(self, name, as_coefficient(getattr(self, name), label=name))
        object.__setattr__(self, "h", _as_boundary_source(self.h, with_time=True))
        object.__setattr__(self, "g", _as_boundary_source(self.g, with_time=False))
        if not self.ell >= 2:
            raise ValueError(f"ell must be >= 2, got {self.ell}")
        if not self.truncation >= 0:
            raise ValueError("truncation must be nonnegative")
        for name in ("b", "k", "sigma", "gamma"):
            if not getattr(self, name).lower_bound > 0:
                raise ValueError(f"{name} needs a strictly positive lower bound")

    @property
    def ell_conj(self) -> float:
        return self.ell / (self.ell - 1.0)

    def with_(self, **changes) -> "CoefficientBundle":
        return replace(self, **changes)

    def bounds(self) -> "BoundsReport":
        return BoundsReport.from_declared(self)

    @property
    def decoupled(self) -> bool:
        """True when the heat equation does not see the potential at all."""
        return (self.alpha_S.kind == CONSTANT and self.alpha_S.value == 0.0
                and self.Pi.kind == CONSTANT and self.Pi.value == 0.0 and self.truncation == 0.0)


@dataclass(frozen=True)
class BoundsReport:
    b_lo: float
    b_hi: float
    k_lo: float
    k_hi: float
    sigma_lo: float
    sigma_hi: float
    alpha_hi: float
    Pi_hi: float
    gamma_lo: float
    gamma_hi: float
    truncation: float = 0.0

    @classmethod
    def from_declared(cls, bundle: CoefficientBundle) -> "BoundsReport":
        return cls(
            b_lo=bundle.b.lower_bound, b_hi=bundle.b.upper_bound,
            k_lo=bundle.k.lower_bound, k_hi=bundle.k.upper_bound,
            sigma_lo=bundle.sigma.lower_bound, sigma_hi=bundle.sigma.upper_bound,
            alpha_hi=bundle.alpha_S.abs_upper, Pi_hi=bundle.Pi.abs_upper,
            gamma_lo=bundle.gamma.lower_bound, gamma_hi=bundle.gamma.upper_bound,
            truncation=bundle.truncation,
        )

    @property
    def a_lo(self) -> float:
        return self.k_lo - self.truncation * self.alpha_hi * self.sigma_hi

    @property
    def a_hi(self) -> float:
        return self.k_hi + self.truncation * self.alpha_hi * self.sigma_hi

    @property
    def F_hi(self) -> float:
        return self.Pi_hi + self.truncation

    def with_truncation(self, truncation: float) -> "BoundsReport":
        return replace(self, truncation=float(truncation))

    def as_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out.update(a_lo=self.a_lo, a_hi=self.a_hi, F_hi=self.F_hi)
        return out


def truncate(M: float, z):
    """Clamp ``z`` to ``[-M, M]``."""
    return np.clip(z, -M, M) if np.ndim(z) else float(min(M, max(-M, z)))


def derived_a(bundle: CoefficientBundle, x, e, d, check: bool = True):
    """Effective conductivity ``k + T_M(d) alpha_S sigma``."""
    val = bundle.k(x, e) + truncate(bundle.truncation, np.asarray(d, dtype=float)) \
        * bundle.alpha_S(x, e) * bundle.sigma(x, e)
    if check:
        a_lo = bundle.bounds().a_lo
        bad = val < a_lo * (1 - 1e-14) - 1e-300
        if np.any(bad):
            raise BoundViolation(f"a fell below its declared lower bound {a_lo:g}",
                                 samples=np.atleast_1d(val)[np.atleast_1d(bad)].tolist())
    return val


def derived_F(bundle: CoefficientBundle, x, e, d):
    """Peltier-type coupling ``Pi + T_M(d)``."""
    return bundle.Pi(x, e) + truncate(bundle.truncation, np.asarray(d, dtype=float))


def integrate_B(bundle: CoefficientBundle, x, v):
    return bundle.b.antiderivative(x, v)


def secant_b(bundle: CoefficientBundle, x, v):
    """Secant heat capacity ``B(v)/v``; lies in ``[b_lo, b_hi]``."""
    return bundle.b.secant(x, v)


def psi(bundle: CoefficientBundle, x, s):
    return bundle.b.first_moment(x, s)


_AUDITED = ("b", "k", "sigma", "alpha_S", "Pi", "gamma")


def audit_bounds(bundle: CoefficientBundle, sample_grid) -> BoundsReport:
    """Evaluate every coefficient on ``sample_grid = (points, states)``.

    Returns the observed extrema as a :class:`BoundsReport` and raises
    :class:`BoundViolation` if any sample leaves its declared interval.
    """
    points, states = sample_grid
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] == 1 and points.shape[1] not in (1, 2):
        points = points.T
    states = np.atleast_1d(np.asarray(states, dtype=float))
    if points.size == 0 or states.size == 0:
        raise ValueError("sample grid must be nonempty")
    X = np.broadcast_to(points[:, None, :], (points.shape[0], states.size, points.shape[1]))
    E = np.broadcast_to(states[None, :], (points.shape[0], states.size))
    observed = {}
    offenders = []
    for name in _AUDITED:
        coef = getattr(bundle, name)
        vals = coef(X, E)
        observed[name] = (float(vals.min()), float(vals.max()))
        rtol = 1e-12 * max(1.0, coef.abs_upper)
        bad = (vals < coef.lower_bound - rtol) | (vals > coef.upper_bound + rtol)
        for i, j in zip(*np.nonzero(bad)):
            offenders.append((name, points[i].tolist(), float(states[j]), float(vals[i, j])))
    if offenders:
        names = sorted({o[0] for o in offenders})
        raise BoundViolation(f"declared bounds violated by {', '.join(names)} "
                             f"({len(offenders)} samples)", samples=offenders)
    return BoundsReport(
        b_lo=observed["b"][0], b_hi=observed["b"][1],
        k_lo=observed["k"][0], k_hi=observed["k"][1],
        sigma_lo=observed["sigma"][0], sigma_hi=observed["sigma"][1],
        alpha_hi=max(abs(v) for v in observed["alpha_S"]),
        Pi_hi=max(abs(v) for v in observed["Pi"]),
        gamma_lo=observed["gamma"][0], gamma_hi=observed["gamma"][1],
        truncation=bundle.truncation,
    )


def check_gamma_monotone(bundle: CoefficientBundle, points, n_samples: int = 1000,
                         scale: float = 2.0, rng=None) -> list:
    """Sample the strong monotonicity of ``e -> gamma(e)|e|^(l-2) e``.

    The reference constant is ``2^(2-l) gamma_lo``, which a constant gamma
    always satisfies.  Violations are returned and reported as warnings.
    """
    if bundle.gamma.is_constant:
        return []
    rng = np.random.default_rng(rng)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    ell = bundle.ell
    idx = rng.integers(0, points.shape[0], n_samples)
    x = points[idx]
    u = rng.normal(scale=scale, size=n_samples)
    v = rng.normal(scale=scale, size=n_samples)

    def flux(s):
        return bundle.gamma(x, s) * np.abs(s) ** (ell - 2) * s

    lhs = (flux(u) - flux(v)) * (u - v)
    rhs = 2.0 ** (2 - ell) * bundle.gamma.lower_bound * np.abs(u - v) ** ell
    bad = np.nonzero(lhs < rhs * (1 - 1e-12))[0]
    found = [(x[i].tolist(), float(u[i]), float(v[i])) for i in bad]
    if found:
        warnings.warn(f"gamma strong monotonicity failed on {len(found)} of {n_samples} samples",
                      stacklevel=2)
    return found


def peltier_from_kelvin(alpha_S: ScalarCoefficient, theta_max: float) -> ScalarCoefficient:
    """Peltier coefficient ``Pi = T(theta) alpha_S(theta)`` with ``theta`` clamped to ``theta_max``."""
    if theta_max <= 0:
        raise ValueError("theta_max must be positive")

    def evaluator(x, e):
        return truncate(theta_max, np.asarray(e, dtype=float)) * alpha_S(x, e)

    bound = math.fabs(theta_max) * alpha_S.abs_upper
    return ScalarCoefficient(evaluator, -bound, bound, EXPRESSION, label="Pi")

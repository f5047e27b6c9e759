"""P1 finite elements on intervals and rectangles with tagged boundary parts.

Rectangles are split into right triangles along the ``(i, j) -- (i+1, j+1)``
diagonal.  Boundary facets carry one of two tags: ``"Gamma"`` (radiative part)
or ``"GammaN"`` (Neumann part, where the surface current enters).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import InvalidSpec, NonpositiveWeight

GAMMA = "Gamma"
GAMMA_N = "GammaN"
TAGS = (GAMMA, GAMMA_N)

NO_CONSTRAINT = "none"
MEAN_ZERO_VOLUME = "mean-zero-volume"
MEAN_ZERO_BOUNDARY = "mean-zero-boundary"

PARTS = {1: ("left", "right"), 2: ("left", "right", "bottom", "top")}

_G2 = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_G4_NODES, _G4_WEIGHTS = np.polynomial.legendre.leggauss(4)
_G4_NODES = 0.5 * (_G4_NODES + 1.0)
_G4_WEIGHTS = 0.5 * _G4_WEIGHTS
# interior 3-point rule, exact for quadratics
_TRI_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])


@dataclass(frozen=True)
class DomainSpec:
    """An interval ``[0, L]`` or rectangle ``[0, Lx] x [0, Ly]``.

    ``gamma`` and ``gamma_n`` list boundary part names (``left``, ``right``,
    ``bottom``, ``top``).  Parts named in neither list join ``gamma``.
    """

    lengths: tuple
    gamma: tuple = ()
    gamma_n: tuple = ()

    def __post_init__(self):
        lengths = tuple(float(v) for v in np.atleast_1d(self.lengths))
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "gamma", tuple(self.gamma))
        object.__setattr__(self, "gamma_n", tuple(self.gamma_n))
        if len(lengths) not in (1, 2):
            raise InvalidSpec("only intervals and rectangles are supported")
        if any(not (v > 0 and np.isfinite(v)) for v in lengths):
            raise InvalidSpec("domain has zero or invalid measure")
        parts = PARTS[len(lengths)]
        for name in self.gamma + self.gamma_n:
            if name not in parts:
                raise InvalidSpec(f"unknown boundary part {name!r}; expected one of {parts}")
        overlap = set(self.gamma) & set(self.gamma_n)
        if overlap:
            raise InvalidSpec(f"boundary parts tagged twice: {sorted(overlap)}")

    @classmethod
    def interval(cls, length: float = 1.0, gamma=("right",), gamma_n=("left",)) -> "DomainSpec":
        return cls((length,), tuple(gamma), tuple(gamma_n))

    @classmethod
    def rectangle(cls, lx: float = 1.0, ly: float = 1.0, gamma=(), gamma_n=()) -> "DomainSpec":
        return cls((lx, ly), tuple(gamma), tuple(gamma_n))

    @property
    def dim(self) -> int:
        return len(self.lengths)

    @property
    def diameter(self) -> float:
        return float(np.hypot(*self.lengths)) if self.dim == 2 else self.lengths[0]

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def tag_of(self, part: str) -> str:
        return GAMMA_N if part in self.gamma_n else GAMMA

    def as_dict(self) -> dict:
        return {"lengths": list(self.lengths), "gamma": list(self.gamma), "gamma_n": list(self.gamma_n)}


@dataclass(frozen=True, eq=False)
class Mesh:
    domain: DomainSpec
    vertices: np.ndarray
    cells: np.ndarray
    facets: np.ndarray
    facet_parts: tuple
    resolution: tuple

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @cached_property
    def facet_tags(self) -> np.ndarray:
        return np.array([self.domain.tag_of(p) for p in self.facet_parts])

    @cached_property
    def h_mesh(self) -> float:
        pts = self.vertices[self.cells]
        diffs = pts[:, :, None, :] - pts[:, None, :, :]
        return float(np.sqrt((diffs**2).sum(-1)).max())

    @cached_property
    def _volume_geometry(self):
        pts = self.vertices[self.cells]  # (nc, dim+1, dim)
        if self.dim == 1:
            length = pts[:, 1, 0] - pts[:, 0, 0]
            grads = np.stack([-1.0 / length, 1.0 / length], axis=1)[:, :, None]
            basis = np.stack([1.0 - _G2, _G2], axis=1)  # (nq, 2)
            weights = np.outer(length, [0.5, 0.5])
            measure = length
        else:
            e1 = pts[:, 1] - pts[:, 0]
            e2 = pts[:, 2] - pts[:, 0]
            det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
            measure = 0.5 * det
            inv = np.empty((len(det), 2, 2))
            inv[:, 0, 0] = e2[:, 1] / det
            inv[:, 0, 1] = -e2[:, 0] / det
            inv[:, 1, 0] = -e1[:, 1] / det
            inv[:, 1, 1] = e1[:, 0] / det
            ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
            grads = np.einsum("kd,cde->cke", ref, inv)
            basis = _TRI_BARY
            weights = np.outer(measure, np.full(3, 1 / 3))
        points = np.einsum("qk,ckd->cqd", basis, pts)
        return measure, grads, basis, weights, points

    @property
    def cell_measure(self) -> np.ndarray:
        return self._volume_geometry[0]

    @property
    def basis_gradients(self) -> np.ndarray:
        """Constant P1 gradients, shape ``(n_cells, dim+1, dim)``."""
        return self._volume_geometry[1]

    @property
    def qp_basis(self) -> np.ndarray:
        return self._volume_geometry[2]

    @property
    def qp_weights(self) -> np.ndarray:
        return self._volume_geometry[3]

    @property
    def qp_points(self) -> np.ndarray:
        return self._volume_geometry[4]

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    @cached_property
    def _boundary_geometry(self):
        pts = self.vertices[self.facets]
        if self.dim == 1:
            basis = np.ones((1, 1))
            weights = np.ones((len(self.facets), 1))
            points = pts.copy()
        else:
            length = np.linalg.norm(pts[:, 1] - pts[:, 0], axis=1)
            basis = np.stack([1.0 - _G4_NODES, _G4_NODES], axis=1)
            weights = np.outer(length, _G4_WEIGHTS)
            points = np.einsum("qk,fkd->fqd", basis, pts)
        return basis, weights, points

    @property
    def bqp_basis(self) -> np.ndarray:
        return self._boundary_geometry[0]

    @property
    def bqp_weights(self) -> np.ndarray:
        return self._boundary_geometry[1]

    @property
    def bqp_points(self) -> np.ndarray:
        return self._boundary_geometry[2]

    def facet_mask(self, tags: str | Sequence[str] | None) -> np.ndarray:
        """Boolean mask over facets; ``None`` selects the whole boundary."""
        if tags is None:
            return np.ones(len(self.facets), dtype=bool)
        if isinstance(tags, str):
            tags = (tags,)
        for t in tags:
            if t not in TAGS:
                raise ValueError(f"unknown boundary tag {t!r}")
        return np.isin(self.facet_tags, list(tags))

    def part_measure(self, tags) -> float:
        return float(self.bqp_weights[self.facet_mask(tags)].sum())

    def has_tag(self, tag: str) -> bool:
        return bool(self.facet_mask(tag).any())

    @cached_property
    def _pattern(self):
        nb = self.cells.shape[1]
        rows = np.repeat(self.cells, nb, axis=1).reshape(-1)
        cols = np.tile(self.cells, (1, nb)).reshape(-1)
        return rows, cols


def _parse_resolution(resolution, dim):
    if isinstance(resolution, str):
        resolution = tuple(int(p) for p in resolution.lower().split("x"))
    res = tuple(int(r) for r in np.atleast_1d(resolution))
    if len(res) == 1 and dim == 2:
        res = res * 2
    if len(res) != dim:
        raise InvalidSpec(f"resolution {resolution!r} does not match dimension {dim}")
    if any(r < 1 for r in res):
        raise InvalidSpec("resolution must be at least 1 per axis")
    return res


def build_mesh(domain: DomainSpec, resolution) -> Mesh:
    res = _parse_resolution(resolution, domain.dim)
    if domain.dim == 1:
        (n,) = res
        vertices = np.linspace(0.0, domain.lengths[0], n + 1)[:, None]
        cells = np.stack([np.arange(n), np.arange(1, n + 1)], axis=1)
        facets = np.array([[0], [n]])
        parts = ("left", "right")
    else:
        nx, ny = res
        xs = np.linspace(0.0, domain.lengths[0], nx + 1)
        ys = np.linspace(0.0, domain.lengths[1], ny + 1)
        X, Y = np.meshgrid(xs, ys)
        vertices = np.stack([X.ravel(), Y.ravel()], axis=1)

        def vid(i, j):
            return j * (nx + 1) + i

        I, J = np.meshgrid(np.arange(nx), np.arange(ny))
        I, J = I.ravel(), J.ravel()
        v00, v10, v01, v11 = vid(I, J), vid(I + 1, J), vid(I, J + 1), vid(I + 1, J + 1)
        lower = np.stack([v00, v10, v11], axis=1)
        upper = np.stack([v00, v11, v01], axis=1)
        cells = np.stack([lower, upper], axis=1).reshape(-1, 3)
        ii, jj = np.arange(nx), np.arange(ny)
        bottom = np.stack([vid(ii, 0), vid(ii + 1, 0)], axis=1)
        top = np.stack([vid(ii + 1, ny), vid(ii, ny)], axis=1)
        left = np.stack([vid(0, jj + 1), vid(0, jj)], axis=1)
        right = np.stack([vid(nx, jj), vid(nx, jj + 1)], axis=1)
        facets = np.concatenate([left, right, bottom, top])
        parts = ("left",) * ny + ("right",) * ny + ("bottom",) * nx + ("top",) * nx
    return Mesh(domain, vertices, cells.astype(np.int64), facets.astype(np.int64), parts, res)


@dataclass(frozen=True, eq=False)
class FunctionSpace:
    mesh: Mesh
    constraint: str = NO_CONSTRAINT

    def __post_init__(self):
        if self.constraint not in (NO_CONSTRAINT, MEAN_ZERO_VOLUME, MEAN_ZERO_BOUNDARY):
            raise ValueError(f"unknown constraint {self.constraint!r}")

    @property
    def dof_count(self) -> int:
        return self.mesh.n_vertices

    @cached_property
    def volume_weights(self) -> np.ndarray:
        """``int_Omega phi_i`` for every basis function (the lumped mass)."""
        return _scatter_cells(self.mesh, self.mesh.qp_weights[:, :, None] * self.mesh.qp_basis[None])

    @cached_property
    def boundary_weights(self) -> np.ndarray:
        """``int_{dOmega} phi_i`` over the whole boundary."""
        return boundary_integrals(self, None)

    def constraint_vector(self, mode: str | None = None) -> np.ndarray | None:
        mode = mode or self.constraint
        if mode in (MEAN_ZERO_VOLUME, "volume"):
            return self.volume_weights
        if mode in (MEAN_ZERO_BOUNDARY, "boundary"):
            return self.boundary_weights
        return None

    def with_constraint(self, constraint: str) -> "FunctionSpace":
        return FunctionSpace(self.mesh, constraint)

    # -- evaluation helpers -------------------------------------------------------
    def at_qp(self, values) -> np.ndarray:
        """P1 interpolation of nodal ``values`` at volume quadrature points."""
        return np.asarray(values, dtype=float)[self.mesh.cells] @ self.mesh.qp_basis.T

    def at_bqp(self, values) -> np.ndarray:
        return np.asarray(values, dtype=float)[self.mesh.facets] @ self.mesh.bqp_basis.T

    def cell_gradients(self, values) -> np.ndarray:
        """Piecewise-constant gradient, shape ``(n_cells, dim)``."""
        return np.einsum("ck,ckd->cd", np.asarray(values, dtype=float)[self.mesh.cells],
                         self.mesh.basis_gradients)

    def interpolate(self, func) -> "DiscreteField":
        return DiscreteField(self, np.asarray(func(self.mesh.vertices), dtype=float).reshape(-1))

    def zeros(self) -> "DiscreteField":
        return DiscreteField(self, np.zeros(self.dof_count))


@dataclass(frozen=True, eq=False)
class DiscreteField:
    space: FunctionSpace
    nodal_values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.nodal_values, dtype=float).reshape(-1)
        if vals.size != self.space.dof_count:
            raise ValueError(f"expected {self.space.dof_count} values, got {vals.size}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field has non-finite entries")
        object.__setattr__(self, "nodal_values", vals)

    @property
    def values(self) -> np.ndarray:
        return self.nodal_values

    def norms(self, ell: float = 2.0, tag: str = GAMMA) -> dict:
        return norms(self, ell=ell, tag=tag)


@dataclass(frozen=True)
class AssembledForm:
    kind: str
    matrix: sp.csr_matrix | None = None
    vector: np.ndarray | None = None

    def __matmul__(self, other):
        return self.matrix @ other


def _weights_at(weight, points, check_call=None) -> np.ndarray:
    """Quadrature-point samples of a weight given as scalar, callable or array."""
    if callable(weight):
        vals = np.asarray(weight(points), dtype=float)
    else:
        vals = np.asarray(weight, dtype=float)
    return np.broadcast_to(vals, points.shape[:-1])


def _check_positive(vals, allow_nonpositive):
    if not allow_nonpositive and not np.all(vals > 0):
        raise NonpositiveWeight(f"weight must be strictly positive (min {np.min(vals):.3g})")


def _scatter_cells(mesh: Mesh, local: np.ndarray) -> np.ndarray:
    return np.bincount(mesh.cells.reshape(-1), weights=local.sum(axis=1).reshape(-1),
                       minlength=mesh.n_vertices)


def _cell_matrix(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    rows, cols = mesh._pattern
    n = mesh.n_vertices
    return sp.coo_matrix((local.reshape(-1), (rows, cols)), shape=(n, n)).tocsr()


def _facet_matrix(mesh: Mesh, local: np.ndarray, mask: np.ndarray) -> sp.csr_matrix:
    n = mesh.n_vertices
    f = mesh.facets[mask]
    nb = f.shape[1]
    rows = np.repeat(f, nb, axis=1).reshape(-1)
    cols = np.tile(f, (1, nb)).reshape(-1)
    return sp.coo_matrix((local.reshape(-1), (rows, cols)), shape=(n, n)).tocsr()


def assemble_weighted_stiffness(space: FunctionSpace, weight=1.0,
                                allow_nonpositive: bool = False) -> AssembledForm:
    """``int w grad(phi_j) . grad(phi_i)`` for a weight sampled at quadrature points."""
    mesh = space.mesh
    w = _weights_at(weight, mesh.qp_points)
    _check_positive(w, allow_nonpositive)
    cellw = (mesh.qp_weights * w).sum(axis=1)
    G = mesh.basis_gradients
    local = cellw[:, None, None] * np.einsum("cid,cjd->cij", G, G)
    return AssembledForm("stiffness", _cell_matrix(mesh, local))


def assemble_weighted_mass(space: FunctionSpace, weight=1.0, lumped: bool = False,
                           allow_nonpositive: bool = False) -> AssembledForm:
    """``int w phi_j phi_i``; ``lumped`` replaces it by its row sums on the diagonal."""
    mesh = space.mesh
    w = _weights_at(weight, mesh.qp_points)
    _check_positive(w, allow_nonpositive)
    B = mesh.qp_basis
    local = np.einsum("cq,qi,qj->cij", mesh.qp_weights * w, B, B)
    M = _cell_matrix(mesh, local)
    if lumped:
        M = sp.diags(np.asarray(M.sum(axis=1)).ravel()).tocsr()
    return AssembledForm("mass", M)


def assemble_boundary_mass(space: FunctionSpace, weight=1.0, tags=GAMMA) -> AssembledForm:
    mesh = space.mesh
    mask = mesh.facet_mask(tags)
    w = _weights_at(weight, mesh.bqp_points)[mask]
    B = mesh.bqp_basis
    local = np.einsum("fq,qi,qj->fij", mesh.bqp_weights[mask] * w, B, B)
    return AssembledForm("mass", _facet_matrix(mesh, local, mask))


def boundary_integrals(space: FunctionSpace, tags, weight=1.0) -> np.ndarray:
    """``int_part w phi_i`` for each node."""
    mesh = space.mesh
    mask = mesh.facet_mask(tags)
    w = _weights_at(weight, mesh.bqp_points)[mask]
    local = (mesh.bqp_weights[mask] * w) @ mesh.bqp_basis
    return np.bincount(mesh.facets[mask].reshape(-1), weights=local.reshape(-1),
                       minlength=mesh.n_vertices)


def assemble_boundary_power(space: FunctionSpace, gamma_weight, theta, ell: float,
                            tag: str = GAMMA):
    """Residual and jacobian of ``int_Gamma gamma |theta|^(l-2) theta v``.

    ``gamma_weight`` is sampled at boundary quadrature points (scalar, callable
    or array of shape ``(n_facets, n_q)``).
    """
    if ell < 2:
        raise ValueError("ell must be >= 2")
    mesh = space.mesh
    values = theta.nodal_values if isinstance(theta, DiscreteField) else np.asarray(theta, float)
    n = mesh.n_vertices
    mask = mesh.facet_mask(tag)
    if not mask.any():
        return np.zeros(n), sp.csr_matrix((n, n))
    g = _weights_at(gamma_weight, mesh.bqp_points)[mask]
    tq = values[mesh.facets[mask]] @ mesh.bqp_basis.T
    wq = mesh.bqp_weights[mask] * g
    abs_pow = np.abs(tq) ** (ell - 2) if ell != 2 else np.ones_like(tq)
    B = mesh.bqp_basis
    res_local = (wq * abs_pow * tq) @ B
    residual = np.bincount(mesh.facets[mask].reshape(-1), weights=res_local.reshape(-1), minlength=n)
    jac_local = np.einsum("fq,qi,qj->fij", wq * (ell - 1) * abs_pow, B, B)
    return residual, _facet_matrix(mesh, jac_local, mask)


def boundary_power_integral(space: FunctionSpace, gamma_weight, theta, ell: float,
                            tag: str = GAMMA) -> float:
    """``int_Gamma gamma |theta|^l`` with the quadrature used by the residual."""
    mesh = space.mesh
    mask = mesh.facet_mask(tag)
    values = theta.nodal_values if isinstance(theta, DiscreteField) else np.asarray(theta, float)
    if not mask.any():
        return 0.0
    g = _weights_at(gamma_weight, mesh.bqp_points)[mask]
    tq = values[mesh.facets[mask]] @ mesh.bqp_basis.T
    return float(np.sum(mesh.bqp_weights[mask] * g * np.abs(tq) ** ell))


def assemble_boundary_load(space: FunctionSpace, source, tag: str = GAMMA) -> np.ndarray:
    """``int_part s phi_i``; ``source`` is a scalar, callable of ``x`` or array at boundary points."""
    if tag not in TAGS:
        raise ValueError(f"tag must be one of {TAGS}")
    return boundary_integrals(space, tag, source)


def _field_values(field) -> tuple[FunctionSpace | None, np.ndarray]:
    if isinstance(field, DiscreteField):
        return field.space, field.nodal_values
    raise TypeError("expected a DiscreteField")


def norms(field: DiscreteField, ell: float = 2.0, tag: str = GAMMA) -> dict:
    """Volume L2, gradient L2, boundary L^ell and L2 norms.

    Also reports ``l2_lumped``, the nodal-quadrature L2 norm used by the
    energy bookkeeping.
    """
    space, v = _field_values(field)
    mesh = space.mesh
    vq = space.at_qp(v)
    grad = space.cell_gradients(v)
    l2 = np.sqrt(np.sum(mesh.qp_weights * vq**2))
    h1 = np.sqrt(np.sum(mesh.cell_measure * (grad**2).sum(axis=1)))
    mask = mesh.facet_mask(tag)
    if mask.any():
        bq = space.at_bqp(v)[mask]
        bw = mesh.bqp_weights[mask]
        lell = np.sum(bw * np.abs(bq) ** ell) ** (1.0 / ell)
        lb2 = np.sqrt(np.sum(bw * bq**2))
    else:
        lell = lb2 = 0.0
    lumped = np.sqrt(np.sum(space.volume_weights * v**2))
    return {"l2_volume": float(l2), "h1_semi": float(h1), "l_ell_boundary": float(lell),
            "l2_boundary": float(lb2), "l2_lumped": float(lumped)}


def project_mean_zero(field: DiscreteField, mode: str = "volume") -> DiscreteField:
    """Subtract the constant making the volume (or boundary) integral vanish."""
    space, v = _field_values(field)
    if mode not in ("volume", "boundary", MEAN_ZERO_VOLUME, MEAN_ZERO_BOUNDARY):
        raise ValueError(f"unknown mode {mode!r}")
    c = space.constraint_vector(mode)
    shift = float(c @ v) / float(c.sum())
    return DiscreteField(space, v - shift)


def lumped_inner(space: FunctionSpace, u, v=None) -> float:
    u = np.asarray(u, dtype=float)
    v = u if v is None else np.asarray(v, dtype=float)
    return float(np.sum(space.volume_weights * u * v))


# -- CSV output ------------------------------------------------------------------

def write_mesh_csv(mesh: Mesh, directory) -> dict:
    """Write ``vertices.csv``, ``cells.csv`` and ``boundary.csv``; return the paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    coords = ["x", "y"][: mesh.dim]
    paths = {"vertices": d / "vertices.csv", "cells": d / "cells.csv", "boundary": d / "boundary.csv"}
    with open(paths["vertices"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *coords])
        for i, p in enumerate(mesh.vertices):
            w.writerow([i, *(repr(float(c)) for c in p)])
    with open(paths["cells"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *(f"v{k}" for k in range(mesh.cells.shape[1]))])
        for i, c in enumerate(mesh.cells):
            w.writerow([i, *c.tolist()])
    with open(paths["boundary"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *(f"v{k}" for k in range(mesh.facets.shape[1])), "part", "tag"])
        for i, (f, part, tag) in enumerate(zip(mesh.facets, mesh.facet_parts, mesh.facet_tags)):
            w.writerow([i, *f.tolist(), part, tag])
    return paths


def write_fields_csv(path, mesh: Mesh, fields: dict) -> Path:
    """Nodal table with coordinates followed by one column per field."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    coords = ["x", "y"][: mesh.dim]
    names = list(fields)
    cols = [np.asarray(fields[n].nodal_values if isinstance(fields[n], DiscreteField) else fields[n])
            for n in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *coords, *names])
        for i, p in enumerate(mesh.vertices):
            w.writerow([i, *(repr(float(c)) for c in p), *(repr(float(c[i])) for c in cols)])
    return path


def read_fields_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(x) for x in r] for r in body]) if body else np.zeros((0, len(header)))
    return {name: data[:, k] for k, name in enumerate(header)}

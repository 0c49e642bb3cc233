"""Tensor-product Lagrange spaces on the structured meshes, and fields."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, SliceMesh, _CORNERS


@dataclass(frozen=True)
class Element1D:
    family: str  # "DQ" (discontinuous) or "Q" (continuous)
    order: int

    def __post_init__(self):
        if self.family not in ("DQ", "Q"):
            raise ValueError(f"unknown element family {self.family!r}")
        if self.order < 0 or (self.family == "Q" and self.order < 1):
            raise ValueError(f"invalid order {self.order} for {self.family}")

    @property
    def nodes(self):
        if self.order == 0:
            return np.array([0.0])
        return np.linspace(-1.0, 1.0, self.order + 1)

    @property
    def continuous(self):
        return self.family == "Q"

    def __str__(self):
        return f"{self.family}{self.order}"


@dataclass(frozen=True)
class SpaceSpec:
    """Horizontal x vertical tensor product.  On the sphere the two factors
    are the two equiangular panel directions."""

    horizontal: Element1D
    vertical: Element1D
    name: str = ""

    @property
    def fully_discontinuous(self):
        return not (self.horizontal.continuous or self.vertical.continuous)

    @property
    def max_order(self):
        return max(self.horizontal.order, self.vertical.order)

    def __str__(self):
        return self.name or f"{self.horizontal}x{self.vertical}"


def _spec(h, ho, v, vo, name):
    return SpaceSpec(Element1D(h, ho), Element1D(v, vo), name)


V_RHO0 = _spec("DQ", 0, "DQ", 0, "V_rho0")
V_RHO1 = _spec("DQ", 1, "DQ", 1, "V_rho1")
V_THETA0 = _spec("DQ", 0, "Q", 1, "V_theta0")
V_THETA1 = _spec("DQ", 1, "Q", 2, "V_theta1")
V_TILDE1 = _spec("Q", 1, "Q", 1, "V_tilde1")
V_HAT_THETA = _spec("DQ", 1, "DQ", 2, "V_hat_theta")

PRESETS = {s.name: s for s in (V_RHO0, V_RHO1, V_THETA0, V_THETA1, V_TILDE1, V_HAT_THETA)}


def lagrange_1d(nodes, s):
    """Values and derivatives of the Lagrange basis on ``nodes`` at ``s``.

    Returns arrays of shape s.shape + (len(nodes),).
    """
    s = np.asarray(s, dtype=float)[..., None]
    n = len(nodes)
    if n == 1:
        return np.ones(s.shape), np.zeros(s.shape)
    val = np.ones(s.shape[:-1] + (n,))
    der = np.zeros(s.shape[:-1] + (n,))
    for i in range(n):
        others = [nodes[j] for j in range(n) if j != i]
        denom = math.prod(nodes[i] - o for o in others)
        factors = [s[..., 0] - o for o in others]
        val[..., i] = math.prod(factors) / denom
        d = 0.0
        for k in range(len(factors)):
            d = d + math.prod(f for m, f in enumerate(factors) if m != k)
        der[..., i] = d / denom
    return val, der


class FunctionSpace:
    """Scalar tensor-product Lagrange space.

    Local node ``l = iz*(px+1) + ix``.  Global dofs are numbered by first
    appearance scanning cells in order, so a shared dof belongs to its lowest
    incident cell.
    """

    def __init__(self, mesh: Mesh, spec: SpaceSpec):
        self.mesh = mesh
        self.spec = spec
        hx, vz = spec.horizontal, spec.vertical
        self.px, self.pz = hx.order, vz.order
        self.nloc = (self.px + 1) * (self.pz + 1)
        nx_nodes, nz_nodes = hx.nodes, vz.nodes
        ix, iz = np.meshgrid(np.arange(self.px + 1), np.arange(self.pz + 1), indexing="xy")
        self.local_ix, self.local_iz = ix.ravel(), iz.ravel()
        self.node_ref = np.stack([nx_nodes[self.local_ix], nz_nodes[self.local_iz]], axis=-1)
        self.cell_dofs = self._number_dofs()
        self.ndof = int(self.cell_dofs.max()) + 1
        self._cache = {}

    # ------------------------------------------------------------------
    def _number_dofs(self):
        mesh, spec = self.mesh, self.spec
        nc, nloc = mesh.ncells, self.nloc
        if spec.fully_discontinuous:
            return np.arange(nc * nloc).reshape(nc, nloc)
        if isinstance(mesh, SliceMesh):
            keys = self._slice_keys()
        else:
            if not (spec.horizontal.continuous and spec.vertical.continuous
                    and self.px == 1 and self.pz == 1):
                raise ValueError(
                    f"space {spec} is not available on a {mesh.kind} mesh: only fully "
                    "discontinuous spaces and Q1xQ1 are supported there"
                )
            keys = mesh.cell_vertices[:, :, None]  # corner order matches local nodes
        keys = keys.reshape(nc * nloc, -1)
        _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
        # renumber unique keys by order of first appearance
        rank = np.empty(len(first), dtype=int)
        rank[np.argsort(first, kind="stable")] = np.arange(len(first))
        return rank[inverse.ravel()].reshape(nc, nloc)

    def _slice_keys(self):
        mesh = self.mesh
        i, j = mesh.cell_column_level(np.arange(mesh.ncells))
        i, j = i[:, None], j[:, None]
        ix, iz = self.local_ix[None, :], self.local_iz[None, :]

        def part(elem, cell_idx, loc, p, periodic_n):
            # (tag, a, b): tag 0 = shared facet node, 1 = cell-interior node
            if elem.continuous:
                lo, hi = loc == 0, loc == p
                shared_idx = np.where(hi, cell_idx + 1, cell_idx)
                if periodic_n:
                    shared_idx = shared_idx % periodic_n
                tag = np.where(lo | hi, 0, 1)
                a = np.where(lo | hi, shared_idx, cell_idx)
                b = np.where(lo | hi, 0, loc)
            else:
                tag, a, b = 1, cell_idx, loc
            shape = np.broadcast(cell_idx, loc).shape
            return [np.broadcast_to(v, shape) for v in (tag, a, b)]

        kx = part(self.spec.horizontal, i, ix, self.px, mesh.nx)
        kz = part(self.spec.vertical, j, iz, self.pz, 0)
        return np.stack(kx + kz, axis=-1)

    # ------------------------------------------------------------------
    @property
    def fully_discontinuous(self):
        return self.spec.fully_discontinuous

    def tabulate(self, ref):
        """Basis values at reference points: ref (..., 2) -> (..., nloc)."""
        ref = np.asarray(ref, dtype=float)
        vx, _ = lagrange_1d(self.spec.horizontal.nodes, ref[..., 0])
        vz, _ = lagrange_1d(self.spec.vertical.nodes, ref[..., 1])
        return vx[..., self.local_ix] * vz[..., self.local_iz]

    def tabulate_grad(self, ref):
        """Reference gradients: ref (..., 2) -> (..., nloc, 2)."""
        ref = np.asarray(ref, dtype=float)
        vx, dx = lagrange_1d(self.spec.horizontal.nodes, ref[..., 0])
        vz, dz = lagrange_1d(self.spec.vertical.nodes, ref[..., 1])
        gx = dx[..., self.local_ix] * vz[..., self.local_iz]
        gz = vx[..., self.local_ix] * dz[..., self.local_iz]
        return np.stack([gx, gz], axis=-1)

    def cached(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def quadrature_basis(self, nq=None):
        """Basis tabulated at the mesh's cell quadrature points: (Q, nloc)."""
        nq = self.mesh.default_nq if nq is None else nq
        return self.cached(("qbasis", nq), lambda: self.tabulate(self.mesh.cell_quadrature_data(nq).ref))

    @property
    def node_coordinates(self):
        """Physical position of every dof (from its lowest incident cell)."""

        def build():
            x, _ = self.mesh.geometry(np.arange(self.mesh.ncells), self.node_ref)
            coords = np.empty((self.ndof, self.mesh.dim))
            flat = self.cell_dofs.ravel()
            first = np.unique(flat, return_index=True)[1]
            coords[flat[first]] = x.reshape(-1, self.mesh.dim)[first]
            return coords

        return self.cached("coords", build)

    def __repr__(self):
        return f"FunctionSpace({self.spec}, ndof={self.ndof}, mesh={self.mesh.kind})"


def make_space(mesh: Mesh, spec) -> FunctionSpace:
    if isinstance(spec, str):
        spec = PRESETS[spec]
    if mesh.kind != "slice" and (spec.horizontal.continuous != spec.vertical.continuous):
        raise ValueError(f"{spec} has a vertical-continuity structure and needs a slice mesh")
    return FunctionSpace(mesh, spec)


class Field:
    """Coefficient vector over a function space."""

    def __init__(self, space: FunctionSpace, values=None, name=""):
        self.space = space
        if values is None:
            values = np.zeros(space.ndof)
        values = np.asarray(values, dtype=float)
        if values.shape != (space.ndof,):
            raise ValueError(f"expected {space.ndof} coefficients, got shape {values.shape}")
        self.values = values
        self.name = name

    @property
    def mesh(self):
        return self.space.mesh

    def copy(self, name=None):
        return Field(self.space, self.values.copy(), self.name if name is None else name)

    def cell_values(self):
        return self.values[self.space.cell_dofs]

    def at_quadrature(self, nq=None):
        """Values at cell quadrature points, (ncells, Q)."""
        return self.cell_values() @ self.space.quadrature_basis(nq).T

    def at_reference(self, cells, ref):
        """Values at per-cell reference points: cells (n,), ref (n, q, 2) -> (n, q)."""
        phi = self.space.tabulate(ref)
        return np.einsum("nqi,ni->nq", np.broadcast_to(phi, (len(cells),) + phi.shape[-2:]),
                         self.values[self.space.cell_dofs[cells]])

    def __repr__(self):
        return f"Field({self.name or 'unnamed'}, {self.space.spec})"


def interpolate(space: FunctionSpace, f, name="") -> Field:
    """Nodal interpolation; ``f`` maps an (n, dim) coordinate array to (n,)."""
    coords = space.node_coordinates
    vals = np.asarray(f(coords), dtype=float)
    vals = np.broadcast_to(vals, (space.ndof,)).copy()
    bad = ~np.isfinite(vals)
    if bad.any():
        k = int(np.argmax(bad))
        raise ValueError(f"non-finite value {vals[k]} at node {k}, location {coords[k].tolist()}")
    return Field(space, vals, name)


def constant(space: FunctionSpace, c, name="") -> Field:
    return Field(space, np.full(space.ndof, float(c)), name)


def _check_same_mesh(*fields):
    mesh = fields[0].mesh
    for f in fields[1:]:
        if f.mesh is not mesh:
            raise ValueError("fields live on different meshes")
    return mesh


def weighted_gram(wq, phi):
    """Per-cell sum_q wq[c,q] phi[q,i] phi[q,j], shape (ncells, nloc, nloc)."""
    return np.matmul((wq[..., None] * phi).transpose(0, 2, 1), phi)


def _fsum_cells(values, w):
    # per-cell partial sums, then a compensated sum over cells in cell order
    return math.fsum(np.sum(values * w, axis=1))


def integrate(field: Field, nq=None) -> float:
    q = field.mesh.cell_quadrature_data(nq)
    return _fsum_cells(field.at_quadrature(nq), q.w)


def integrate_product(a: Field, b: Field, nq=None) -> float:
    mesh = _check_same_mesh(a, b)
    q = mesh.cell_quadrature_data(nq)
    return _fsum_cells(a.at_quadrature(nq) * b.at_quadrature(nq), q.w)


def cell_integrals(values_at_quad, mesh: Mesh, nq=None):
    """Per-cell integrals of values given at quadrature points."""
    return np.sum(values_at_quad * mesh.cell_quadrature_data(nq).w, axis=1)


def domain_area(mesh: Mesh, nq=None) -> float:
    key = ("_area", nq or mesh.default_nq)
    if key not in mesh.__dict__:
        mesh.__dict__[key] = _fsum_cells(np.ones(1), mesh.cell_quadrature_data(nq).w)
    return mesh.__dict__[key]


def evaluate(field: Field, cell: int, ref_point) -> float:
    ref_point = np.asarray(ref_point, dtype=float)
    if ref_point.shape != (2,) or np.any(np.abs(ref_point) > 1.0 + 1e-14):
        raise ValueError(f"reference point {ref_point} outside [-1, 1]^2")
    phi = field.space.tabulate(ref_point)
    return float(phi @ field.values[field.space.cell_dofs[cell]])


def vertex_values(field: Field):
    """Values at the four corners of every cell, (ncells, 4)."""
    phi = field.space.cached("corners", lambda: field.space.tabulate(_CORNERS))
    return field.cell_values() @ phi.T


def evaluate_at_vertices(field: Field, cell: int):
    return vertex_values(field)[cell]


def write_field_csv(field: Field, path):
    coords = field.space.node_coordinates
    axes = ["x", "y", "z"][: coords.shape[1]]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dof", *axes, "value"])
        for k in range(field.space.ndof):
            w.writerow([k, *(f"{c:.17g}" for c in coords[k]), f"{field.values[k]:.17g}"])


def lonlat(xyz):
    """Longitude in [-pi, pi) and latitude of points on a sphere."""
    xyz = np.asarray(xyz)
    lon = np.arctan2(xyz[..., 1], xyz[..., 0])
    r = np.linalg.norm(xyz, axis=-1)
    lat = np.arcsin(np.clip(xyz[..., 2] / r, -1.0, 1.0))
    return lon, lat


def cached_space(mesh: Mesh, spec) -> FunctionSpace:
    """One FunctionSpace instance per (mesh, spec), so tabulations are reused."""
    if isinstance(spec, str):
        spec = PRESETS[spec]
    store = mesh.__dict__.setdefault("_spaces", {})
    if spec not in store:
        store[spec] = make_space(mesh, spec)
    return store[spec]

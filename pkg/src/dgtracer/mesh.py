"""Structured quadrilateral meshes: a periodic vertical slice and an
equiangular gnomonic cubed sphere.

Every cell is parameterised by reference coordinates (xi, eta) in [-1, 1]^2.
Local facets are numbered

    0: xi = -1 (left)    1: xi = +1 (right)
    2: eta = -1 (bottom) 3: eta = +1 (top)

and a facet is traversed by a parameter s in [-1, 1] running along eta for
facets 0/1 and along xi for facets 2/3.  Corner ordering for ``cell_vertices``
is (-1,-1), (+1,-1), (-1,+1), (+1,+1).

Interior facets are stored once, as explicit (+ cell, + local facet,
- cell, - local facet, reversed) records.  ``reversed`` means the - side
traverses the shared edge in the opposite direction, so the - side parameter
is -s.  Fluxes are always evaluated at the + side's quadrature points.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

# (xi, eta) of the facet point at parameter s, for each local facet
_FACET_AXIS = np.array([1, 1, 0, 0])  # reference direction along the facet
_FACET_FIXED = np.array([-1.0, 1.0, -1.0, 1.0])  # value of the fixed coordinate
_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]])


def facet_reference_points(local_facet, s):
    """Reference coordinates of points at parameter ``s`` on ``local_facet``.

    ``local_facet`` has shape (n,) and ``s`` shape (n, q) or (q,).
    Returns an array of shape (n, q, 2).
    """
    local_facet = np.asarray(local_facet)
    s = np.broadcast_to(s, (local_facet.size,) + np.shape(s)[-1:])
    out = np.empty(s.shape + (2,))
    along = _FACET_AXIS[local_facet][:, None]
    fixed = _FACET_FIXED[local_facet][:, None]
    out[..., 0] = np.where(along == 0, s, fixed)
    out[..., 1] = np.where(along == 1, s, fixed)
    return out


def gauss_legendre(n):
    if n < 1:
        raise ValueError(f"quadrature needs at least one point per direction, got {n}")
    return np.polynomial.legendre.leggauss(n)


@dataclass
class CellQuadrature:
    """Tensor Gauss rule mapped onto every cell.

    ``ref`` (Q, 2); ``x`` (ncells, Q, dim); ``w`` (ncells, Q) including the
    area element; ``contra`` (ncells, Q, 2, dim) maps a physical tangent
    vector to reference components, so u . grad(phi) = (contra @ u) . grad_ref(phi).
    """

    ref: np.ndarray
    x: np.ndarray
    w: np.ndarray
    contra: np.ndarray


@dataclass
class FacetQuadrature:
    """Gauss rule on every interior facet, shared by both sides."""

    s: np.ndarray
    plus_ref: np.ndarray
    minus_ref: np.ndarray
    x: np.ndarray
    normal: np.ndarray
    w: np.ndarray


@dataclass
class BoundaryQuadrature:
    s: np.ndarray
    ref: np.ndarray
    x: np.ndarray
    normal: np.ndarray
    w: np.ndarray


@dataclass(eq=False)
class Mesh:
    """Base class; use :func:`build_slice_mesh` or :func:`build_cubed_sphere_mesh`."""

    kind: str
    vertices: np.ndarray
    cell_vertices: np.ndarray
    plus_cell: np.ndarray
    plus_facet: np.ndarray
    minus_cell: np.ndarray
    minus_facet: np.ndarray
    reversed: np.ndarray
    boundary_cell: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    boundary_facet: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    boundary_tag: tuple = ()
    default_nq: int = 4

    def __post_init__(self):
        self._quad_cache = {}

    @property
    def ncells(self):
        return len(self.cell_vertices)

    @property
    def nfacets(self):
        return len(self.plus_cell)

    @property
    def dim(self):
        return self.vertices.shape[1]

    def geometry(self, cells, ref):
        """Physical points and Jacobians at reference points.

        ``cells`` (n,), ``ref`` (n, q, 2) or (q, 2).  Returns x (n, q, dim) and
        J (n, q, dim, 2) with J[..., :, a] = dx/d(ref_a).
        """
        raise NotImplementedError

    @cached_property
    def facet_of_cell(self):
        """(ncells, 4) array: interior facet index or -1 for boundary."""
        out = -np.ones((self.ncells, 4), dtype=int)
        idx = np.arange(self.nfacets)
        out[self.plus_cell, self.plus_facet] = idx
        out[self.minus_cell, self.minus_facet] = idx
        return out

    def with_default_nq(self, nq):
        self.default_nq = int(nq)
        return self

    # ------------------------------------------------------------------
    # quadrature
    # ------------------------------------------------------------------
    def cell_quadrature_data(self, nq=None) -> CellQuadrature:
        nq = self.default_nq if nq is None else nq
        key = ("cell", nq)
        if key not in self._quad_cache:
            pts, wts = gauss_legendre(nq)
            xi, eta = np.meshgrid(pts, pts, indexing="xy")
            ref = np.stack([xi.ravel(), eta.ravel()], axis=-1)
            wref = np.outer(wts, wts).ravel()
            cells = np.arange(self.ncells)
            x, J = self.geometry(cells, ref)
            JtJ = np.einsum("nqda,nqdb->nqab", J, J)
            det = np.sqrt(np.linalg.det(JtJ))
            contra = np.einsum("nqab,nqdb->nqad", np.linalg.inv(JtJ), J)
            self._quad_cache[key] = CellQuadrature(ref, x, wref[None, :] * det, contra)
        return self._quad_cache[key]

    def _facet_frame(self, cells, local_facet, ref):
        x, J = self.geometry(cells, ref)
        along = _FACET_AXIS[local_facet]
        across = 1 - along
        tangent = np.take_along_axis(J, along[:, None, None, None], axis=3)[..., 0]
        outward = np.take_along_axis(J, across[:, None, None, None], axis=3)[..., 0]
        outward = outward * _FACET_FIXED[local_facet][:, None, None]
        length = np.linalg.norm(tangent, axis=-1)
        normal = self._normal(x, tangent, outward)
        return x, normal, length

    def _normal(self, x, tangent, outward):
        # component of the outward direction orthogonal to the facet tangent
        t = tangent / np.linalg.norm(tangent, axis=-1, keepdims=True)
        nrm = outward - np.sum(outward * t, axis=-1, keepdims=True) * t
        return nrm / np.linalg.norm(nrm, axis=-1, keepdims=True)

    def facet_quadrature_data(self, nq=None) -> FacetQuadrature:
        nq = self.default_nq if nq is None else nq
        key = ("facet", nq)
        if key not in self._quad_cache:
            s, ws = gauss_legendre(nq)
            plus_ref = facet_reference_points(self.plus_facet, s)
            s_minus = np.where(self.reversed[:, None], -s[None, :], s[None, :])
            minus_ref = facet_reference_points(self.minus_facet, s_minus)
            x, normal, length = self._facet_frame(self.plus_cell, self.plus_facet, plus_ref)
            self._quad_cache[key] = FacetQuadrature(
                s, plus_ref, minus_ref, x, normal, ws[None, :] * length
            )
        return self._quad_cache[key]

    def boundary_quadrature_data(self, nq=None) -> BoundaryQuadrature:
        nq = self.default_nq if nq is None else nq
        key = ("boundary", nq)
        if key not in self._quad_cache:
            s, ws = gauss_legendre(nq)
            ref = facet_reference_points(self.boundary_facet, s)
            if len(self.boundary_cell):
                x, normal, length = self._facet_frame(self.boundary_cell, self.boundary_facet, ref)
            else:
                x = normal = np.zeros((0, nq, self.dim))
                length = np.zeros((0, nq))
            self._quad_cache[key] = BoundaryQuadrature(s, ref, x, normal, ws[None, :] * length)
        return self._quad_cache[key]

    # ------------------------------------------------------------------
    # dumps
    # ------------------------------------------------------------------
    def to_dict(self):
        facets = [
            {
                "plus": [int(c), int(f)],
                "minus": [int(cm), int(fm)],
                "reversed": bool(r),
            }
            for c, f, cm, fm, r in zip(
                self.plus_cell, self.plus_facet, self.minus_cell, self.minus_facet, self.reversed
            )
        ]
        boundary = [
            {"cell": int(c), "facet": int(f), "tag": t}
            for c, f, t in zip(self.boundary_cell, self.boundary_facet, self.boundary_tag)
        ]
        return {
            "kind": self.kind,
            "conventions": {
                "reference_cell": "[-1,1]^2 with coordinates (xi, eta)",
                "local_facets": {"0": "xi=-1", "1": "xi=+1", "2": "eta=-1", "3": "eta=+1"},
                "facet_parameter": "s runs along eta on facets 0/1 and along xi on facets 2/3",
                "corner_order": ["(-1,-1)", "(+1,-1)", "(-1,+1)", "(+1,+1)"],
                "reversed": "minus side traverses the edge with parameter -s",
                **self._extra_conventions(),
            },
            "vertices": self.vertices.tolist(),
            "cells": self.cell_vertices.tolist(),
            "interior_facets": facets,
            "boundary_facets": boundary,
        }

    def _extra_conventions(self):
        return {}

    def dump_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


# ----------------------------------------------------------------------
# periodic vertical slice
# ----------------------------------------------------------------------
@dataclass(eq=False)
class SliceMesh(Mesh):
    nx: int = 0
    nz: int = 0
    Lx: float = 1.0
    Hz: float = 1.0

    @property
    def dx(self):
        return self.Lx / self.nx

    @property
    def dz(self):
        return self.Hz / self.nz

    def cell_index(self, i, j):
        return j * self.nx + i

    def cell_column_level(self, cells):
        cells = np.asarray(cells)
        return cells % self.nx, cells // self.nx

    def geometry(self, cells, ref):
        i, j = self.cell_column_level(cells)
        ref = np.broadcast_to(ref, (len(i),) + np.shape(ref)[-2:])
        x = np.empty(ref.shape)
        x[..., 0] = (i[:, None] + 0.5 * (ref[..., 0] + 1.0)) * self.dx
        x[..., 1] = (j[:, None] + 0.5 * (ref[..., 1] + 1.0)) * self.dz
        J = np.zeros(ref.shape[:2] + (2, 2))
        J[..., 0, 0] = 0.5 * self.dx
        J[..., 1, 1] = 0.5 * self.dz
        return x, J

    def _normal(self, x, tangent, outward):
        # axis-aligned: avoid rounding in the generic projection
        return np.sign(outward) * (np.abs(outward) > 0)

    def _extra_conventions(self):
        return {
            "cell_numbering": "cell = j*nx + i (i column, j level)",
            "vertex_numbering": "vertex = j*nx + i, periodic in x (nx columns, nz+1 levels)",
            "Lx": self.Lx,
            "Hz": self.Hz,
        }


def build_slice_mesh(nx, nz, Lx, Hz) -> SliceMesh:
    """Uniform periodic-in-x slice of nx*nz quads with rigid top and bottom."""
    if nx < 2:
        raise ValueError(
            f"nx={nx}: a periodic slice needs nx >= 2, otherwise a vertical facet "
            "would join a cell to itself (self-adjacency)"
        )
    if nz < 1:
        raise ValueError(f"nz must be >= 1, got {nz}")
    if not (Lx > 0 and Hz > 0):
        raise ValueError(f"domain sizes must be positive, got Lx={Lx}, Hz={Hz}")

    ii, jj = np.meshgrid(np.arange(nx), np.arange(nz + 1), indexing="xy")
    vertices = np.stack([ii.ravel() * (Lx / nx), jj.ravel() * (Hz / nz)], axis=-1)

    ci, cj = np.meshgrid(np.arange(nx), np.arange(nz), indexing="xy")
    ci, cj = ci.ravel(), cj.ravel()
    cells = cj * nx + ci
    ip1 = (ci + 1) % nx
    cell_vertices = np.stack(
        [cj * nx + ci, cj * nx + ip1, (cj + 1) * nx + ci, (cj + 1) * nx + ip1], axis=-1
    )

    # vertical facets (periodic in x): + is (i, j) right, - is (i+1, j) left
    vp = cells
    vm = cj * nx + ip1
    # horizontal facets: + is (i, j) top, - is (i, j+1) bottom
    inner = cj < nz - 1
    hp = cells[inner]
    hm = cells[inner] + nx
    plus_cell = np.concatenate([vp, hp])
    minus_cell = np.concatenate([vm, hm])
    plus_facet = np.concatenate([np.full(len(vp), 1), np.full(len(hp), 3)])
    minus_facet = np.concatenate([np.full(len(vm), 0), np.full(len(hm), 2)])

    bottom = np.arange(nx)
    top = (nz - 1) * nx + np.arange(nx)
    return SliceMesh(
        kind="slice",
        vertices=vertices,
        cell_vertices=cell_vertices,
        plus_cell=plus_cell,
        plus_facet=plus_facet,
        minus_cell=minus_cell,
        minus_facet=minus_facet,
        reversed=np.zeros(len(plus_cell), dtype=bool),
        boundary_cell=np.concatenate([bottom, top]),
        boundary_facet=np.concatenate([np.full(nx, 2), np.full(nx, 3)]),
        boundary_tag=("bottom",) * nx + ("top",) * nx,
        nx=nx,
        nz=nz,
        Lx=float(Lx),
        Hz=float(Hz),
    )


# ----------------------------------------------------------------------
# equiangular gnomonic cubed sphere
# ----------------------------------------------------------------------
# Panel frames (normal, e_alpha, e_beta); e_alpha x e_beta = normal so every
# panel's reference orientation points out of the sphere.
PANEL_FRAMES = np.array(
    [
        [[1, 0, 0], [0, 1, 0], [0, 0, 1]],
        [[0, 1, 0], [-1, 0, 0], [0, 0, 1]],
        [[-1, 0, 0], [0, -1, 0], [0, 0, 1]],
        [[0, -1, 0], [1, 0, 0], [0, 0, 1]],
        [[0, 0, 1], [0, 1, 0], [-1, 0, 0]],
        [[0, 0, -1], [0, 1, 0], [1, 0, 0]],
    ],
    dtype=float,
)


def _equiangular_tan(index, ne):
    """tan of the equiangular coordinate for lattice index in [-ne, ne] (step 2)."""
    index = np.asarray(index, dtype=float)
    out = np.tan(index * (math.pi / (4 * ne)))
    out = np.where(index == ne, 1.0, out)
    out = np.where(index == -ne, -1.0, out)
    return np.where(index == 0, 0.0, out)


@dataclass(eq=False)
class CubedSphereMesh(Mesh):
    ne: int = 1
    radius: float = 1.0
    panel: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    alpha0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    beta0: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def dangle(self):
        return 0.5 * math.pi / self.ne

    def geometry(self, cells, ref):
        cells = np.asarray(cells)
        ref = np.broadcast_to(ref, (len(cells),) + np.shape(ref)[-2:])
        h = 0.5 * self.dangle
        alpha = self.alpha0[cells][:, None] + h * (ref[..., 0] + 1.0)
        beta = self.beta0[cells][:, None] + h * (ref[..., 1] + 1.0)
        X, Y = np.tan(alpha), np.tan(beta)
        frames = PANEL_FRAMES[self.panel[cells]]  # (n, 3, 3)
        e0, e1, e2 = frames[:, None, 0], frames[:, None, 1], frames[:, None, 2]
        v = e0 + X[..., None] * e1 + Y[..., None] * e2
        delta = np.sqrt(1.0 + X**2 + Y**2)[..., None]
        a = self.radius
        x = a * v / delta
        dX = a * (e1 / delta - v * X[..., None] / delta**3)
        dY = a * (e2 / delta - v * Y[..., None] / delta**3)
        J = np.empty(x.shape + (2,))
        J[..., 0] = dX * ((1.0 + X**2) * h)[..., None]
        J[..., 1] = dY * ((1.0 + Y**2) * h)[..., None]
        return x, J

    def _normal(self, x, tangent, outward):
        rhat = x / np.linalg.norm(x, axis=-1, keepdims=True)
        n = np.cross(tangent, rhat)
        n /= np.linalg.norm(n, axis=-1, keepdims=True)
        sign = np.sign(np.sum(n * outward, axis=-1, keepdims=True))
        return n * sign

    def area_element(self, alpha, beta):
        """Analytic surface element dA/(d alpha d beta)."""
        X, Y = np.tan(alpha), np.tan(beta)
        d2 = 1.0 + X**2 + Y**2
        return self.radius**2 * (1.0 + X**2) * (1.0 + Y**2) / d2**1.5

    def _extra_conventions(self):
        return {
            "panels": "0:+x 1:+y 2:-x 3:-y 4:+z 5:-z; frames (normal, e_alpha, e_beta) "
            + json.dumps(PANEL_FRAMES.astype(int).tolist()),
            "cell_numbering": "cell = panel*ne*ne + j*ne + i, alpha index i, beta index j",
            "equiangular": "alpha, beta in [-pi/4, pi/4], point = a*(n + tan(alpha) e_alpha + tan(beta) e_beta)/|.|",
            "radius": self.radius,
            "ne": self.ne,
        }


def build_cubed_sphere_mesh(ne, a) -> CubedSphereMesh:
    """Equiangular gnomonic cubed sphere with ne x ne cells per panel."""
    if ne < 1:
        raise ValueError(f"ne must be >= 1, got {ne}")
    if not a > 0:
        raise ValueError(f"radius must be positive, got {a}")

    # vertices are identified through integer lattice keys on the cube surface
    key_to_vertex = {}
    vertex_lattice = []
    grid_vertex = np.empty((6, ne + 1, ne + 1), dtype=int)
    for p in range(6):
        e0, e1, e2 = PANEL_FRAMES[p].astype(int)
        for j in range(ne + 1):
            for i in range(ne + 1):
                I, J = 2 * i - ne, 2 * j - ne
                key = tuple(ne * e0 + I * e1 + J * e2)
                if key not in key_to_vertex:
                    key_to_vertex[key] = len(vertex_lattice)
                    vertex_lattice.append((p, I, J))
                grid_vertex[p, j, i] = key_to_vertex[key]
    verts = []
    for p, I, J in vertex_lattice:
        e0, e1, e2 = PANEL_FRAMES[p]
        v = e0 + _equiangular_tan(I, ne) * e1 + _equiangular_tan(J, ne) * e2
        verts.append(a * v / np.linalg.norm(v))
    vertices = np.array(verts)

    # cell = p*ne*ne + j*ne + i
    panel, cj, ci = (g.ravel() for g in np.meshgrid(
        np.arange(6), np.arange(ne), np.arange(ne), indexing="ij"))
    cell_vertices = np.stack(
        [
            grid_vertex[panel, cj, ci],
            grid_vertex[panel, cj, ci + 1],
            grid_vertex[panel, cj + 1, ci],
            grid_vertex[panel, cj + 1, ci + 1],
        ],
        axis=-1,
    )
    dangle = 0.5 * math.pi / ne
    alpha0 = -0.25 * math.pi + ci * dangle
    beta0 = -0.25 * math.pi + cj * dangle

    # local facet -> (start corner, end corner) in traversal direction
    facet_corners = [(0, 2), (1, 3), (0, 1), (2, 3)]
    seen = {}
    plus_cell, plus_facet, minus_cell, minus_facet, rev = [], [], [], [], []
    for c in range(len(cell_vertices)):
        for lf, (s0, s1) in enumerate(facet_corners):
            v0, v1 = cell_vertices[c, s0], cell_vertices[c, s1]
            key = (min(v0, v1), max(v0, v1))
            if key in seen:
                pc, plf, pv0 = seen.pop(key)
                plus_cell.append(pc)
                plus_facet.append(plf)
                minus_cell.append(c)
                minus_facet.append(lf)
                rev.append(pv0 != v0)
            else:
                seen[key] = (c, lf, v0)
    if seen:
        raise RuntimeError("cubed-sphere construction left unmatched edges")
    order = np.lexsort((np.array(plus_facet), np.array(plus_cell)))
    return CubedSphereMesh(
        kind="cubed-sphere",
        vertices=vertices,
        cell_vertices=cell_vertices,
        plus_cell=np.array(plus_cell)[order],
        plus_facet=np.array(plus_facet)[order],
        minus_cell=np.array(minus_cell)[order],
        minus_facet=np.array(minus_facet)[order],
        reversed=np.array(rev, dtype=bool)[order],
        ne=ne,
        radius=float(a),
        panel=panel,
        alpha0=alpha0,
        beta0=beta0,
    )


def cell_quadrature(mesh: Mesh, cell: int, n_q: int):
    """Physical points and area-weighted weights for one cell."""
    if not 0 <= cell < mesh.ncells:
        raise IndexError(f"cell {cell} out of range [0, {mesh.ncells})")
    q = mesh.cell_quadrature_data(n_q)
    return q.x[cell], q.w[cell]


def facet_quadrature(mesh: Mesh, facet: int, n_q: int):
    """Points, + side unit normals, length-weighted weights, and the reference
    points of the + and - sides (matched ordering) for one interior facet."""
    if not 0 <= facet < mesh.nfacets:
        raise IndexError(f"facet {facet} out of range [0, {mesh.nfacets})")
    q = mesh.facet_quadrature_data(n_q)
    return q.x[facet], q.normal[facet], q.w[facet], q.plus_ref[facet], q.minus_ref[facet]


def boundary_quadrature(mesh: Mesh, index: int, n_q: int):
    q = mesh.boundary_quadrature_data(n_q)
    if not 0 <= index < len(mesh.boundary_cell):
        raise IndexError(f"boundary facet {index} out of range")
    return q.x[index], q.normal[index], q.w[index]

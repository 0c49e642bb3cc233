"""Mappings between function spaces: Galerkin projections (plain, conservative
and consistent-conservative), averaging recovery, injection into fully
discontinuous spaces, and the recovery compositions."""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import SliceMesh
from .space import Field, FunctionSpace, V_TILDE1, cached_space, domain_area, integrate, weighted_gram


@dataclass(frozen=True)
class SolverOptions:
    """Solver used for mass matrices of spaces with continuous directions.

    ``kind`` is "direct" (sparse LU) or "cg" (Jacobi-preconditioned conjugate
    gradients stopped at ``rtol`` relative residual).  Fully discontinuous
    targets are always solved cell by cell with dense LAPACK.
    """

    kind: str = "direct"
    rtol: float = 1e-13
    maxiter: int = 10000

    def __post_init__(self):
        if self.kind not in ("direct", "cg"):
            raise ValueError(f"unknown solver kind {self.kind!r}")

    def as_dict(self):
        return asdict(self)


DEFAULT_SOLVER = SolverOptions()


class ProjectionError(RuntimeError):
    pass


# ----------------------------------------------------------------------
# assembly helpers
# ----------------------------------------------------------------------
def _quad_weights(space: FunctionSpace, weight_q=None):
    w = space.mesh.cell_quadrature_data().w
    return w if weight_q is None else w * weight_q


def local_mass(space: FunctionSpace, weight_q=None):
    """Per-cell (optionally weighted) mass matrices, (ncells, nloc, nloc)."""
    phi = space.quadrature_basis()
    return weighted_gram(_quad_weights(space, weight_q), phi)


def local_load(space: FunctionSpace, g_q):
    """Per-cell load vectors  int(phi_i g), from g at quadrature points."""
    phi = space.quadrature_basis()
    return (_quad_weights(space) * g_q) @ phi


def assemble_vector(space: FunctionSpace, local):
    return np.bincount(space.cell_dofs.ravel(), weights=local.ravel(), minlength=space.ndof)


def assemble_matrix(space: FunctionSpace, local):
    dofs = space.cell_dofs
    rows = np.repeat(dofs, dofs.shape[1], axis=1).ravel()
    cols = np.tile(dofs, (1, dofs.shape[1])).ravel()
    return sp.csc_matrix((local.ravel(), (rows, cols)), shape=(space.ndof, space.ndof))


def _check_weight(weight_q, what):
    if weight_q is None:
        return
    bad = weight_q <= 0.0
    if bad.any():
        cells = np.unique(np.nonzero(bad)[0])
        raise ProjectionError(
            f"{what}: density weight is not positive at quadrature points of "
            f"{len(cells)} cell(s), first cell {cells[0]} (min {weight_q.min():.3e}); "
            "the weighted mass matrix would be singular or indefinite"
        )


def solve_mass(space: FunctionSpace, load_local, weight_q=None, solver=None, what="projection"):
    """Solve  M x = b  where M is the (weighted) mass matrix of ``space``."""
    solver = solver or DEFAULT_SOLVER
    _check_weight(weight_q, what)
    if space.fully_discontinuous:
        if weight_q is None:
            inv = space.cached("inv_mass", lambda: np.linalg.inv(local_mass(space)))
            x = np.matmul(inv, load_local[..., None])[..., 0]
        else:
            x = np.linalg.solve(local_mass(space, weight_q), load_local[..., None])[..., 0]
        out = np.empty(space.ndof)
        out[space.cell_dofs] = x
        return out

    b = assemble_vector(space, load_local)
    if weight_q is None:
        A = space.cached("mass", lambda: assemble_matrix(space, local_mass(space)))
    else:
        A = assemble_matrix(space, local_mass(space, weight_q))
    if solver.kind == "direct":
        if weight_q is None:
            lu = space.cached("mass_lu", lambda: spla.splu(A))
        else:
            lu = spla.splu(A)
        return lu.solve(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(space.ndof)
    diag = A.diagonal()
    precond = spla.LinearOperator(A.shape, matvec=lambda v: v / diag)
    x, info = spla.cg(A, b, rtol=solver.rtol, atol=0.0, maxiter=solver.maxiter, M=precond)
    res = np.linalg.norm(b - A @ x)
    if info != 0 or res > 10 * solver.rtol * bnorm:
        raise ProjectionError(
            f"{what}: CG did not converge (info={info}, residual {res:.3e}, "
            f"tolerance {solver.rtol:.1e} x |b| = {solver.rtol * bnorm:.3e})"
        )
    return x


def _check_mesh(*fields_or_spaces):
    meshes = {id(f.mesh) for f in fields_or_spaces}
    if len(meshes) != 1:
        raise ValueError("all inputs must live on the same mesh")


# ----------------------------------------------------------------------
# projections
# ----------------------------------------------------------------------
def galerkin_project(q: Field, target: FunctionSpace, solver=None) -> Field:
    """L2 projection: int(psi q_new) = int(psi q) for all psi in target."""
    _check_mesh(q, target)
    load = local_load(target, q.at_quadrature())
    return Field(target, solve_mass(target, load, solver=solver, what="galerkin_project"), q.name)


def global_mean(m: Field) -> float:
    return integrate(m) / domain_area(m.mesh)


def conservative_project(m: Field, rho_orig: Field, rho_target: Field, target: FunctionSpace,
                         consistent=False, shift=None, solver=None) -> Field:
    """Tracer-mass conserving projection of a mixing ratio.

    Solves  int(psi rho_t (m_new - c)) = int(psi rho_o (m - c))  with c = 0,
    or c = global mean of m when ``consistent`` (an explicit ``shift``
    overrides).  With c != 0, tracer mass is conserved when int(rho_t) =
    int(rho_o), and a constant m is reproduced exactly.
    """
    _check_mesh(m, rho_orig, rho_target, target)
    c = shift if shift is not None else (global_mean(m) if consistent else 0.0)
    rho_o = rho_orig.at_quadrature()
    rho_t = rho_target.at_quadrature()
    load = local_load(target, rho_o * (m.at_quadrature() - c))
    x = solve_mass(target, load, weight_q=rho_t, solver=solver, what="conservative_project")
    return Field(target, x + c, m.name)


def consistent_conservative_project(m, rho_orig, rho_target, target, solver=None) -> Field:
    return conservative_project(m, rho_orig, rho_target, target, consistent=True, solver=solver)


# ----------------------------------------------------------------------
# recovery and injection
# ----------------------------------------------------------------------
def _values_at_target_nodes(q: Field, target: FunctionSpace):
    """Source evaluated at each target node, from every incident cell: (ncells, nloc_t)."""
    phi = q.space.tabulate(target.node_ref)
    return q.cell_values() @ phi.T


def recover_average(q: Field, target: FunctionSpace | None = None) -> Field:
    """Averaging recovery into the continuous bilinear space.

    Each node takes the mean of the source's values at that node over the
    incident cells.  On a slice, a source that is cell-constant in the
    vertical is extrapolated linearly to the top and bottom nodes so that
    linear profiles are recovered exactly.
    """
    if not q.space.fully_discontinuous and not isinstance(q.mesh, SliceMesh):
        raise ValueError("recovery source must be fully discontinuous on the sphere")
    target = target or cached_space(q.mesh, V_TILDE1)
    _check_mesh(q, target)
    vals = _values_at_target_nodes(q, target)
    dofs = target.cell_dofs.ravel()
    total = np.bincount(dofs, weights=vals.ravel(), minlength=target.ndof)
    count = np.bincount(dofs, minlength=target.ndof)
    out = total / count
    mesh = q.mesh
    if isinstance(mesh, SliceMesh) and q.space.spec.vertical.order == 0:
        _extrapolate_vertical_boundaries(q, target, out)
    return Field(target, out, q.name)


def _level_grid(target: FunctionSpace):
    """(nz+1, nx) array of the continuous bilinear dofs at each vertex."""
    mesh = target.mesh
    xz = target.node_coordinates
    col = np.rint(xz[:, 0] / mesh.dx).astype(int) % mesh.nx
    lev = np.rint(xz[:, 1] / mesh.dz).astype(int)
    grid = -np.ones((mesh.nz + 1, mesh.nx), dtype=int)
    grid[lev, col] = np.arange(target.ndof)
    return grid


def _extrapolate_vertical_boundaries(q: Field, target: FunctionSpace, out):
    mesh = q.mesh
    if q.space.spec.horizontal.order != 0 or target.spec.horizontal.order != 1:
        raise ValueError("vertical boundary extrapolation expects a cell-constant source")
    grid = target.cached("level_grid", lambda: _level_grid(target))
    nz = mesh.nz
    if nz >= 3:
        out[grid[0]] = 2.0 * out[grid[1]] - out[grid[2]]
        out[grid[nz]] = 2.0 * out[grid[nz - 1]] - out[grid[nz - 2]]
        return
    # too few levels for node extrapolation: extrapolate from the cell layers
    cv = q.cell_values()[:, 0].reshape(nz, mesh.nx)
    layer = 0.5 * (cv + np.roll(cv, 1, axis=1))  # value at each vertex column
    if nz == 1:
        out[grid[0]] = layer[0]
        out[grid[1]] = layer[0]
    else:
        out[grid[0]] = 1.5 * layer[0] - 0.5 * layer[1]
        out[grid[nz]] = 1.5 * layer[nz - 1] - 0.5 * layer[nz - 2]


def _check_embedding(src: FunctionSpace, target: FunctionSpace):
    if not target.fully_discontinuous:
        raise ValueError(f"injection target {target.spec} must be fully discontinuous")
    for a, b in ((src.spec.horizontal, target.spec.horizontal), (src.spec.vertical, target.spec.vertical)):
        if a.order > b.order:
            raise ValueError(f"cannot inject {src.spec} into {target.spec}: target is not a superset")
    _check_mesh(src, target)


def inject(q: Field, target: FunctionSpace) -> Field:
    """Exact embedding into a fully discontinuous superset space (nodal copy)."""
    _check_embedding(q.space, target)
    out = np.empty(target.ndof)
    out[target.cell_dofs] = _values_at_target_nodes(q, target)
    return Field(target, out, q.name)


def conservative_inject(m: Field, rho_orig: Field, rho_hat: Field, target: FunctionSpace,
                        consistent=False, solver=None) -> Field:
    """Cellwise tracer-mass conserving map into a fully discontinuous space."""
    if not target.fully_discontinuous:
        raise ValueError(f"conservative injection target {target.spec} must be fully discontinuous")
    return conservative_project(m, rho_orig, rho_hat, target, consistent=consistent, solver=solver)


def recovery(q: Field, target: FunctionSpace, tilde: FunctionSpace | None = None, solver=None) -> Field:
    """Recovered-space map of a lowest-order field into ``target``:
    inject(R q) + inject(q - P R q), which preserves the integral of q."""
    r = recover_average(q, tilde)
    corr = Field(q.space, q.values - galerkin_project(r, q.space, solver=solver).values)
    out = inject(r, target)
    out.values += inject(corr, target).values
    out.name = q.name
    return out


def conservative_recovery(m: Field, rho_orig: Field, rho_rec: Field, tilde: FunctionSpace | None = None,
                          solver=None) -> Field:
    """Tracer-mass conserving and consistent recovery of a mixing ratio.

    ``rho_rec`` must be the recovered density (same integral as ``rho_orig``)
    in the transport space.  With rho~ = R rho, m~ = R m and c = mean(m~):

        t1 : int(psi rho_rec (t1 - c)) = int(psi rho~ (m~ - c))      in the transport space
        p  : int(psi rho   (p  - c))   = int(psi rho~ (m~ - c))      in the space of m
        t2 : int(psi rho_rec t2)       = int(psi rho (m - p))        in the transport space

    and the result is t1 + t2, so int(rho_rec m_new) = int(rho m) and a
    constant m maps to the same constant.
    """
    target = rho_rec.space
    rho_t = recover_average(rho_orig, tilde)
    m_t = recover_average(m, tilde)
    c = global_mean(m_t)
    t1 = conservative_project(m_t, rho_t, rho_rec, target, shift=c, solver=solver)
    p = conservative_project(m_t, rho_t, rho_orig, m.space, shift=c, solver=solver)
    delta = Field(m.space, m.values - p.values)
    t2 = conservative_project(delta, rho_orig, rho_rec, target, solver=solver)
    return Field(target, t1.values + t2.values, m.name)

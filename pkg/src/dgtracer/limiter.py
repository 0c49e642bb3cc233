"""Non-negativity limiters for order-1 co-located mixing ratios.

The mean-mixing-ratio (MMR) limiter blends m with its cell-mean mixing ratio
m_bar (same tracer mass per cell) just enough to make every vertex value
non-negative, so per-cell tracer mass is untouched.  The baseline limiter is
a simple mean-preserving slope scaling used with the advective scheme.
"""
from __future__ import annotations

import numpy as np

from .remap import global_mean
from .space import V_RHO0, Field, cached_space, vertex_values


def mean_mixing_ratio(m: Field, rho: Field, target=None) -> Field:
    """Cell-constant m_bar with int_K rho m_bar = int_K rho m in every cell.

    Computed in the shifted form m_bar = c + int_K rho (m - c) / int_K rho with
    c the global mean of m, which reproduces a constant m exactly.
    """
    if m.space is not rho.space:
        raise ValueError("m and rho must be co-located")
    target = target or cached_space(m.mesh, V_RHO0)
    w = m.mesh.cell_quadrature_data().w
    c = global_mean(m)
    r = rho.at_quadrature()
    mass = np.sum(w * r, axis=1)
    if np.any(mass <= 0.0):
        k = int(np.argmin(mass))
        raise ValueError(f"cell {k} has non-positive density integral {mass[k]:.3e}; MMR block is singular")
    excess = np.sum(w * r * (m.at_quadrature() - c), axis=1)
    vals = np.empty(target.ndof)
    vals[target.cell_dofs[:, 0]] = c + excess / mass
    return Field(target, vals, "m_bar")


def blending_coefficient(vertex_vals, m_bar):
    """Blending weight per cell from the cell's vertex values and its m_bar.

    Returns (lam, unfixable).  lam = -m_min / (m_bar - m_min) when the vertex
    minimum is negative (0 otherwise), clamped to [0, 1].  Cells with
    m_bar < 0 cannot be made non-negative; they get lam = 0 and are flagged.
    """
    v = np.atleast_2d(np.asarray(vertex_vals, dtype=float))
    mb = np.atleast_1d(np.asarray(m_bar, dtype=float))
    m_min = v.min(axis=1)
    neg = m_min < 0.0
    unfixable = neg & (mb < 0.0)
    lam = np.zeros(len(m_min))
    ok = neg & ~unfixable
    lam[ok] = -m_min[ok] / (mb[ok] - m_min[ok])
    lam = np.clip(lam, 0.0, 1.0)
    if np.ndim(m_bar) == 0 and np.ndim(vertex_vals) == 1:
        return float(lam[0]), bool(unfixable[0])
    return lam, unfixable


def blend(m: Field, m_bar: Field, lam) -> Field:
    """m* = (1 - lam) m + lam m_bar, cell by cell (lam and m_bar cell-constant)."""
    space = m.space
    lam = np.asarray(lam.values if isinstance(lam, Field) else lam, dtype=float)
    mb = m_bar.cell_values()[:, 0]
    cells = m.cell_values()
    out = np.empty(space.ndof)
    out[space.cell_dofs] = (1.0 - lam)[:, None] * cells + (lam * mb)[:, None]
    return Field(space, out, m.name)


class UnfixableCellError(RuntimeError):
    pass


def mmr_limit(m: Field, rho: Field, abort_on_unfixable=False):
    """MMR limiter returning (m*, limited cell count, unfixable cell count)."""
    vv = vertex_values(m)
    if vv.min() >= 0.0:
        return m, 0, 0
    m_bar = mean_mixing_ratio(m, rho)
    lam, unfixable = blending_coefficient(vv, m_bar.cell_values()[:, 0])
    n_unfix = int(unfixable.sum())
    if n_unfix and abort_on_unfixable:
        raise UnfixableCellError(f"{n_unfix} cell(s) have negative tracer mass; first {int(np.argmax(unfixable))}")
    return blend(m, m_bar, lam), int(np.count_nonzero(lam)), n_unfix


def apply_mmr_limiter(m: Field, rho: Field, abort_on_unfixable=False) -> Field:
    return mmr_limit(m, rho, abort_on_unfixable)[0]


def positive_definite_limit(m: Field, rho: Field | None = None):
    """Baseline limiter returning (m*, limited cell count, clipped cell count).

    Scales deviations from the unweighted cell mean by the largest factor in
    [0, 1] that keeps vertex values non-negative.  A cell with negative mean
    is set to zero (this changes its mean and is counted as clipped).
    """
    vv = vertex_values(m)
    if vv.min() >= 0.0:
        return m, 0, 0
    space = m.space
    w = m.mesh.cell_quadrature_data().w
    mean = np.sum(w * m.at_quadrature(), axis=1) / np.sum(w, axis=1)
    m_min = vv.min(axis=1)
    neg = m_min < 0.0
    clipped = neg & (mean < 0.0)
    theta = np.ones(len(mean))
    ok = neg & ~clipped
    theta[ok] = mean[ok] / (mean[ok] - m_min[ok])
    theta[clipped] = 0.0
    mean = np.where(clipped, 0.0, mean)
    cells = m.cell_values()
    out = np.empty(space.ndof)
    out[space.cell_dofs] = mean[:, None] + theta[:, None] * (cells - mean[:, None])
    return Field(space, out, m.name), int(np.count_nonzero(neg)), int(clipped.sum())


def positive_definite_vertex_limiter(m: Field) -> Field:
    return positive_definite_limit(m)[0]


LIMITERS = {"none": None, "mmr": mmr_limit, "baseline": positive_definite_limit}

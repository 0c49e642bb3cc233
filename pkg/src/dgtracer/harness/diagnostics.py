"""Tracer-density diagnostics, error norms and convergence fits."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ..space import V_RHO0, Field, cached_space, integrate

CSV_COLUMNS = ("step", "t", "integral_rho", "integral_rhoX", "delta_rhoX_rel", "m_min", "m_max",
               "limited_cells", "unfixable_cells", "l2_error")


def tracer_density_cellwise(rho: Field, m: Field) -> Field:
    """Cell means of rho*m in the cell-constant space (inputs may be staggered)."""
    if rho.mesh is not m.mesh:
        raise ValueError("rho and m must live on the same mesh")
    w = rho.mesh.cell_quadrature_data().w
    target = cached_space(rho.mesh, V_RHO0)
    vals = np.empty(target.ndof)
    vals[target.cell_dofs[:, 0]] = np.sum(w * rho.at_quadrature() * m.at_quadrature(), axis=1) / np.sum(w, axis=1)
    return Field(target, vals, "rho_X")


def global_tracer_density(rho: Field, m: Field) -> float:
    w = rho.mesh.cell_quadrature_data().w
    return math.fsum(np.sum(w * rho.at_quadrature() * m.at_quadrature(), axis=1))


def relative_change(series):
    series = np.asarray(series, dtype=float)
    return np.abs(series - series[0]) / abs(series[0])


def l2_error(m: Field, m_ref: Field) -> float:
    if m.space is not m_ref.space:
        raise ValueError("error norm needs both fields in the same space")
    d = Field(m.space, m.values - m_ref.values)
    w = m.mesh.cell_quadrature_data().w
    return math.sqrt(math.fsum((w * d.at_quadrature() ** 2).ravel()))


def convergence_slope(dx, errors):
    """Least-squares slope of log(error) against log(dx)."""
    dx, errors = np.asarray(dx, dtype=float), np.asarray(errors, dtype=float)
    if len(dx) < 2:
        raise ValueError("a slope needs at least two resolutions")
    return float(np.polyfit(np.log(dx), np.log(errors), 1)[0])


def sphere_dx(radius, ne):
    return math.pi * radius / (2 * ne)


def error_metrics(m: Field, m_ref: Field, delta_series=None):
    out = {"l2_error": l2_error(m, m_ref)}
    if delta_series is not None and len(delta_series):
        d = np.asarray(delta_series, dtype=float)
        out.update(max_delta_rhoX=float(d.max()), mean_delta_rhoX=float(d.mean()))
    return out


@dataclass
class DiagnosticsSeries:
    rows: list = field(default_factory=list)

    def record(self, step, t, integral_rho, integral_rhoX, m_min, m_max, limited, unfixable, l2=float("nan")):
        ref = self.rows[0]["integral_rhoX"] if self.rows else integral_rhoX
        delta = abs(integral_rhoX - ref) / abs(ref) if ref != 0 else 0.0
        row = dict(step=int(step), t=float(t), integral_rho=float(integral_rho), integral_rhoX=float(integral_rhoX),
                   delta_rhoX_rel=float(delta), m_min=float(m_min), m_max=float(m_max),
                   limited_cells=int(limited), unfixable_cells=int(unfixable), l2_error=float(l2))
        for k, v in row.items():
            if isinstance(v, float) and not math.isfinite(v) and k != "l2_error":
                raise FloatingPointError(f"non-finite diagnostic {k} at step {step}")
        self.rows.append(row)
        return row

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def __len__(self):
        return len(self.rows)

    @property
    def max_delta(self):
        return float(self.column("delta_rhoX_rel").max()) if self.rows else 0.0

    @property
    def mean_delta(self):
        """Mean relative tracer-density change over the recorded samples after t = 0."""
        d = self.column("delta_rhoX_rel")[1:]
        return float(d.mean()) if len(d) else 0.0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])


def _fmt(v):
    if isinstance(v, int):
        return str(v)
    return f"{v:.17g}"

"""Time loop, output files and resolution sweeps."""
from __future__ import annotations

import json
import os
import platform
import subprocess
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import __version__
from ..space import Field, integrate, vertex_values
from .cases import case_spec, initial_fields
from .diagnostics import (DiagnosticsSeries, convergence_slope, global_tracer_density, l2_error,
                          sphere_dx)
from .scheme import Scheme, SchemeConfig, SchemeState


def version_string():
    """Package version, with the git commit when run from a checkout."""
    try:
        here = Path(__file__).resolve().parent
        rev = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=here, capture_output=True,
                             text=True, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def total_mixing_ratio(tracers: dict) -> Field:
    """Mixing ratio whose tracer density is the conserved quantity."""
    if "X" in tracers:
        x, x2 = tracers["X"], tracers["X2"]
        return Field(x.space, x.values + 2.0 * x2.values, "X_T")
    return tracers["m"]


def _extrema(tracers: dict):
    lo, hi = np.inf, -np.inf
    for m in tracers.values():
        v = vertex_values(m) if m.space.fully_discontinuous else m.values
        lo, hi = min(lo, float(v.min()), float(m.values.min())), max(hi, float(v.max()), float(m.values.max()))
    return lo, hi


@dataclass
class RunResult:
    config: SchemeConfig
    series: DiagnosticsSeries
    initial: SchemeState
    final: SchemeState
    metadata: dict = field(default_factory=dict)

    @property
    def l2_error(self):
        return self.metadata["final_l2_error"]


def initial_state(scheme: Scheme) -> SchemeState:
    c = scheme.config
    fields_ = initial_fields(c.case, scheme.rho_space, scheme.m_space, c.slotted_variant)
    rho = fields_.pop("rho")
    return SchemeState(rho, fields_)


def _record(series, state, init_tracers, limited, unfixable):
    mt = total_mixing_ratio(state.tracers)
    lo, hi = _extrema(state.tracers)
    l2 = l2_error(mt, total_mixing_ratio(init_tracers))
    return series.record(state.step, state.t, integrate(state.rho), global_tracer_density(state.rho, mt),
                         lo, hi, limited, unfixable, l2)


def run_case(config: SchemeConfig, out_dir=None, progress=None, tag=None) -> RunResult:
    """Run ``config.steps`` steps, recording diagnostics after every step."""
    scheme = Scheme(config)
    state = init = initial_state(scheme)
    series = DiagnosticsSeries()
    _record(series, state, init.tracers, 0, 0)
    tic = time.perf_counter()
    limited = unfixable = 0
    for n in range(config.steps):
        try:
            state = scheme.advance_timestep(state)
        except Exception as exc:
            raise RuntimeError(f"step {n + 1} of {config.case}: {exc}") from exc
        limited_now, unfixable_now = state.stats.limited_cells - limited, state.stats.unfixable_cells - unfixable
        limited, unfixable = state.stats.limited_cells, state.stats.unfixable_cells
        row = _record(series, state, init.tracers, limited_now, unfixable_now)
        if progress:
            progress(row)
    elapsed = time.perf_counter() - tic
    dx = (sphere_dx(config.radius, config.ne) if config.mesh_kind == "cubed-sphere"
          else scheme.mesh.dx)
    meta = {
        "version": version_string(),
        "config": config.as_dict(),
        "mesh": {"kind": scheme.mesh.kind, "ncells": scheme.mesh.ncells, "dx": dx,
                 "quadrature_points_per_direction": scheme.mesh.default_nq},
        "spaces": {"rho": str(scheme.rho_spec), "m": str(scheme.m_spec), "transport": str(scheme.transport_spec)},
        "velocity": {"model": scheme.velocity.name, **scheme.velocity.params()},
        "solver": scheme.solver.as_dict(),
        "eps_rho": config.eps_rho,
        "mixing_ratio_identification": "cellwise density-weighted solve",
        "limiter_label": {"none": "none", "mmr": "mean mixing ratio", "baseline": "baseline positive-definite"}[config.limiter],
        "steps": config.steps,
        "final_time": state.t,
        "final_l2_error": series.rows[-1]["l2_error"],
        "max_delta_rhoX_rel": series.max_delta,
        "mean_delta_rhoX_rel": series.mean_delta,
        "total_limited_cells": state.stats.limited_cells,
        "total_unfixable_cells": state.stats.unfixable_cells,
        "elapsed_seconds": elapsed,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    result = RunResult(config, series, init, state, meta)
    if out_dir is not None:
        write_outputs(result, out_dir, tag)
    return result


def run_name(config: SchemeConfig):
    res = f"ne{config.ne}" if config.mesh_kind == "cubed-sphere" else f"nx{config.nx}"
    return f"{config.case}_{config.placement}_k{config.order}_{config.form}_{config.limiter}_{res}"


def write_outputs(result: RunResult, out_dir, tag=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = tag or run_name(result.config)
    result.series.write_csv(out / f"{name}.csv")
    with open(out / f"{name}.json", "w") as fh:
        json.dump(result.metadata, fh, indent=2, default=float)
    return out / f"{name}.csv", out / f"{name}.json"


def sweep(config: SchemeConfig, resolutions, out_dir=None, progress=None):
    """Run the same configuration at several resolutions and fit the slope.

    On the sphere dt is rescaled with ne; on the slice dt is held fixed.
    """
    sphere = config.mesh_kind == "cubed-sphere"
    rows = []
    for n in resolutions:
        if sphere:
            # keep the Courant number: default dt and step count for each ne
            c = replace(config, ne=n, dt=None, steps=None)
        else:
            c = replace(config, nx=n, nz=None)
        r = run_case(c, out_dir)
        dx = r.metadata["mesh"]["dx"]
        rows.append({"n": n, "dx": dx, "l2_error": r.l2_error, "max_delta_rhoX_rel": r.series.max_delta,
                     "elapsed_seconds": r.metadata["elapsed_seconds"]})
        if progress:
            progress(rows[-1])
    slope = convergence_slope([r["dx"] for r in rows], [r["l2_error"] for r in rows]) if len(rows) > 1 else None
    summary = {"config": config.as_dict(), "runs": rows, "slope": slope, "version": version_string()}
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        with open(os.path.join(out_dir, f"sweep_{run_name(config)}.json"), "w") as fh:
            json.dump(summary, fh, indent=2)
    return summary

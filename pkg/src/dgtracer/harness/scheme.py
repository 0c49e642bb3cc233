"""Per-timestep operator sequences for the four space configurations.

Fields start and end each step in their original spaces:

co-located k=1   transport in V_rho1 directly
co-located k=0   recover rho and m into V_rho1, transport, project back
staggered  k=1   project rho and (conservatively) inject m into V_hat_theta,
                 transport, project back (m into V_theta1)
staggered  k=0   as co-located k=0 with m recovered from / projected to V_theta0
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .. import remap
from ..limiter import LIMITERS
from ..mesh import build_cubed_sphere_mesh, build_slice_mesh
from ..physics import ChemistryParams, apply_chemistry_step, rate_fields
from ..space import (V_HAT_THETA, V_RHO0, V_RHO1, V_THETA0, V_THETA1, V_TILDE1, Field,
                     cached_space)
from ..transport import TransportStats, transport_step
from .cases import CONSTANTS, EARTH_RADIUS, case_spec, period, velocity_case

PLACEMENTS = ("co-located", "staggered")
FORMS = ("conservative", "advective")


@dataclass
class SchemeConfig:
    case: str = "A1-convergence"
    placement: str = "co-located"
    order: int = 1
    form: str = "conservative"
    limiter: str = "none"
    dt: float | None = None
    steps: int | None = None
    ne: int = 8
    nx: int = 40
    nz: int | None = None
    solver: str = "direct"
    solver_rtol: float = 1e-13
    eps_rho: float = 1e-12
    a1_phase: str = "as-printed"
    slotted_variant: str = "as-printed"
    nq: int | None = None
    radius: float = EARTH_RADIUS

    def __post_init__(self):
        spec = case_spec(self.case)
        if self.placement not in PLACEMENTS:
            raise ValueError(f"placement must be one of {PLACEMENTS}, got {self.placement!r}")
        if self.order not in (0, 1):
            raise ValueError(f"order must be 0 or 1, got {self.order}")
        if self.form not in FORMS:
            raise ValueError(f"form must be one of {FORMS}, got {self.form!r}")
        if self.limiter not in LIMITERS:
            raise ValueError(f"limiter must be one of {tuple(LIMITERS)}, got {self.limiter!r}")
        if self.placement == "staggered" and spec.mesh_kind != "slice":
            raise ValueError("the staggered placement needs a slice case")
        if self.limiter != "none" and not (self.placement == "co-located" and self.order == 1):
            raise ValueError("limiters act on co-located order-1 fields only")
        if self.dt is None:
            self.dt = self.default_dt()
        if self.steps is None:
            self.steps = int(round(period(self.case) / self.dt))
        if not self.dt > 0 or self.steps < 0:
            raise ValueError(f"need dt > 0 and steps >= 0, got dt={self.dt}, steps={self.steps}")

    @property
    def mesh_kind(self):
        return case_spec(self.case).mesh_kind

    def default_dt(self):
        if self.mesh_kind == "slice":
            return CONSTANTS["A2"]["desk_dt"]
        a1 = CONSTANTS["A1"]
        # hold the Courant number of the reference resolution
        return a1["paper_dt"] * a1["paper_ne"] / self.ne

    def as_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class SchemeState:
    rho: Field
    tracers: dict
    t: float = 0.0
    step: int = 0
    stats: TransportStats = field(default_factory=TransportStats)


class Scheme:
    """Meshes, spaces and operator sequence for one configuration."""

    def __init__(self, config: SchemeConfig):
        self.config = c = config
        if c.mesh_kind == "slice":
            a2 = CONSTANTS["A2"]
            self.mesh = build_slice_mesh(c.nx, c.nz or c.nx, a2["Lx"], a2["Hz"])
        else:
            self.mesh = build_cubed_sphere_mesh(c.ne, c.radius)
        if c.placement == "co-located":
            self.rho_spec = V_RHO1 if c.order == 1 else V_RHO0
            self.m_spec = self.rho_spec
            self.transport_spec = V_RHO1
        else:
            self.rho_spec = V_RHO1 if c.order == 1 else V_RHO0
            self.m_spec = V_THETA1 if c.order == 1 else V_THETA0
            self.transport_spec = V_HAT_THETA if c.order == 1 else V_RHO1
        self.mesh.with_default_nq(c.nq or self.transport_spec.max_order + 3)
        self.rho_space = cached_space(self.mesh, self.rho_spec)
        self.m_space = cached_space(self.mesh, self.m_spec)
        self.transport_space = cached_space(self.mesh, self.transport_spec)
        self.recovered = c.order == 0
        self.tilde_space = cached_space(self.mesh, V_TILDE1) if self.recovered else None
        self.velocity = velocity_case(c.case, c.a1_phase, c.radius)
        self.solver = remap.SolverOptions(c.solver, c.solver_rtol)
        self.limiter = LIMITERS[c.limiter]
        self.chemistry = None
        if c.case == "A4-terminator":
            a4 = CONSTANTS["A4"]
            params = ChemistryParams(a4["lon_c"], a4["lat_c"], a4["x_total"], a4["k2"])
            self.chemistry = rate_fields(self.m_space, params)

    # ------------------------------------------------------------------
    def shifts(self, tracers: dict):
        """Constant shift of the consistent tracer maps, one per tracer.

        The forward map uses the mean of the (recovered) mixing ratio and the
        map back reuses it, so a step with zero velocity is the identity.
        """
        if self.recovered:
            return {k: remap.global_mean(remap.recover_average(m, self.tilde_space)) for k, m in tracers.items()}
        return {k: remap.global_mean(m) for k, m in tracers.items()}

    def _to_transport(self, rho: Field, tracers: dict):
        c, T, S = self.config, self.transport_space, self.solver
        conservative = c.form == "conservative"
        if self.transport_spec == self.rho_spec:
            return rho, dict(tracers)
        if self.recovered:
            rho_t = _run("recovery(rho)", remap.recovery, rho, T, self.tilde_space, S)
            if conservative:
                out = {k: _run("conservative_recovery(m)", remap.conservative_recovery, m, rho, rho_t,
                               self.tilde_space, S) for k, m in tracers.items()}
            else:
                out = {k: _run("recovery(m)", remap.recovery, m, T, self.tilde_space, S) for k, m in tracers.items()}
            return rho_t, out
        rho_t = _run("galerkin_project(rho)", remap.galerkin_project, rho, T, S)
        if conservative:
            out = {k: _run("conservative_inject(m)", remap.conservative_inject, m, rho, rho_t, T, True, S)
                   for k, m in tracers.items()}
        else:
            out = {k: _run("inject(m)", remap.inject, m, T) for k, m in tracers.items()}
        return rho_t, out

    def _from_transport(self, rho_t: Field, tracers: dict, shifts=None):
        c, S = self.config, self.solver
        if self.transport_spec == self.rho_spec:
            return rho_t, tracers
        rho = _run("galerkin_project(rho back)", remap.galerkin_project, rho_t, self.rho_space, S)
        if c.form == "conservative":
            shifts = shifts or {}
            out = {k: _run("conservative_project(m back)", remap.conservative_project, m, rho_t, rho,
                           self.m_space, True, shifts.get(k), S) for k, m in tracers.items()}
        else:
            out = {k: _run("galerkin_project(m back)", remap.galerkin_project, m, self.m_space, S)
                   for k, m in tracers.items()}
        return rho, out

    def advance_timestep(self, state: SchemeState) -> SchemeState:
        c = self.config
        shifts = None
        if c.form == "conservative" and self.transport_spec != self.rho_spec:
            shifts = self.shifts(state.tracers)
        rho_t, tr_t = self._to_transport(state.rho, state.tracers)
        names = list(tr_t)
        rho_t, ms, stats = _run("transport", transport_step, rho_t, [tr_t[k] for k in names], self.velocity,
                                state.t, c.dt, c.form, self.limiter, c.eps_rho, state.stats)
        rho, tracers = self._from_transport(rho_t, dict(zip(names, ms)), shifts)
        for k in names:
            tracers[k].name = k
        if self.chemistry is not None:
            k1, k2 = self.chemistry
            tracers["X"], tracers["X2"] = apply_chemistry_step(tracers["X"], tracers["X2"], c.dt, k1, k2)
        return SchemeState(rho, tracers, state.t + c.dt, state.step + 1, stats)


class StepError(RuntimeError):
    pass


def _run(name, fn, *args):
    try:
        return fn(*args)
    except StepError:
        raise
    except Exception as exc:  # re-raise with the failing operator named
        raise StepError(f"{name} failed: {exc}") from exc


def advance_timestep(scheme: Scheme, state: SchemeState) -> SchemeState:
    """One full step; ``state`` must hold fields built on ``scheme``'s mesh."""
    if not isinstance(scheme, Scheme):
        raise TypeError("advance_timestep needs a Scheme (build one from a SchemeConfig)")
    return scheme.advance_timestep(state)

"""Upwind DG transport operators, SSPRK3 stepping and mixing-ratio identification.

Conservative form, for a density-like quantity q and every test function g:

    int(g dq/dt) = int(q u . grad g) - sum_facets int((u.n+) [g] q_up)

Advective form, written so that a constant is annihilated exactly:

    int(g dm/dt) = -int(g u . grad m)
                   - sum_facets int((u.n+) (g+ (m_up - m+) - g- (m_up - m-)))

where [g] = g+ - g- and q_up is the value on the side the flow comes from.
The second form equals the integrated-by-parts weak form under exact
integration; written this way it needs no velocity divergence.
Facet terms on the rigid slice boundaries vanish because u.n = 0 there.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh
from .space import Field, FunctionSpace, lonlat, weighted_gram


# ----------------------------------------------------------------------
# velocity models
# ----------------------------------------------------------------------
class VelocityModel:
    """Prescribed velocity u(x, t); x has shape (..., dim)."""

    name = "velocity"

    def __call__(self, x, t):
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    def normal_component(self, mesh: Mesh, t, nq=None):
        q = mesh.facet_quadrature_data(nq)
        return np.sum(self(q.x, t) * q.normal, axis=-1)


@dataclass
class ConstantVelocity(VelocityModel):
    vector: tuple = (1.0, 0.0)
    name = "constant"

    def __call__(self, x, t):
        return np.broadcast_to(np.asarray(self.vector, dtype=float), x.shape).copy()

    def params(self):
        return {"vector": list(self.vector)}


@dataclass
class SliceDeformationFlow(VelocityModel):
    """Translating deformational flow on a periodic slice that returns the
    initial field at t = tau; w vanishes on the top and bottom."""

    Lx: float = 2000.0
    Hz: float = 2000.0
    tau: float = 2000.0
    name = "slice-deformation"

    @property
    def U(self):
        return self.Lx / self.tau

    @property
    def W(self):
        return self.U / 10.0

    def __call__(self, x, t):
        U, W, Lx, Hz = self.U, self.W, self.Lx, self.Hz
        xs = x[..., 0] - U * t
        z = x[..., 1]
        ct = math.cos(math.pi * t / self.tau)
        out = np.empty(x.shape)
        out[..., 0] = U - W * math.pi * Lx / Hz * ct * np.cos(2 * math.pi * xs / Lx) * np.cos(math.pi * z / Hz)
        out[..., 1] = 2 * math.pi * W * ct * np.sin(2 * math.pi * xs / Lx) * np.sin(math.pi * z / Hz)
        return out

    def params(self):
        return {"Lx": self.Lx, "Hz": self.Hz, "tau": self.tau, "U": self.U, "W": self.W}


def sphere_vector(x, u, v):
    """Cartesian vector from zonal u and meridional v components at points x."""
    lon, lat = lonlat(x)
    sl, cl, sp_, cp = np.sin(lon), np.cos(lon), np.sin(lat), np.cos(lat)
    out = np.empty(np.shape(x))
    out[..., 0] = -u * sl - v * sp_ * cl
    out[..., 1] = u * cl - v * sp_ * sl
    out[..., 2] = v * cp
    return out


@dataclass
class DivergentSphereFlow(VelocityModel):
    """Divergent deformational flow plus a zonal mean flow.

    ``phase="as-printed"`` uses lambda' = lambda - 2 pi a t / tau;
    ``phase="angular"`` uses lambda' = lambda - 2 pi t / tau.
    """

    a: float = 6371220.0
    tau: float = 1036800.0
    phase: str = "as-printed"
    name = "sphere-divergent"

    def __post_init__(self):
        if self.phase not in ("as-printed", "angular"):
            raise ValueError(f"unknown phase convention {self.phase!r}")

    @property
    def k(self):
        return 5.0 * self.a / self.tau

    def shift(self, t):
        scale = self.a if self.phase == "as-printed" else 1.0
        return 2 * math.pi * scale * t / self.tau

    def components(self, lon, lat, t):
        lp = lon - self.shift(t)
        ct = math.cos(math.pi * t / self.tau)
        u = (2 * math.pi * self.a / self.tau * np.cos(lat)
             - self.k * np.sin(lp / 2) ** 2 * np.sin(2 * lat) * np.cos(lat) ** 2 * ct)
        v = self.k / 2 * np.sin(lp) * np.cos(lat) ** 3 * ct
        return u, v

    def __call__(self, x, t):
        return sphere_vector(x, *self.components(*lonlat(x), t))

    def params(self):
        return {"a": self.a, "tau": self.tau, "k": self.k, "phase": self.phase}


@dataclass
class NondivergentSphereFlow(VelocityModel):
    """Non-divergent deformational flow plus a zonal mean flow
    (lambda' = lambda - 2 pi t / tau)."""

    a: float = 6371220.0
    tau: float = 1036800.0
    name = "sphere-nondivergent"

    @property
    def k(self):
        return 10.0 * self.a / self.tau

    def components(self, lon, lat, t):
        lp = lon - 2 * math.pi * t / self.tau
        ct = math.cos(math.pi * t / self.tau)
        u = self.k * np.sin(lp) ** 2 * np.sin(2 * lat) * ct + 2 * math.pi * self.a * np.cos(lat) / self.tau
        v = self.k * np.sin(2 * lp) * np.cos(lat) * ct
        return u, v

    def __call__(self, x, t):
        return sphere_vector(x, *self.components(*lonlat(x), t))

    def params(self):
        return {"a": self.a, "tau": self.tau, "k": self.k}


# ----------------------------------------------------------------------
# spatial operators
# ----------------------------------------------------------------------
def upwind_trace(value_plus, value_minus, un_plus):
    """Trace from the upwind side: the + value when u.n+ >= 0."""
    return np.where(np.asarray(un_plus) >= 0.0, value_plus, value_minus)


class DGOperator:
    """Cached tabulations for upwind DG on a fully discontinuous space."""

    def __init__(self, space: FunctionSpace, max_cached_times=6):
        if not space.fully_discontinuous:
            raise ValueError(f"DG transport needs a fully discontinuous space, got {space.spec}")
        self.space = space
        mesh = self.mesh = space.mesh
        cq = mesh.cell_quadrature_data()
        fq = mesh.facet_quadrature_data()
        self.phi = space.quadrature_basis()  # (Q, nloc)
        self.dphi = space.tabulate_grad(cq.ref)  # (Q, nloc, 2)
        self.w = cq.w
        self.fw = fq.w
        self.phi_plus = space.tabulate(fq.plus_ref)  # (F, Q, nloc)
        self.phi_minus = space.tabulate(fq.minus_ref)
        self.minv = np.linalg.inv(weighted_gram(cq.w, self.phi))
        nq, nloc = self.phi.shape
        self._dphi_flat = self.dphi.transpose(0, 2, 1).reshape(nq * 2, nloc)  # rows (q, a)
        self._max_cached = max_cached_times
        self._vel_cache = {}

    def velocity_data(self, vel: VelocityModel, t):
        """Reference-frame velocity at cell points and u.n+ at facet points."""
        key = (id(vel), float(t))
        if key not in self._vel_cache:
            if len(self._vel_cache) >= self._max_cached:
                self._vel_cache.pop(next(iter(self._vel_cache)))
            cq = self.mesh.cell_quadrature_data()
            u = vel(cq.x, t)
            u_ref = np.einsum("cqad,cqd->cqa", cq.contra, u)
            un = vel.normal_component(self.mesh, t)
            # keep a reference so the id in the key cannot be reused while cached
            self._vel_cache[key] = (vel, u_ref, un)
        return self._vel_cache[key][1:]

    # -- traces --------------------------------------------------------
    def cell_points(self, coeffs):
        return coeffs @ self.phi.T

    def traces(self, coeffs):
        m = self.mesh
        plus = np.matmul(self.phi_plus, coeffs[m.plus_cell][..., None])[..., 0]
        minus = np.matmul(self.phi_minus, coeffs[m.minus_cell][..., None])[..., 0]
        return plus, minus

    def _test_facets(self, flux_plus, flux_minus):
        fplus = -np.matmul(flux_plus[:, None, :], self.phi_plus)[:, 0]
        fminus = np.matmul(flux_minus[:, None, :], self.phi_minus)[:, 0]
        return self._gather_facets(fplus, fminus)

    def _test_gradients(self, vec_q):
        """int(v . grad(phi_i)) per cell for a reference-frame vector at quadrature points."""
        c = vec_q.shape[0]
        return vec_q.reshape(c, -1) @ self._dphi_flat

    def _gather_facets(self, contrib_plus, contrib_minus):
        """Sum facet contributions per cell in a fixed local-facet order."""
        m = self.mesh
        slots = np.zeros((m.ncells, 4, contrib_plus.shape[-1]))
        slots[m.plus_cell, m.plus_facet] = contrib_plus
        slots[m.minus_cell, m.minus_facet] = contrib_minus
        return slots[:, 0] + slots[:, 1] + slots[:, 2] + slots[:, 3]

    def _finish(self, residual):
        out = np.matmul(self.minv, residual[..., None])[..., 0]
        vals = np.empty(self.space.ndof)
        vals[self.space.cell_dofs] = out
        return vals

    # -- operators -----------------------------------------------------
    def conservative_residual(self, factors, vel, t):
        """Weak conservative residual (before the inverse mass) of the
        pointwise product of the given coefficient arrays."""
        u_ref, un = self.velocity_data(vel, t)
        q_pts = np.ones_like(self.w)
        q_plus = np.ones_like(self.fw)
        q_minus = np.ones_like(self.fw)
        for c in factors:
            q_pts = q_pts * self.cell_points(c)
            p, mi = self.traces(c)
            q_plus, q_minus = q_plus * p, q_minus * mi
        vol = self._test_gradients((self.w * q_pts)[..., None] * u_ref)
        flux = self.fw * un * upwind_trace(q_plus, q_minus, un)
        return vol + self._test_facets(flux, flux)

    def conservative(self, q_values, vel, t, density_values=None):
        sd = self.space.cell_dofs
        factors = [q_values[sd]] if density_values is None else [density_values[sd], q_values[sd]]
        return self._finish(self.conservative_residual(factors, vel, t))

    def advective_residual(self, m_coeffs, vel, t):
        u_ref, un = self.velocity_data(vel, t)
        c, (nq, nloc) = m_coeffs.shape[0], self.phi.shape
        grad = (m_coeffs @ self._dphi_flat.T).reshape(c, nq, 2)
        adv = np.sum(u_ref * grad, axis=-1)
        vol = -(self.w * adv) @ self.phi
        mp, mm = self.traces(m_coeffs)
        up = upwind_trace(mp, mm, un)
        jp = self.fw * un * (up - mp)
        jm = self.fw * un * (up - mm)
        return vol + self._test_facets(jp, jm)

    def advective(self, m_values, vel, t):
        return self._finish(self.advective_residual(m_values[self.space.cell_dofs], vel, t))


def dg_operator(space: FunctionSpace) -> DGOperator:
    return space.cached("dg_operator", lambda: DGOperator(space))


def dg_conservative_rhs(q: Field, vel: VelocityModel, t, density: Field | None = None) -> Field:
    """Tendency of q (or of the pointwise product density*q) in flux form."""
    op = dg_operator(q.space)
    dens = None if density is None else density.values
    return Field(q.space, op.conservative(q.values, vel, t, dens))


def dg_advective_rhs(m: Field, vel: VelocityModel, t) -> Field:
    op = dg_operator(m.space)
    return Field(m.space, op.advective(m.values, vel, t))


# ----------------------------------------------------------------------
# time stepping
# ----------------------------------------------------------------------
class NonFiniteStateError(FloatingPointError):
    pass


def _check_finite(state, stage):
    for i, s in enumerate(state):
        if not np.all(np.isfinite(s)):
            raise NonFiniteStateError(f"non-finite values after SSPRK3 stage {stage} in state component {i}")


def ssprk3_step(state, rhs, t, dt, stage_hook=None):
    """One SSPRK3 step.

    ``state`` is a sequence of arrays, ``rhs(state, t)`` returns matching
    tendencies and ``stage_hook(state)`` (e.g. a limiter) may modify a stage
    result and return it.  Stage times are t, t + dt and t + dt/2.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    q0 = [np.asarray(s, dtype=float) for s in state]
    hook = stage_hook or (lambda s: s)

    k = rhs(q0, t)
    q1 = hook([a + dt * b for a, b in zip(q0, k)])
    _check_finite(q1, 1)
    k = rhs(q1, t + dt)
    q2 = hook([0.75 * a + 0.25 * (b + dt * c) for a, b, c in zip(q0, q1, k)])
    _check_finite(q2, 2)
    k = rhs(q2, t + 0.5 * dt)
    q3 = hook([a / 3.0 + 2.0 / 3.0 * (b + dt * c) for a, b, c in zip(q0, q2, k)])
    _check_finite(q3, 3)
    return q3


# ----------------------------------------------------------------------
# mixing ratio <-> tracer density
# ----------------------------------------------------------------------
class DensityTooSmallError(ValueError):
    pass


def _weighted_cell_solve(space: FunctionSpace, weight_q, load):
    m = weighted_gram(space.mesh.cell_quadrature_data().w * weight_q, space.quadrature_basis())
    x = np.linalg.solve(m, load[..., None])[..., 0]
    out = np.empty(space.ndof)
    out[space.cell_dofs] = x
    return out


def check_density(rho: Field, eps_rel=1e-12):
    scale = abs(float(np.mean(rho.values)))
    small = np.abs(rho.values) < eps_rel * scale
    if small.any() or scale == 0.0:
        k = int(np.argmax(small)) if small.any() else 0
        raise DensityTooSmallError(
            f"density {rho.values[k]:.3e} at dof {k} is below eps_rho = {eps_rel:.1e} x mean "
            f"({eps_rel * scale:.3e}); cannot identify the mixing ratio"
        )


def tracer_product(rho: Field, m: Field) -> Field:
    """q with int(eta q) = int(eta rho m) for all eta in the space of rho."""
    space = rho.space
    phi = space.quadrature_basis()
    load = (space.mesh.cell_quadrature_data().w * rho.at_quadrature() * m.at_quadrature()) @ phi
    op = dg_operator(space)
    vals = np.empty(space.ndof)
    vals[space.cell_dofs] = np.matmul(op.minv, load[..., None])[..., 0]
    return Field(space, vals, m.name)


def identify_mixing_ratio(q: Field, rho: Field, eps_rel=1e-12, method="weighted") -> Field:
    """Recover m from the tracer density variable q and the density.

    ``weighted`` solves int(eta rho m) = int(eta q) cell by cell, so that
    int(rho m) equals int(q) exactly; ``nodal`` divides the coefficients.
    """
    if q.space is not rho.space:
        raise ValueError("q and rho must share the transport space")
    check_density(rho, eps_rel)
    if method == "nodal":
        return Field(q.space, q.values / rho.values)
    if method != "weighted":
        raise ValueError(f"unknown identification method {method!r}")
    space = q.space
    load = (space.mesh.cell_quadrature_data().w * q.at_quadrature()) @ space.quadrature_basis()
    return Field(space, _weighted_cell_solve(space, rho.at_quadrature(), load))


@dataclass
class TransportStats:
    limited_cells: int = 0
    unfixable_cells: int = 0
    stages: int = 0
    extra: dict = field(default_factory=dict)

    def add(self, limited, unfixable):
        self.limited_cells += int(limited)
        self.unfixable_cells += int(unfixable)
        self.stages += 1


def transport_step(rho: Field, tracers, vel: VelocityModel, t, dt, form="conservative",
                   limiter=None, eps_rel=1e-12, stats: TransportStats | None = None):
    """Advance the density and a list of mixing ratios over one SSPRK3 step.

    ``form="conservative"`` evolves the tracer densities rho*m in flux form
    together with rho and identifies m after every stage; ``"advective"``
    evolves each m in advective form.  ``limiter(m, rho)`` returns
    (m_limited, limited_count, unfixable_count) and is applied to every
    mixing ratio after each stage.
    """
    space = rho.space
    for m in tracers:
        if m.space is not space:
            raise ValueError("tracers must live in the transport space of the density")
    op = dg_operator(space)
    stats = stats if stats is not None else TransportStats()

    if form == "conservative":
        def ratios(state):
            r = Field(space, state[0])
            return r, [identify_mixing_ratio(Field(space, s), r, eps_rel) for s in state[1:]]

        def rhs(state, time):
            r, ms = ratios(state)
            out = [op.conservative(state[0], vel, time)]
            out += [op.conservative(m.values, vel, time, r.values) for m in ms]
            return out

        def hook(state):
            if limiter is None:
                return state
            r, ms = ratios(state)
            new = [state[0]]
            for s, m in zip(state[1:], ms):
                lim, nl, nu = limiter(m, r)
                stats.add(nl, nu)
                # re-express the limited ratio as a tracer density only if it changed
                new.append(tracer_product(r, lim).values if nl else s)
            return new

        state0 = [rho.values] + [tracer_product(rho, m).values for m in tracers]
        out = ssprk3_step(state0, rhs, t, dt, hook)
        r_new = Field(space, out[0], rho.name)
        m_new = [identify_mixing_ratio(Field(space, s), r_new, eps_rel) for s in out[1:]]
        for m_old, m in zip(tracers, m_new):
            m.name = m_old.name
        return r_new, m_new, stats

    if form == "advective":
        def rhs(state, time):
            return [op.conservative(state[0], vel, time)] + [op.advective(s, vel, time) for s in state[1:]]

        def hook(state):
            if limiter is None:
                return state
            r = Field(space, state[0])
            new = [state[0]]
            for s in state[1:]:
                lim, nl, nu = limiter(Field(space, s), r)
                stats.add(nl, nu)
                new.append(lim.values)
            return new

        out = ssprk3_step([rho.values] + [m.values for m in tracers], rhs, t, dt, hook)
        return (Field(space, out[0], rho.name),
                [Field(space, s, m.name) for s, m in zip(out[1:], tracers)], stats)

    raise ValueError(f"unknown transport form {form!r}")

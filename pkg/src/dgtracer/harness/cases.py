"""Test-case definitions: constants, velocity fields and initial conditions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..physics import ChemistryParams, rate_fields, terminator_equilibrium
from ..space import Field, FunctionSpace, interpolate, lonlat
from ..transport import DivergentSphereFlow, NondivergentSphereFlow, SliceDeformationFlow

EARTH_RADIUS = 6371220.0
DAY = 86400.0

CASES = (
    "A1-convergence",
    "A1-consistency",
    "A2-convergence",
    "A2-consistency",
    "A3-slotted",
    "A4-terminator",
)

# every constant used by the cases, in SI units
CONSTANTS = {
    "A1": {
        "a": EARTH_RADIUS,
        "tau": 1036800.0,
        "k_factor": 5.0,
        "b0": 5.0,
        "centres": ((-math.pi / 4, 0.0), (math.pi / 4, 0.0)),
        "rho_b": 1.0,
        "m0": 0.02,
        "g_max_convergence": 0.05,
        "g_max_consistency": 0.5,
        "paper_dt": 450.0,
        "paper_ne": 24,
    },
    "A2": {
        "Lx": 2000.0,
        "Hz": 2000.0,
        "tau": 2000.0,
        "paper_dt": 2.0,
        "desk_dt": 5.0,  # desk resolutions N=40..80 keep the Courant number of N~100 at 2 s
        "lc_factor": 2.0 / 25.0,
        "centres": ((3.0 / 8.0, 0.5), (5.0 / 8.0, 0.5)),  # fractions of (Lx, Hz)
        "convergence": {"rho_b": 1.0, "rho_t": 0.5, "m0": 0.02, "f0": 0.05},
        "consistency": {"rho_b": 0.5, "f0": 0.5, "m0": 0.02},
    },
    "A3": {
        "radius": 0.5,
        "slot_half_width": 1.0 / 12.0,
        "slot_offset": 5.0 / 24.0,
        "centres": ((-math.pi / 4, 0.0), (math.pi / 4, 0.0)),
    },
    "A4": {
        "tau": 1036800.0,
        "k_factor": 10.0,
        "lon_c": math.pi / 9,
        "lat_c": -math.pi / 3,
        "x_total": 4e-6,
        "k2": 1.0,
    },
}


@dataclass(frozen=True)
class CaseSpec:
    name: str
    mesh_kind: str  # "cubed-sphere" or "slice"
    tracers: tuple  # names of the transported mixing ratios

    @property
    def family(self):
        return self.name.split("-")[0]


def case_spec(name: str) -> CaseSpec:
    if name not in CASES:
        raise ValueError(f"unknown case {name!r}; choose from {', '.join(CASES)}")
    kind = "slice" if name.startswith("A2") else "cubed-sphere"
    tracers = ("X", "X2") if name == "A4-terminator" else ("m",)
    return CaseSpec(name, kind, tracers)


def velocity_case(case: str, phase: str = "as-printed", a=EARTH_RADIUS):
    family = case_spec(case).family
    if family in ("A1", "A3"):
        c = CONSTANTS["A1"]
        return DivergentSphereFlow(a=a, tau=c["tau"], phase=phase)
    if family == "A2":
        c = CONSTANTS["A2"]
        return SliceDeformationFlow(Lx=c["Lx"], Hz=c["Hz"], tau=c["tau"])
    return NondivergentSphereFlow(a=a, tau=CONSTANTS["A4"]["tau"])


def period(case: str) -> float:
    family = case_spec(case).family
    return CONSTANTS["A2" if family == "A2" else "A1"]["tau"]


# ----------------------------------------------------------------------
# profiles
# ----------------------------------------------------------------------
def sphere_gaussians(x, g_max, b0=5.0, centres=CONSTANTS["A1"]["centres"]):
    """Sum of Gaussian bumps in squared chord distance on the unit sphere."""
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    xu = x / r
    out = np.zeros(x.shape[:-1])
    for lon_i, lat_i in centres:
        ci = np.array([math.cos(lat_i) * math.cos(lon_i), math.cos(lat_i) * math.sin(lon_i), math.sin(lat_i)])
        out += g_max * np.exp(-b0 * np.sum((xu - ci) ** 2, axis=-1))
    return out


def slice_gaussians(x, f0, Lx, Hz, lc_factor=CONSTANTS["A2"]["lc_factor"], centres=CONSTANTS["A2"]["centres"]):
    lc = lc_factor * Lx
    out = np.zeros(x.shape[:-1])
    for fx, fz in centres:
        dx = np.abs(x[..., 0] - fx * Lx)
        dx = np.minimum(dx, Lx - dx)
        l2 = dx**2 + (x[..., 1] - fz * Hz) ** 2
        out += f0 * np.exp(-l2 / lc**2)
    return out


def great_arc(lon, lat, lon_i, lat_i):
    c = np.sin(lat) * math.sin(lat_i) + np.cos(lat) * math.cos(lat_i) * np.cos(lon - lon_i)
    return np.arccos(np.clip(c, -1.0, 1.0))


def slotted_cylinders(x, variant="as-printed"):
    """Two slotted cylinders of height 1.

    ``as-printed`` follows the printed conditions literally (the second
    cylinder's slot test refers to the first centre, and the first slot is
    filled above lat_1 - 5/24).  ``nair-lauritzen`` is the usual pair of
    opposing slots: the first open below lat_1 - 5/24 is filled, the second
    filled above lat_2 + 5/24.
    """
    c = CONSTANTS["A3"]
    (l1, p1), (l2, p2) = c["centres"]
    R, hw, off = c["radius"], c["slot_half_width"], c["slot_offset"]
    lon, lat = lonlat(x)
    r1, r2 = great_arc(lon, lat, l1, p1), great_arc(lon, lat, l2, p2)
    in1, in2 = r1 < R, r2 < R
    if variant == "as-printed":
        on = (in1 & (np.abs(lon - l1) > hw)) | (in2 & (np.abs(lon - l2) > hw))
        on |= in1 & (np.abs(lon - l1) <= hw) & (lat - p1 > -off)
        on |= in2 & (np.abs(lon - l1) <= hw) & (lat - p1 > off)
    elif variant == "nair-lauritzen":
        on = (in1 & (np.abs(lon - l1) >= hw)) | (in2 & (np.abs(lon - l2) >= hw))
        on |= in1 & (np.abs(lon - l1) < hw) & (lat - p1 < -off)
        on |= in2 & (np.abs(lon - l2) < hw) & (lat - p2 > off)
    else:
        raise ValueError(f"unknown slotted-cylinder variant {variant!r}")
    return on.astype(float)


# ----------------------------------------------------------------------
# initial conditions
# ----------------------------------------------------------------------
def initial_fields(case: str, rho_space: FunctionSpace, m_space: FunctionSpace,
                   slotted_variant="as-printed"):
    """Interpolated initial density and mixing ratio(s) as a dict of Fields."""
    spec = case_spec(case)
    if case.startswith(("A1", "A3", "A4")):
        a1 = CONSTANTS["A1"]
        if case in ("A1-convergence", "A3-slotted"):
            rho = interpolate(rho_space, lambda x: a1["rho_b"] + 0.5 * np.cos(lonlat(x)[1]), "rho")
        else:
            rho = interpolate(rho_space, lambda x: a1["rho_b"] + sphere_gaussians(x, a1["g_max_consistency"]), "rho")
        if case == "A1-convergence":
            m = interpolate(m_space, lambda x: a1["m0"] + sphere_gaussians(x, a1["g_max_convergence"]), "m")
        elif case == "A1-consistency":
            m = interpolate(m_space, lambda x: np.full(len(x), a1["m0"]), "m")
        elif case == "A3-slotted":
            m = interpolate(m_space, lambda x: slotted_cylinders(x, slotted_variant), "m")
        else:
            a4 = CONSTANTS["A4"]
            params = ChemistryParams(a4["lon_c"], a4["lat_c"], a4["x_total"], a4["k2"])
            k1, k2 = rate_fields(m_space, params)
            xv, x2v = terminator_equilibrium(k1.values, k2.values, params.x_total)
            return {"rho": rho, "X": Field(m_space, xv, "X"), "X2": Field(m_space, x2v, "X2")}
        return {"rho": rho, spec.tracers[0]: m}

    a2 = CONSTANTS["A2"]
    Lx, Hz = a2["Lx"], a2["Hz"]
    if case == "A2-convergence":
        p = a2["convergence"]
        rho = interpolate(rho_space, lambda x: p["rho_b"] + (p["rho_t"] - p["rho_b"]) * x[:, 1] / Hz, "rho")
        m = interpolate(m_space, lambda x: p["m0"] + slice_gaussians(x, p["f0"], Lx, Hz), "m")
    else:
        p = a2["consistency"]
        rho = interpolate(rho_space, lambda x: p["rho_b"] + slice_gaussians(x, p["f0"], Lx, Hz), "rho")
        m = interpolate(m_space, lambda x: np.full(len(x), p["m0"]), "m")
    return {"rho": rho, "m": m}

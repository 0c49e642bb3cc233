"""Terminator-toy chemistry: X2 <-> 2X with a localised photolysis rate."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .space import Field, lonlat


@dataclass(frozen=True)
class ChemistryParams:
    lon_c: float = math.pi / 9
    lat_c: float = -math.pi / 3
    x_total: float = 4e-6
    k2: float = 1.0


def reaction_rates(lon, lat, params: ChemistryParams = ChemistryParams()):
    """k1 = max(0, cosine of the great-circle angle to the centre), k2 constant."""
    lon, lat = np.asarray(lon, dtype=float), np.asarray(lat, dtype=float)
    cosang = (np.sin(lat) * math.sin(params.lat_c)
              + np.cos(lat) * math.cos(params.lat_c) * np.cos(lon - params.lon_c))
    k1 = np.maximum(0.0, cosang)
    return k1, np.full(k1.shape, params.k2)


def terminator_equilibrium(k1, k2, x_total):
    """Steady state of f = k1 X2 - k2 X^2 with X + 2 X2 = x_total."""
    k1, k2 = np.asarray(k1, dtype=float), np.asarray(k2, dtype=float)
    r = k1 / (4.0 * k2)
    d = np.sqrt(r * r + 2.0 * r * x_total)
    # d - r without cancellation; r = 0 (k1 = 0) gives x = 0
    x = np.divide(2.0 * r * x_total, d + r, out=np.zeros(np.broadcast(r, d).shape), where=(d + r) > 0)
    x2 = 0.5 * (x_total - x)
    return x, x2


def chemistry_tendency(x, x2, k1, k2, dt):
    """Backward-Euler consistent f with X + 2 dt f and X2 - dt f, then clamped.

    f solves  a f^2 + b f + c = 0  with a = 4 k2 dt^2,
    b = 1 + k1 dt + 4 k2 X dt, c = k2 X^2 - k1 X2; the root taken is the one
    that tends to k1 X2 - k2 X^2 as dt -> 0, written as -2c / (b + sqrt(b^2 - 4ac)).
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x, x2 = np.asarray(x, dtype=float), np.asarray(x2, dtype=float)
    k1, k2 = np.asarray(k1, dtype=float), np.asarray(k2, dtype=float)
    a = 4.0 * k2 * dt * dt
    b = 1.0 + k1 * dt + 4.0 * k2 * x * dt
    c = k2 * x * x - k1 * x2
    disc = b * b - 4.0 * a * c
    if np.any(disc < 0.0):
        k = int(np.argmin(disc))
        raise ValueError(f"chemistry quadratic has no real root at index {k} (discriminant {disc.flat[k]:.3e})")
    f = -2.0 * c / (b + np.sqrt(disc))
    return np.where(f < 0.0, np.maximum(f, -x / dt), np.minimum(f, 2.0 * x2 / dt))


def apply_chemistry_step(x: Field, x2: Field, dt, k1, k2=None):
    """Forward-Euler update X += 2 dt f, X2 -= dt f at every node."""
    k1 = k1.values if isinstance(k1, Field) else np.asarray(k1, dtype=float)
    k2 = np.ones_like(k1) if k2 is None else (k2.values if isinstance(k2, Field) else np.asarray(k2))
    f = chemistry_tendency(x.values, x2.values, k1, k2, dt)
    return (Field(x.space, x.values + 2.0 * dt * f, x.name),
            Field(x2.space, x2.values - dt * f, x2.name))


def rate_fields(space, params: ChemistryParams = ChemistryParams()):
    lon, lat = lonlat(space.node_coordinates)
    k1, k2 = reaction_rates(lon, lat, params)
    return Field(space, k1, "k1"), Field(space, k2, "k2")

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dgtracer.limiter import (UnfixableCellError, blend, blending_coefficient, mean_mixing_ratio, mmr_limit,
                              positive_definite_limit)
from dgtracer.mesh import build_cubed_sphere_mesh, build_slice_mesh
from dgtracer.space import Field, cell_integrals, constant, integrate_product, make_space, vertex_values


@pytest.fixture(scope="module")
def mesh():
    return build_slice_mesh(5, 4, 2000.0, 2000.0)


def _rho(space, rng):
    return Field(space, rng.uniform(0.5, 1.5, space.ndof))


def _cell_mass(rho, m):
    return cell_integrals(rho.at_quadrature() * m.at_quadrature(), rho.mesh)


# ----------------------------------------------------------------------
# blending coefficient and blend
# ----------------------------------------------------------------------
def test_lambda_examples():
    assert blending_coefficient([-0.1, 0.3, 0.3, 0.3], 0.1) == (pytest.approx(0.5), False)
    assert blending_coefficient([0.0, 0.3, 0.2, 0.1], 0.15) == (0.0, False)
    assert blending_coefficient([-1.0, 1.0, -1.0, 1.0], 1.0) == (pytest.approx(0.5), False)


def test_lambda_unfixable_flagged():
    lam, bad = blending_coefficient([-2.0, 0.1, 0.1, 0.1], -0.3)
    assert bad and lam == 0.0


def test_lambda_vectorised():
    lam, bad = blending_coefficient(np.array([[-0.1, 0.3, 0.3, 0.3], [1, 1, 1, 1]]), np.array([0.1, 1.0]))
    np.testing.assert_allclose(lam, [0.5, 0.0])
    assert not bad.any()


def test_blend_endpoints_and_midpoint(mesh, rng):
    sp = make_space(mesh, "V_rho1")
    m = Field(sp, rng.normal(size=sp.ndof))
    mb = mean_mixing_ratio(m, constant(sp, 1.0))
    n = mesh.ncells
    np.testing.assert_array_equal(blend(m, mb, np.zeros(n)).values, m.values)
    full = blend(m, mb, np.ones(n))
    np.testing.assert_allclose(full.cell_values(), np.repeat(mb.values[:, None], 4, axis=1)[mb.space.cell_dofs[:, 0]])
    half = blend(m, mb, np.full(n, 0.5))
    np.testing.assert_allclose(half.cell_values(), 0.5 * m.cell_values() + 0.5 * full.cell_values())


# ----------------------------------------------------------------------
# mean mixing ratio
# ----------------------------------------------------------------------
def test_mean_mixing_ratio_of_constant(mesh, rng):
    sp = make_space(mesh, "V_rho1")
    mb = mean_mixing_ratio(constant(sp, 0.02), _rho(sp, rng))
    np.testing.assert_allclose(mb.values, 0.02, rtol=1e-14)


def test_mean_mixing_ratio_unit_density_is_cell_average(mesh, rng):
    sp = make_space(mesh, "V_rho1")
    m = Field(sp, rng.normal(size=sp.ndof))
    mb = mean_mixing_ratio(m, constant(sp, 1.0))
    np.testing.assert_allclose(mb.values, m.cell_values().mean(axis=1), atol=1e-14)


def test_mean_mixing_ratio_preserves_cell_mass(mesh, rng):
    sp = make_space(mesh, "V_rho1")
    rho, m = _rho(sp, rng), Field(sp, rng.normal(size=sp.ndof))
    mb = mean_mixing_ratio(m, rho)
    np.testing.assert_allclose(cell_integrals(rho.at_quadrature() * mb.values[:, None], mesh),
                               _cell_mass(rho, m), atol=1e-12 * np.abs(_cell_mass(rho, m)).max())


# ----------------------------------------------------------------------
# MMR limiter
# ----------------------------------------------------------------------
def test_mmr_leaves_nonnegative_field_bitwise(mesh, rng):
    sp = make_space(mesh, "V_rho1")
    m = Field(sp, rng.uniform(0, 1, sp.ndof))
    out, nl, nu = mmr_limit(m, _rho(sp, rng))
    assert out.values.tobytes() == m.values.tobytes()
    assert (nl, nu) == (0, 0)


def test_mmr_example_cell(mesh):
    sp = make_space(mesh, "V_rho1")
    m = constant(sp, 0.3)
    m.values[sp.cell_dofs[0]] = [-0.1, 0.3, 0.3, 0.3]  # mean 0.2 with unit density
    out, nl, nu = mmr_limit(m, constant(sp, 1.0))
    assert (nl, nu) == (1, 0)
    lam = 0.1 / 0.3
    np.testing.assert_allclose(out.values[sp.cell_dofs[0]], (1 - lam) * np.array([-0.1, 0.3, 0.3, 0.3]) + lam * 0.2,
                               atol=1e-15)
    assert vertex_values(out)[0].min() == pytest.approx(0.0, abs=1e-15)


def test_mmr_abort_on_unfixable(mesh):
    sp = make_space(mesh, "V_rho1")
    m = constant(sp, 0.1)
    m.values[sp.cell_dofs[2]] = -0.5
    out, nl, nu = mmr_limit(m, constant(sp, 1.0))
    assert nu == 1
    with pytest.raises(UnfixableCellError):
        mmr_limit(m, constant(sp, 1.0), abort_on_unfixable=True)


def test_mmr_constant_unchanged(mesh, rng):
    sp = make_space(mesh, "V_rho1")
    out, nl, _ = mmr_limit(constant(sp, 0.02), _rho(sp, rng))
    assert nl == 0
    np.testing.assert_array_equal(out.values, 0.02)


def _fixable_field(sp, rng, rho):
    """Random field whose per-cell mass is non-negative but with negative vertices."""
    m = Field(sp, rng.uniform(-0.5, 1.0, sp.ndof))
    mb = mean_mixing_ratio(m, rho)
    low = mb.values < 0.05
    if low.any():
        m.values[sp.cell_dofs[low]] += 0.05 - mb.values[low, None]
    return m


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**20), sphere=st.booleans())
def test_mmr_properties(seed, sphere):
    r = np.random.default_rng(seed)
    msh = build_cubed_sphere_mesh(2, 1.0) if sphere else build_slice_mesh(4, 3, 1.0, 1.0)
    sp = make_space(msh, "V_rho1")
    rho = _rho(sp, r)
    m = _fixable_field(sp, r, rho)
    out, nl, nu = mmr_limit(m, rho)
    assert nu == 0
    assert vertex_values(out).min() >= -1e-14
    before, after = _cell_mass(rho, m), _cell_mass(rho, out)
    np.testing.assert_allclose(after, before, atol=1e-13 * np.abs(before).max())
    assert integrate_product(rho, out) == pytest.approx(integrate_product(rho, m), abs=1e-13)
    again, nl2, _ = mmr_limit(out, rho)
    np.testing.assert_allclose(again.values, out.values, atol=1e-14)


def test_mmr_requires_colocated(mesh):
    with pytest.raises(ValueError):
        mean_mixing_ratio(constant(make_space(mesh, "V_rho1"), 1), constant(make_space(mesh, "V_rho0"), 1))


# ----------------------------------------------------------------------
# baseline limiter
# ----------------------------------------------------------------------
def test_baseline_example(mesh):
    sp = make_space(mesh, "V_rho1")
    m = constant(sp, 1.0)
    m.values[sp.cell_dofs[0]] = [-1.0, 3.0, -1.0, 3.0]
    out, nl, nc = positive_definite_limit(m)
    np.testing.assert_allclose(out.values[sp.cell_dofs[0]], [0.0, 2.0, 0.0, 2.0], atol=1e-15)
    assert (nl, nc) == (1, 0)


def test_baseline_negative_mean_clipped(mesh):
    sp = make_space(mesh, "V_rho1")
    m = constant(sp, 1.0)
    m.values[sp.cell_dofs[3]] = [-1.0, 0.5, -1.0, 0.5]
    out, nl, nc = positive_definite_limit(m)
    np.testing.assert_array_equal(out.values[sp.cell_dofs[3]], 0.0)
    assert nc == 1


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**20))
def test_baseline_properties(seed):
    r = np.random.default_rng(seed)
    msh = build_slice_mesh(4, 3, 1.0, 1.0)
    sp = make_space(msh, "V_rho1")
    m = Field(sp, r.uniform(-0.5, 1.0, sp.ndof))
    out, _, nc = positive_definite_limit(m)
    assert vertex_values(out).min() >= -1e-15
    ok = m.cell_values().mean(axis=1) >= 0
    np.testing.assert_allclose(out.cell_values().mean(axis=1)[ok], m.cell_values().mean(axis=1)[ok], atol=1e-14)
    assert nc == int((~ok).sum())

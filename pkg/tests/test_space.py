import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dgtracer.mesh import build_cubed_sphere_mesh, build_slice_mesh
from dgtracer.space import (PRESETS, Element1D, Field, constant, domain_area, evaluate, evaluate_at_vertices,
                            integrate, integrate_product, interpolate, lagrange_1d, make_space, vertex_values,
                            write_field_csv)


@pytest.fixture(scope="module")
def slice22():
    return build_slice_mesh(2, 2, 2000.0, 2000.0)


@pytest.mark.parametrize("name,ndof", [("V_rho0", 4), ("V_rho1", 16), ("V_theta0", 6), ("V_theta1", 20),
                                       ("V_tilde1", 6), ("V_hat_theta", 24)])
def test_slice_ndof(slice22, name, ndof):
    assert make_space(slice22, name).ndof == ndof


def test_sphere_ndof(sphere2):
    assert make_space(sphere2, "V_tilde1").ndof == 26
    assert make_space(sphere2, "V_rho1").ndof == 96
    assert make_space(sphere2, "V_rho0").ndof == 24


@pytest.mark.parametrize("name", ["V_theta0", "V_theta1"])
def test_vertical_structure_rejected_on_sphere(sphere2, name):
    with pytest.raises(ValueError):
        make_space(sphere2, name)


def test_element_validation():
    with pytest.raises(ValueError):
        Element1D("Q", 0)
    with pytest.raises(ValueError):
        Element1D("P", 1)


def test_lagrange_partition_of_unity_and_kronecker():
    nodes = np.linspace(-1, 1, 4)
    val, der = lagrange_1d(nodes, nodes)
    np.testing.assert_allclose(val, np.eye(4), atol=1e-15)
    s = np.linspace(-1, 1, 11)
    val, der = lagrange_1d(nodes, s)
    np.testing.assert_allclose(val.sum(axis=-1), 1.0, atol=1e-14)
    np.testing.assert_allclose(der.sum(axis=-1), 0.0, atol=1e-13)
    # reproduces x^3 and its derivative
    np.testing.assert_allclose(val @ nodes**3, s**3, atol=1e-14)
    np.testing.assert_allclose(der @ nodes**3, 3 * s**2, atol=1e-13)


def test_field_shape_checked(slice4):
    with pytest.raises(ValueError):
        Field(make_space(slice4, "V_rho1"), np.zeros(3))


@pytest.mark.parametrize("name", list(PRESETS))
def test_constant_interpolation(slice4, name):
    sp = make_space(slice4, name)
    f = interpolate(sp, lambda x: np.full(len(x), 3.5))
    np.testing.assert_array_equal(f.values, 3.5)
    np.testing.assert_allclose(f.at_quadrature(), 3.5, rtol=1e-15)


def test_nonfinite_interpolation_reports_location(slice4):
    sp = make_space(slice4, "V_rho1")

    def f(x):
        v = np.ones(len(x))
        v[5] = np.nan
        return v

    with pytest.raises(ValueError, match="location"):
        interpolate(sp, f)


def test_slice_area(slice4):
    assert domain_area(slice4) == pytest.approx(4.0e6, rel=1e-14)


def test_sphere_area_of_constant():
    m = build_cubed_sphere_mesh(6, 1.0).with_default_nq(6)
    f = constant(make_space(m, "V_rho0"), 1.0)
    assert integrate(f) == pytest.approx(4 * math.pi, rel=1e-6)


def test_integral_of_product_of_constants(slice4):
    rho = constant(make_space(slice4, "V_rho1"), 1.2)
    m = constant(make_space(slice4, "V_theta1"), 0.5)
    assert integrate_product(rho, m) == pytest.approx(0.6 * 4.0e6, rel=1e-14)


def test_staggered_product_against_brute_force(slice4, rng):
    """V_rho1 x V_theta1 product: the default rule against a per-cell tensor Gauss rule
    with three more points, evaluated point by point."""
    rho = Field(make_space(slice4, "V_rho1"))
    m = Field(make_space(slice4, "V_theta1"))
    rho.values[:] = rng.uniform(0.5, 1.5, rho.space.ndof)
    m.values[:] = rng.uniform(-1, 1, m.space.ndof)
    fast = integrate_product(rho, m)
    nq = slice4.default_nq + 3
    g, w = np.polynomial.legendre.leggauss(nq)
    jac = slice4.dx * slice4.dz / 4
    total = 0.0
    for c in range(slice4.ncells):
        for a, wa in zip(g, w):
            for b, wb in zip(g, w):
                total += wa * wb * jac * evaluate(rho, c, (a, b)) * evaluate(m, c, (a, b))
    assert fast == pytest.approx(total, rel=1e-12)


def test_integrate_product_mesh_check(slice4, slice22):
    with pytest.raises(ValueError):
        integrate_product(constant(make_space(slice4, "V_rho0"), 1), constant(make_space(slice22, "V_rho0"), 1))


def test_evaluate_linear_midpoint(slice4):
    sp = make_space(slice4, "V_rho1")
    f = interpolate(sp, lambda x: 2.0 * x[:, 0] - x[:, 1])
    c = 5
    i, j = slice4.cell_column_level(c)
    xc, zc = (i + 0.5) * slice4.dx, (j + 0.5) * slice4.dz
    assert evaluate(f, c, (0.0, 0.0)) == pytest.approx(2 * xc - zc, rel=1e-13)


def test_vertex_values_example(slice22):
    sp = make_space(slice22, "V_rho1")
    f = Field(sp)
    f.values[sp.cell_dofs[0]] = [-0.1, 0.3, 0.3, 0.3]
    v = evaluate_at_vertices(f, 0)
    np.testing.assert_allclose(v, [-0.1, 0.3, 0.3, 0.3])
    assert v.min() == pytest.approx(-0.1)


def test_evaluate_rejects_outside_reference(slice4):
    f = constant(make_space(slice4, "V_rho1"), 1.0)
    with pytest.raises(ValueError):
        evaluate(f, 0, (1.5, 0.0))


@pytest.mark.parametrize("name", ["V_theta0", "V_theta1", "V_tilde1"])
def test_continuous_direction_traces_agree(slice4, rng, name):
    sp = make_space(slice4, name)
    f = Field(sp, rng.normal(size=sp.ndof))
    s = np.linspace(-1, 1, 5)
    for j in range(slice4.nz - 1):
        for i in range(slice4.nx):
            lo, hi = slice4.cell_index(i, j), slice4.cell_index(i, j + 1)
            top = [evaluate(f, lo, (a, 1.0)) for a in s]
            bottom = [evaluate(f, hi, (a, -1.0)) for a in s]
            np.testing.assert_allclose(top, bottom, atol=1e-13)
    if sp.spec.horizontal.continuous:
        for i in range(slice4.nx):
            left, right = slice4.cell_index(i, 0), slice4.cell_index((i + 1) % slice4.nx, 0)
            np.testing.assert_allclose([evaluate(f, left, (1.0, b)) for b in s],
                                       [evaluate(f, right, (-1.0, b)) for b in s], atol=1e-13)


def test_sphere_continuous_space_traces_agree(sphere2, rng):
    sp = make_space(sphere2, "V_tilde1")
    f = Field(sp, rng.normal(size=sp.ndof))
    fq = sphere2.facet_quadrature_data(3)
    plus = f.at_reference(sphere2.plus_cell, fq.plus_ref)
    minus = f.at_reference(sphere2.minus_cell, fq.minus_ref)
    np.testing.assert_allclose(plus, minus, atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-10, 10), b=st.floats(-10, 10), seed=st.integers(0, 2**16))
def test_integral_is_linear(a, b, seed):
    mesh = build_slice_mesh(3, 2, 1.0, 1.0)
    sp = make_space(mesh, "V_theta1")
    r = np.random.default_rng(seed)
    f, g = Field(sp, r.normal(size=sp.ndof)), Field(sp, r.normal(size=sp.ndof))
    lhs = integrate(Field(sp, a * f.values + b * g.values))
    rhs = a * integrate(f) + b * integrate(g)
    assert lhs == pytest.approx(rhs, abs=1e-12 * (1 + abs(a) + abs(b)))


@pytest.mark.parametrize("name", list(PRESETS))
def test_interpolation_reproduces_nodal_values(slice4, name):
    sp = make_space(slice4, name)
    f = interpolate(sp, lambda x: np.sin(2 * np.pi * x[:, 0] / 2000.0) + x[:, 1] / 2000.0)
    for c in (0, 7, 11):
        for loc in range(sp.nloc):
            x, _ = slice4.geometry(np.array([c]), sp.node_ref[loc][None])
            exact = np.sin(2 * np.pi * x[0, 0, 0] / 2000.0) + x[0, 0, 1] / 2000.0
            assert evaluate(f, c, sp.node_ref[loc]) == pytest.approx(exact, rel=1e-12, abs=1e-12)


def test_numbering_is_deterministic(slice4):
    a = make_space(slice4, "V_theta1").cell_dofs
    b = make_space(build_slice_mesh(4, 3, 2000.0, 2000.0), "V_theta1").cell_dofs
    np.testing.assert_array_equal(a, b)
    assert set(a.ravel()) == set(range(a.max() + 1))


def test_vertex_values_shape(sphere2):
    f = constant(make_space(sphere2, "V_rho1"), 2.0)
    v = vertex_values(f)
    assert v.shape == (24, 4)
    np.testing.assert_allclose(v, 2.0)


def test_write_field_csv(tmp_path, slice22):
    sp = make_space(slice22, "V_theta0")
    f = interpolate(sp, lambda x: x[:, 1])
    path = tmp_path / "f.csv"
    write_field_csv(f, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["dof", "x", "y", "value"]
    assert len(rows) == sp.ndof + 1
    for r in rows[1:]:
        assert float(r[3]) == float(r[2])

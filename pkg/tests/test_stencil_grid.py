import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ersatz.errors import DimensionMismatch, GridTooCoarse, InvalidDimension, InvalidParameter, StencilOutOfDomain
from ersatz.stencil_grid import (
    Domain,
    GridFunction,
    build_grid,
    build_standard_stencil,
    build_stencil,
    diff_vectors,
    first_diff,
    forward_diffs,
    second_diff,
    second_diffs,
)


def test_standard_stencil_d1():
    s = build_standard_stencil(1)
    assert s.m == 1
    assert s.vectors.tolist() == [[1]]
    assert s.radius == 1.0


def test_standard_stencil_d2():
    s = build_standard_stencil(2)
    assert s.vectors.tolist() == [[1, 0], [0, 1], [1, 1], [1, -1]]
    assert s.m == 4
    assert s.radius == pytest.approx(math.sqrt(2))


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_standard_stencil_invariants(d):
    s = build_standard_stencil(d)
    assert s.m == d * d
    vecs = {tuple(v) for v in s.vectors}
    for i in range(d):
        e = [0] * d
        e[i] = 1
        assert tuple(e) in vecs
    for i, j in itertools.combinations(range(d), 2):
        plus = [0] * d
        plus[i] = plus[j] = 1
        minus = list(plus)
        minus[j] = -1
        assert tuple(plus) in vecs and tuple(minus) in vecs
    sym = {tuple(v) for v in s.symmetrized()}
    assert sym == {tuple(-np.array(v)) for v in sym}
    assert s.radius >= 1
    assert s.vectors.dtype.kind == "i"


def test_standard_stencil_d3_radius():
    s = build_standard_stencil(3)
    assert s.m == 9
    assert s.radius == pytest.approx(math.sqrt(2))


@pytest.mark.parametrize("d", [0, -1])
def test_standard_stencil_rejects_bad_dimension(d):
    with pytest.raises(InvalidDimension):
        build_standard_stencil(d)


def test_stencil_is_immutable():
    s = build_standard_stencil(2)
    with pytest.raises(ValueError):
        s.vectors[0, 0] = 7


def test_wider_stencil_contains_standard_and_is_primitive():
    s = build_stencil(2, 2)
    std = build_standard_stencil(2)
    assert s.vectors[: std.m].tolist() == std.vectors.tolist()
    for v in s.vectors:
        assert math.gcd(*map(int, v)) == 1
        assert np.abs(v).max() <= 2
    # no vector appears together with its negative
    keys = {tuple(v) for v in s.vectors}
    assert not any(tuple(-np.array(v)) in keys for v in s.vectors)


def test_grid_too_coarse_example():
    dom = Domain.box([0, 0], [1, 1])
    st_ = build_standard_stencil(2)
    with pytest.raises(GridTooCoarse):
        build_grid(dom, st_, 0.5)
    g = build_grid(dom, st_, 0.5, allow_empty=True)
    assert g.n == 9
    assert not g.interior.any()
    assert (g.rho <= 0.5 * math.sqrt(2)).all()


def test_center_is_interior_at_h_eighth():
    g = build_grid(Domain.box([0, 0], [1, 1]), build_standard_stencil(2), 0.125)
    j = g.locate([0.5, 0.5])
    assert j >= 0
    assert g.rho[j] == pytest.approx(0.5)
    assert g.interior[j]


def test_torus_all_interior():
    g = build_grid(Domain.torus([1.0]), build_standard_stencil(1), 0.25)
    assert g.n == 4
    assert g.interior.all()
    assert np.isinf(g.rho).all()


def test_torus_period_must_be_multiple_of_h():
    with pytest.raises(InvalidParameter):
        build_grid(Domain.torus([1.0]), build_standard_stencil(1), 0.3)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        build_grid(Domain.box([0, 0], [1, 1]), build_standard_stencil(3), 0.1)


@pytest.mark.parametrize("h", [1 / 8, 1 / 10, 0.07, 1 / 16])
def test_interior_nodes_have_full_stencil(h):
    g = build_grid(Domain.box([0, 0], [1, 1]), build_standard_stencil(2), h)
    lam = g.stencil.radius
    ids = g.interior_ids
    assert (g.rho[ids] > lam * h).all()
    assert (g.plus[:, ids] >= 0).all() and (g.minus[:, ids] >= 0).all()
    assert (g.rho[g.boundary_ids] <= lam * h + 1e-15).all()


def test_ball_grid_interior():
    g = build_grid(Domain.ball([0, 0], 1.0), build_standard_stencil(2), 0.1)
    r = np.linalg.norm(g.coords, axis=1)
    assert (r <= 1 + 1e-12).all()
    np.testing.assert_allclose(g.rho, 1 - r, atol=1e-12)
    ids = g.interior_ids
    assert (g.plus[:, ids] >= 0).all() and (g.minus[:, ids] >= 0).all()


@given(
    c=st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    k=st.integers(0, 3),
)
@settings(max_examples=40)
def test_affine_exactness(c, k):
    g = build_grid(Domain.box([0, 0], [1, 1]), build_standard_stencil(2), 0.125)
    c = np.array(c)
    f = GridFunction.sample(g, lambda x: x @ c)
    x = g.locate([0.5, 0.375])
    l = g.stencil.vectors[k]
    assert first_diff(f, l, x) == pytest.approx(c @ l, abs=1e-9)
    assert second_diff(f, l, x) == pytest.approx(0.0, abs=1e-8)


@given(
    a=st.lists(st.floats(-3, 3), min_size=3, max_size=3),
    h=st.sampled_from([0.25, 0.125, 0.1, 1 / 32]),
)
@settings(max_examples=40)
def test_quadratic_second_difference_exact(a, h):
    A = np.array([[a[0], a[1]], [a[1], a[2]]])
    g = build_grid(Domain.box([-1, -1], [1, 1]), build_standard_stencil(2), h)
    f = GridFunction.sample(g, lambda x: np.einsum("ni,ij,nj->n", x, A, x))
    x = g.locate([0.0, 0.0]) if h != 0.1 else g.locate([0.2, -0.1])
    for l in g.stencil.vectors:
        assert second_diff(f, l, x) == pytest.approx(2 * l @ A @ l, abs=1e-9)


def test_spike_second_difference():
    g = build_grid(Domain.torus([2.0]), build_standard_stencil(1), 0.5)
    x = g.locate([0.5])
    vals = np.zeros(g.n)
    vals[x] = 1.0
    assert second_diff(GridFunction(g, vals), [1], x) == pytest.approx(-8.0)


def test_diff_vectors_quadratic():
    h = 0.125
    g = build_grid(Domain.box([0, 0], [1, 1]), build_standard_stencil(2), h)
    f = GridFunction.sample(g, lambda x: (x**2).sum(axis=1))
    x = g.locate([0.25, 0.625])
    grad, z = diff_vectors(f, g.stencil, x)
    np.testing.assert_allclose(grad, [2 * 0.25 + h, 2 * 0.625 + h], atol=1e-12)
    np.testing.assert_allclose(z, [2, 2, 4, 4], atol=1e-10)


def test_diff_vectors_constant_and_affine():
    g = build_grid(Domain.box([0, 0], [1, 1]), build_standard_stencil(2), 0.125)
    x = g.locate([0.5, 0.5])
    grad, z = diff_vectors(GridFunction(g, np.full(g.n, 3.0)), g.stencil, x)
    assert not grad.any() and not z.any()
    c = np.array([1.5, -2.0])
    grad, z = diff_vectors(GridFunction.sample(g, lambda y: y @ c), g.stencil, x)
    np.testing.assert_allclose(grad, c, atol=1e-12)
    np.testing.assert_allclose(z, 0, atol=1e-10)


def test_missing_neighbor_raises():
    g = build_grid(Domain.box([0, 0], [1, 1]), build_standard_stencil(2), 0.125)
    f = GridFunction(g, np.zeros(g.n))
    corner = g.locate([0.0, 0.0])
    with pytest.raises(StencilOutOfDomain):
        second_diff(f, [1, 0], corner)
    with pytest.raises(StencilOutOfDomain):
        second_diffs(f.values, g, np.array([corner]))


def test_vectorized_matches_pointwise(rng):
    g = build_grid(Domain.box([0, 0], [1, 1]), build_standard_stencil(2), 0.1)
    f = GridFunction(g, rng.normal(size=g.n))
    ids = g.interior_ids
    z = second_diffs(f.values, g, ids)
    gr = forward_diffs(f.values, g, ids)
    for row, x in enumerate(ids[::7]):
        grad, zz = diff_vectors(f, g.stencil, x)
        np.testing.assert_allclose(z[row * 7], zz, rtol=1e-12)
        np.testing.assert_allclose(gr[row * 7], grad, rtol=1e-12)


def test_torus_wraps():
    g = build_grid(Domain.torus([1.0, 1.0]), build_standard_stencil(2), 0.25)
    f = GridFunction.sample(g, lambda x: np.sin(2 * np.pi * x[:, 0]))
    x = g.locate([0.0, 0.0])
    z = second_diff(f, [1, 0], x)
    assert z == pytest.approx((1.0 - 0.0 - 1.0) / 0.0625, abs=1e-12)

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ersatz.errors import DecompositionInfeasible, DimensionMismatch, InvalidParameter, SearchFailed
from ersatz.pucci import (
    EllipticityParams,
    adequate_stencil,
    check_s_delta,
    decompose_matrix,
    eval_p,
    eval_p0,
    eval_script_p,
    feasible_hat_delta,
    reconstruct,
    s_delta_samples,
)
from ersatz.stencil_grid import build_standard_stencil


def brute_force_p(z, hd):
    """Max of sum a_k z_k over the vertices of [hd/2, 2/hd]^m."""
    best = -np.inf
    for corner in itertools.product((hd / 2, 2 / hd), repeat=len(z)):
        best = max(best, float(np.dot(corner, z)))
    return best


def rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def test_params_validation():
    EllipticityParams(0.5, 0.125, 1.0)
    with pytest.raises(InvalidParameter):
        EllipticityParams(1.0, 0.1, 1.0)
    with pytest.raises(InvalidParameter):
        EllipticityParams(0.5, 0.25, 1.0)
    with pytest.raises(InvalidParameter):
        EllipticityParams(0.5, 0.1, 0.0)


def test_script_p_examples():
    assert eval_script_p(np.zeros(4), 0.5) == 0.0
    assert eval_script_p([1.0, -1.0], 0.5) == pytest.approx(3.75)
    assert eval_script_p([2.0, 3.0, -1.0, 0.0], 0.5) == pytest.approx(19.75)


def test_script_p_matches_grid_search():
    # 50-point grid of each a_k in [hd/2, 2/hd]
    z = np.array([2.0, 3.0, -1.0, 0.0])
    axis = np.linspace(0.25, 4.0, 50)
    best = max(float(np.dot(a, z)) for a in itertools.product(axis, repeat=4))
    assert eval_script_p(z, 0.5) == pytest.approx(best, abs=1e-12)


@given(
    z=st.lists(st.floats(-100, 100), min_size=1, max_size=6),
    hd=st.floats(0.01, 0.99),
)
@settings(max_examples=200)
def test_script_p_equals_vertex_max(z, hd):
    assert eval_script_p(z, hd) == pytest.approx(brute_force_p(z, hd), rel=1e-12, abs=1e-9)


@given(
    z=st.lists(st.floats(-50, 50), min_size=4, max_size=4),
    w=st.lists(st.floats(-50, 50), min_size=4, max_size=4),
    s=st.floats(0, 10),
)
@settings(max_examples=100)
def test_script_p_convex_and_homogeneous(z, w, s):
    z, w = np.array(z), np.array(w)
    hd = 0.3
    mid = eval_script_p((z + w) / 2, hd)
    assert mid <= (eval_script_p(z, hd) + eval_script_p(w, hd)) / 2 + 1e-9
    assert eval_script_p(s * z, hd) == pytest.approx(s * eval_script_p(z, hd), rel=1e-12, abs=1e-9)


def test_script_p_vectorized_axis():
    z = np.arange(12.0).reshape(3, 4) - 5
    np.testing.assert_allclose(eval_script_p(z, 0.4), [eval_script_p(r, 0.4) for r in z])
    np.testing.assert_allclose(eval_script_p(z.T, 0.4, axis=0), eval_script_p(z, 0.4))


def test_eval_p_examples():
    s = build_standard_stencil(2)
    assert eval_p(np.zeros((2, 2)), s, 0.5) == 0.0
    assert eval_p(np.eye(2), s, 0.5) == pytest.approx(24.0)
    assert eval_p(np.diag([1.0, -1.0]), s, 0.5) == pytest.approx(3.75)
    with pytest.raises(DimensionMismatch):
        eval_p(np.eye(3), s, 0.5)


def test_eval_p0_examples():
    assert eval_p0(np.zeros((2, 2)), 0.5) == 0.0
    assert eval_p0(np.eye(2), 0.5) == pytest.approx(8.0)
    assert eval_p0(np.diag([1.0, -1.0]), 0.5) == pytest.approx(3.75)


def test_eval_p0_against_sampled_cone(rng):
    # max of a11 - a22 over a in S_{0.25}: eigenvalues in [0.25, 4]
    best = -np.inf
    for _ in range(10_000):
        q = rotation(rng.uniform(0, np.pi))
        lam = rng.uniform(0.25, 4.0, 2)
        lam[rng.integers(2)] = rng.choice([0.25, 4.0])
        a = q @ np.diag(lam) @ q.T
        best = max(best, a[0, 0] - a[1, 1])
    p0 = eval_p0(np.diag([1.0, -1.0]), 0.5)
    assert best <= p0 + 1e-12
    assert best >= p0 - 0.05


def test_decompose_identity():
    s = build_standard_stencil(2)
    lam = np.array([0.5, 0.5, 0.25, 0.25])
    np.testing.assert_allclose(reconstruct(lam, s), np.eye(2), atol=1e-15)
    out = decompose_matrix(np.eye(2), s, 0.25)
    assert ((out >= 0.25 - 1e-12) & (out <= 4 + 1e-12)).all()
    np.testing.assert_allclose(reconstruct(out, s), np.eye(2), atol=1e-9)


@pytest.mark.parametrize("a", [0.2, 1.0, 3.7])
def test_decompose_scalar(a):
    lam = decompose_matrix(np.array([[a]]), build_standard_stencil(1), 0.2)
    assert lam[0] == pytest.approx(a, abs=1e-12)


def test_decompose_off_diagonal_example():
    s = build_standard_stencil(2)
    a = np.array([[1.0, 0.3], [0.3, 1.0]])
    lam = decompose_matrix(a, s, 0.125)
    assert ((lam >= 0.125 - 1e-12) & (lam <= 8 + 1e-12)).all()
    assert np.abs(reconstruct(lam, s) - a).max() <= 1e-9


def test_decompose_off_diagonal_infeasible_at_quarter():
    # a11 = l1 + l3 + l4 and a12 = l3 - l4 force l1 <= 1 - 2 * 0.4 = 0.2
    with pytest.raises(DecompositionInfeasible):
        decompose_matrix(np.array([[1.0, 0.3], [0.3, 1.0]]), build_standard_stencil(2), 0.25)


def test_decompose_diagonal_balances_diagonals():
    lam = decompose_matrix(np.diag([1.5, 0.7]), build_standard_stencil(2), 0.1)
    assert lam[2] == pytest.approx(lam[3], abs=1e-9)


def test_check_s_delta():
    assert check_s_delta(np.eye(2), 0.5)
    assert not check_s_delta(np.diag([0.4, 1.0]), 0.5)


@given(theta=st.floats(0, 2 * np.pi))
@settings(max_examples=50)
def test_check_s_delta_rotation_invariant(theta):
    q = rotation(theta)
    assert check_s_delta(q @ np.diag([0.6, 1.8]) @ q.T, 0.5)


def test_samples_lie_in_cone_and_are_prefix_stable():
    a = s_delta_samples(0.5, 2, 64, seed=3)
    b = s_delta_samples(0.5, 2, 128, seed=3)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert all(check_s_delta(m, 0.5) for m in b)


def test_feasible_hat_delta_d1_is_cap():
    assert feasible_hat_delta(0.5, 1) == pytest.approx(0.125)


def test_feasible_hat_delta_d2():
    hd = feasible_hat_delta(0.5, 2)
    assert 0 < hd <= 0.125
    st_ = adequate_stencil(0.5, 2)
    for a in s_delta_samples(0.5 / 4, 2, 64, seed=11):
        lam = decompose_matrix(a, st_, hd)
        assert np.abs(reconstruct(lam, st_) - a).max() <= 1e-9
    assert feasible_hat_delta(0.5, 2, samples=512) <= hd * (1 + 1e-9)


def test_feasible_hat_delta_search_failed():
    # the standard stencil cannot carry S_{delta/4}: no hat_delta above the floor works
    with pytest.raises(SearchFailed):
        feasible_hat_delta(0.5, 2, stencil=build_standard_stencil(2))

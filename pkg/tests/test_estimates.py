from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ersatz.errors import CoefficientConditionsViolated, InsufficientData, InvalidRange
from ersatz.estimates import (
    fuzz_interpolation,
    fuzz_max_principle,
    interpolation_inequality_check,
    max_principle_check,
    measure,
    refinement_boundedness,
)
from ersatz.hamiltonians import ErsatzOperator, make_linear
from ersatz.pucci import EllipticityParams
from ersatz.solver import SolveConfig, solve
from ersatz.stencil_grid import Domain, build_grid, build_standard_stencil

NU = [0.5, 0.5, 0.25, 0.25]
ST2 = build_standard_stencil(2)
ST1 = build_standard_stencil(1)


def box_heat(h, g, T=0.02, box=3.0, **kw):
    grid = build_grid(Domain.box([0, 0], [box, box]), ST2, h)
    op = ErsatzOperator(make_linear(NU, [0.0, 0.0]), EllipticityParams(0.96, 0.24, 100.0), ST2)
    return SolveConfig(grid, op, g, T, **kw)


def quad(T):
    return lambda t, x: (x**2).sum(axis=1) + 4 * (T - t)


def torus_sine(h, T=0.05):
    grid = build_grid(Domain.torus([1.0]), ST1, h)
    op = ErsatzOperator(make_linear([1.0], [0.0]), EllipticityParams(0.96, 0.24, 1000.0), ST1)
    return SolveConfig(grid, op, lambda t, x: np.sin(2 * np.pi * x[:, 0]), T, store_every=10)


def test_exact_quadratic_report():
    c = box_heat(1 / 8, quad(0.02))
    rep = measure(solve(c), c)
    assert rep.boundary_wedge_constant <= 1e-10
    weight = np.maximum(c.grid.rho - 6 * c.grid.stencil.radius * c.grid.h, 0.0)
    assert rep.weighted_second_diff_sup == pytest.approx(4 * weight.max(), abs=1e-10)
    assert rep.time_diff_sup == pytest.approx(4.0, abs=1e-9)
    assert rep.active_set_fraction == 0.0
    assert rep.global_second_diff_sup is None
    assert all(np.isfinite(v) and v >= 0 for _, v in rep.items())


def test_constant_solution_has_zero_differences():
    c = box_heat(1 / 8, lambda t, x: np.full(x.shape[0], 2.5))
    rep = measure(solve(c), c)
    for name in (
        "time_diff_sup",
        "first_diff_sup",
        "lipschitz_modulus",
        "holder_quotient",
        "boundary_wedge_constant",
        "weighted_second_diff_sup",
    ):
        assert getattr(rep, name) == 0.0, name


def test_measure_is_deterministic():
    c = torus_sine(1 / 32)
    tr = solve(c)
    assert measure(tr, c) == measure(tr, c)


def test_torus_refinement_stable():
    reps = []
    for h in (1 / 32, 1 / 64):
        c = torus_sine(h)
        reps.append(measure(solve(c), c))
    a, b = reps
    assert a.boundary_wedge_constant is None and a.weighted_second_diff_sup is None
    assert abs(b.first_diff_sup / a.first_diff_sup - 1) < 0.1
    assert abs(b.global_second_diff_sup / a.global_second_diff_sup - 1) < 0.1
    # the fundamental mode: sum |delta v| ~ 2 pi, sum |Delta v| ~ 4 pi^2
    assert a.first_diff_sup == pytest.approx(2 * np.pi, rel=0.02)
    assert a.global_second_diff_sup == pytest.approx(4 * np.pi**2, rel=0.02)


def test_measure_needs_two_slices():
    c = box_heat(1 / 8, quad(0.02), store="final")
    tr = solve(c)
    measure(tr, c)
    with pytest.raises(InsufficientData):
        measure(replace(tr, stored=tr.stored[:1], values=tr.values[:1]), c)


def test_refinement_flags_clear_on_exact_test():
    reps = []
    # (rho - 6 lambda h)+ is still growing with 1/h below h = 1/16 on this box
    for h in (1 / 16, 1 / 32, 1 / 64):
        c = box_heat(h, quad(0.002), T=0.002, store_every=50)
        reps.append(measure(solve(c), c))
    rows = refinement_boundedness(reps)
    assert rows and not any(r.flagged for r in rows)


def test_refinement_flags_clear_on_torus():
    reps = []
    for h in (1 / 16, 1 / 32, 1 / 64):
        c = torus_sine(h)
        reps.append(measure(solve(c), c))
    assert not any(r.flagged for r in refinement_boundedness(reps))


def test_broken_cfl_raises_time_diff_flag():
    # K = 1 keeps the P - K branch active, whose slope sets the step limit
    reps = {}
    for safety in (0.9, 1.5):
        reps[safety] = []
        for h in (1 / 8, 1 / 16, 1 / 32):
            grid = build_grid(Domain.box([0, 0], [1, 1]), ST2, h)
            op = ErsatzOperator(make_linear(NU, [0.0, 0.0]), EllipticityParams(0.96, 0.24, 1.0), ST2)
            g = lambda t, x, h=h: (x**2).sum(axis=1) + 1e-6 * np.cos(np.pi * x[:, 0] / h)
            c = SolveConfig(grid, op, g, 0.01, safety=safety, allow_unstable=True)
            reps[safety].append(measure(solve(c), c))
    stable = {r.field: r for r in refinement_boundedness(reps[0.9])}
    broken = {r.field: r for r in refinement_boundedness(reps[1.5])}
    assert not stable["time_diff_sup"].flagged
    assert broken["time_diff_sup"].flagged


def test_refinement_needs_three_levels():
    c = box_heat(1 / 8, quad(0.01), T=0.01)
    rep = measure(solve(c), c)
    with pytest.raises(InsufficientData):
        refinement_boundedness([rep, rep])


def test_zero_to_positive_is_flagged():
    c = box_heat(1 / 8, quad(0.01), T=0.01)
    rep = measure(solve(c), c)
    zero = replace(rep, time_diff_sup=0.0)
    rows = {r.field: r for r in refinement_boundedness([zero, zero, rep])}
    assert rows["time_diff_sup"].flagged


def test_interpolation_affine_example():
    r = 2
    w = np.arange(-r - 1, r + 2, dtype=float)
    lhs, rhs, ok = interpolation_inequality_check(w, r)
    assert (lhs, rhs, ok) == (1.0, 4.0, True)


def test_interpolation_square_example():
    r = 3
    w = np.arange(-r - 1, r + 2, dtype=float) ** 2
    lhs, rhs, ok = interpolation_inequality_check(w, r)
    # max |w(i)| over |i| <= 3 is 9: rhs = (3/2) 2 + (4/3) 9
    assert lhs == 1.0
    assert rhs == pytest.approx(15.0)
    assert ok


def test_interpolation_invalid_range():
    with pytest.raises(InvalidRange):
        interpolation_inequality_check(np.zeros(5), 1)
    with pytest.raises(InvalidRange):
        interpolation_inequality_check(np.zeros(6), 2)


@given(
    r=st.integers(2, 12),
    data=st.data(),
)
@settings(max_examples=200)
def test_interpolation_property(r, data):
    w = data.draw(st.lists(st.floats(-1e6, 1e6), min_size=2 * r + 3, max_size=2 * r + 3))
    assert interpolation_inequality_check(w, r)[2]


def test_interpolation_fuzz():
    passed, failures = fuzz_interpolation(5000, seed=1)
    assert passed == 5000 and not failures


@pytest.fixture(scope="module")
def small_box():
    return build_grid(Domain.box([0, 0], [1, 1]), ST2, 0.125)


def test_max_principle_nonpositive_data(small_box, rng):
    g = small_box
    ni = g.interior_ids.size
    res = max_principle_check(
        g,
        rng.uniform(0, 1, (ni, 4)),
        [0.0, 0.0],
        rng.uniform(0, 1, ni),
        -rng.uniform(0, 1, ni),
        -rng.uniform(0, 1, g.n),
        lambda t: np.zeros(g.boundary_ids.size),
        0.1,
    )
    assert res.passed and res.sup_v <= 1e-12


def test_max_principle_source_example(small_box):
    g = small_box
    res = max_principle_check(g, NU, [0.0, 0.0], 0.0, 1.0, np.zeros(g.n), lambda t: np.zeros(g.boundary_ids.size), 0.1)
    assert res.passed
    assert res.bound == pytest.approx(0.1)
    assert 0 < res.sup_v <= 0.1 + 1e-12


def test_max_principle_rejects_bad_coefficients(small_box):
    g = small_box
    zero = lambda t: np.zeros(g.boundary_ids.size)
    with pytest.raises(CoefficientConditionsViolated):
        max_principle_check(g, [-0.1, 1, 1, 1], [0, 0], 0.0, 0.0, np.zeros(g.n), zero, 0.1)
    with pytest.raises(CoefficientConditionsViolated):
        max_principle_check(g, [0.1, 1, 1, 1], [-1.0, 0], 0.0, 0.0, np.zeros(g.n), zero, 0.1)


def test_max_principle_fuzz(small_box):
    passed, failures = fuzz_max_principle(small_box, 20, seed=2)
    assert passed == 20 and not failures

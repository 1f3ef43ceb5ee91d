"""Measured a priori quantities on computed trajectories, and fuzzable
discrete inequalities (interpolation, maximum principle)."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import CoefficientConditionsViolated, InsufficientData, InvalidRange
from .solver import SolveConfig, Trajectory
from .stencil_grid import Grid, forward_diffs, second_diffs

GROWTH_LIMIT = 1.5
ROUNDOFF_FLOOR = 1e-9


@dataclass(frozen=True)
class EstimateReport:
    time_diff_sup: float
    first_diff_sup: float
    lipschitz_modulus: float
    holder_quotient: float
    holder_alpha: float
    active_set_fraction: float
    boundary_wedge_constant: float | None = None
    weighted_second_diff_sup: float | None = None
    global_second_diff_sup: float | None = None

    def items(self) -> list[tuple[str, float]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self) if getattr(self, f.name) is not None]

    def as_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def _pair_distance(grid: Grid, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    diff = xa - xb
    if grid.periodic:
        period = np.asarray(grid.domain.period)
        diff = diff - period * np.round(diff / period)
    return np.linalg.norm(diff, axis=1)


def measure(
    traj: Trajectory,
    config: SolveConfig,
    *,
    alpha: float = 0.5,
    pairs: int = 20000,
    seed: int = 0,
) -> EstimateReport:
    """Sweep every stored (node, slice) pair; Lipschitz and Hoelder quotients use
    a seeded sample of at most ``pairs`` node pairs."""
    if traj.values.shape[0] < 2:
        raise InsufficientData("at least two stored slices are needed")
    if not 0 < alpha <= 1:
        raise InvalidRange("Hoelder exponent must lie in (0, 1]")
    grid = traj.grid
    ids = grid.interior_ids
    lam = grid.stencil.radius
    h = grid.h
    times = traj.times[traj.stored]

    first = 0.0
    weighted = 0.0
    global_second = 0.0
    wedge = 0.0
    weight = np.maximum(grid.rho[ids] - 6 * lam * h, 0.0)
    for t, v in zip(times, traj.values):
        first = max(first, float(np.abs(forward_diffs(v, grid, ids, all_vectors=True)).sum(axis=1).max()))
        z = np.abs(second_diffs(v, grid, ids))
        if grid.periodic:
            global_second = max(global_second, float(z.sum(axis=1).max()))
        else:
            weighted = max(weighted, float((weight[:, None] * z).max()))
            gv = np.asarray(config.g(t, grid.coords[ids]), dtype=float)
            wedge = max(wedge, float((np.abs(v[ids] - gv) / grid.rho[ids]).max()))

    rng = np.random.default_rng(seed)
    n_pairs = min(pairs, 10**6)
    a = rng.integers(0, grid.n, n_pairs)
    b = rng.integers(0, grid.n, n_pairs)
    sa = rng.integers(0, times.shape[0], n_pairs)
    sb = rng.integers(0, times.shape[0], n_pairs)
    dist = _pair_distance(grid, grid.coords[a], grid.coords[b])
    lip = float((np.abs(traj.values[sa, a] - traj.values[sa, b]) / (dist + h)).max())
    denom = np.abs(times[sa] - times[sb]) ** (alpha / 2) + dist**alpha
    ok = denom > 0
    holder = float((np.abs(traj.values[sa, a] - traj.values[sb, b])[ok] / denom[ok]).max(initial=0.0))

    return EstimateReport(
        time_diff_sup=traj.time_diff_sup,
        first_diff_sup=first,
        lipschitz_modulus=lip,
        holder_quotient=holder,
        holder_alpha=alpha,
        active_set_fraction=traj.active_set_fraction,
        boundary_wedge_constant=None if grid.periodic else wedge,
        weighted_second_diff_sup=None if grid.periodic else weighted,
        global_second_diff_sup=global_second if grid.periodic else None,
    )


BOUNDED_FIELDS = (
    "time_diff_sup",
    "first_diff_sup",
    "boundary_wedge_constant",
    "weighted_second_diff_sup",
    "global_second_diff_sup",
    "lipschitz_modulus",
)


@dataclass
class BoundednessRow:
    field: str
    values: list[float]
    ratios: list[float | None]
    flagged: bool


def refinement_boundedness(
    reports: list[EstimateReport],
    fields_: tuple[str, ...] = BOUNDED_FIELDS,
    limit: float = GROWTH_LIMIT,
    floor: float = ROUNDOFF_FLOOR,
) -> list[BoundednessRow]:
    """Flag fields that grow by more than ``limit`` per halving of h. Diagnostic only.

    Values at or below ``floor`` count as roundoff and never raise a flag.
    """
    if len(reports) < 3:
        raise InsufficientData("need at least three refinement levels")
    rows = []
    for name in fields_:
        vals = [getattr(r, name) for r in reports]
        if any(v is None for v in vals):
            continue
        ratios: list[float | None] = []
        flagged = False
        for prev, cur in zip(vals, vals[1:]):
            if prev > 0:
                ratios.append(cur / prev)
                flagged |= cur > max(limit * prev, floor)
            else:
                ratios.append(None)
                flagged |= cur > floor
        rows.append(BoundednessRow(name, vals, ratios, flagged))
    return rows


def interpolation_inequality_check(w, r: int) -> tuple[float, float, bool]:
    """|w(1) - w(0)| <= (r/2) max|second diff| + (4/r) max|w| over |i| <= r.

    ``w`` lists w(-r-1), ..., w(r+1).
    """
    if r < 2:
        raise InvalidRange("r must be >= 2")
    w = np.asarray(w, dtype=float)
    if w.shape[0] < 2 * r + 3:
        raise InvalidRange(f"need {2 * r + 3} values for r={r}, got {w.shape[0]}")
    w = w[: 2 * r + 3]
    off = r + 1  # position of w(0)
    core = w[off - r : off + r + 1]
    second = w[off - r + 1 : off + r + 2] - 2 * core + w[off - r - 1 : off + r]
    lhs = abs(w[off + 1] - w[off])
    rhs = 0.5 * r * np.abs(second).max() + 4.0 / r * np.abs(core).max()
    return float(lhs), float(rhs), bool(lhs <= rhs + 1e-12)


@dataclass
class MaxPrincipleResult:
    passed: bool
    sup_v: float
    bound: float
    violating_node: int | None


def max_principle_check(
    grid: Grid,
    a,
    b,
    c,
    eta,
    terminal,
    boundary,
    T: float,
    *,
    safety: float = 0.9,
) -> MaxPrincipleResult:
    """March dv/dt + sum a_k Delta_k v + sum b_k delta_{e_k} v - c v = -eta and
    compare sup v with T e^{cT} sup eta+ + e^{cT} sup (data)+, c-bar = sup c-.

    ``a`` is (m,) or (n_interior, m), ``b`` (d,) or (n_interior, d), ``c`` and
    ``eta`` scalars or (n_interior,). ``terminal`` holds v(T) at every node and
    ``boundary(t)`` the collar values at time t.
    """
    ids = grid.interior_ids
    ni, m, d = ids.size, grid.stencil.m, grid.dim
    a = np.broadcast_to(np.asarray(a, dtype=float), (ni, m))
    b = np.broadcast_to(np.asarray(b, dtype=float), (ni, d))
    c = np.broadcast_to(np.asarray(c, dtype=float), (ni,))
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (ni,))
    h = grid.h
    if (a < 0).any():
        raise CoefficientConditionsViolated("a_k must be nonnegative")
    if (h * np.maximum(-b, 0.0) > a[:, :d] + 1e-15).any():
        raise CoefficientConditionsViolated("h b_k- <= a_k fails")

    rate = (2 * a.sum(axis=1) / h**2 + np.abs(b).sum(axis=1) / h + np.abs(c)).max()
    tau = safety / rate if rate > 0 else T
    n = max(1, math.ceil(T / tau - 1e-9))
    times = np.array([T - k * tau for k in range(n)] + [0.0])

    bnd = grid.boundary_ids
    v = np.asarray(terminal, dtype=float).copy()
    data_sup = max(0.0, float(v.max()))
    sup_v = float(v[ids].max(initial=-np.inf))
    worst_node = int(ids[np.argmax(v[ids])]) if ni else None
    for i in range(n):
        t, tn = times[i], times[i + 1]
        z = second_diffs(v, grid, ids)
        g = forward_diffs(v, grid, ids)
        lv = (a * z).sum(axis=1) + (b * g).sum(axis=1) - c * v[ids]
        new = v.copy()
        new[ids] = v[ids] + (t - tn) * (lv + eta)
        if bnd.size:
            new[bnd] = boundary(tn)
            data_sup = max(data_sup, float(new[bnd].max()))
        v = new
        j = int(np.argmax(v[ids]))
        if v[ids][j] > sup_v:
            sup_v, worst_node = float(v[ids][j]), int(ids[j])

    c_bar = float(np.maximum(-c, 0.0).max(initial=0.0))
    growth = math.exp(c_bar * T)
    bound = T * growth * float(np.maximum(eta, 0.0).max(initial=0.0)) + growth * data_sup
    passed = sup_v <= bound + 1e-12
    return MaxPrincipleResult(passed, sup_v, bound, None if passed else worst_node)


# -- fuzz drivers ----------------------------------------------------------------


def random_sequence(rng: np.random.Generator, r: int) -> np.ndarray:
    """One of several sequence families on -r-1..r+1 (noise, polynomial, spike, oscillation)."""
    i = np.arange(-r - 1, r + 2, dtype=float)
    family = rng.integers(4)
    if family == 0:
        w = rng.normal(size=i.shape) * 10.0 ** rng.uniform(-3, 3)
    elif family == 1:
        coef = rng.normal(size=4) * 10.0 ** rng.uniform(-3, 1, size=4)
        w = np.polyval(coef, i)
    elif family == 2:
        w = np.zeros_like(i)
        w[rng.integers(i.size)] = rng.normal() * 100
        w[r + 2] += rng.normal()
    else:
        w = np.cos(rng.uniform(0, np.pi) * i + rng.uniform(0, 2 * np.pi)) * rng.uniform(0.1, 10)
    return w


def fuzz_interpolation(count: int, seed: int = 0, max_r: int = 20) -> tuple[int, list]:
    """Run the interpolation check on ``count`` random sequences; returns (passed, failures)."""
    rng = np.random.default_rng(seed)
    failures = []
    for _ in range(count):
        r = int(rng.integers(2, max_r + 1))
        w = random_sequence(rng, r)
        lhs, rhs, ok = interpolation_inequality_check(w, r)
        if not ok:
            failures.append((r, w, lhs, rhs))
    return count - len(failures), failures


def random_linear_scheme(grid: Grid, rng: np.random.Generator) -> dict:
    """Admissible coefficients and data: a >= 0, h b- <= a on the axis vectors."""
    ni, m, d = grid.interior_ids.size, grid.stencil.m, grid.dim
    a = rng.uniform(0.0, 1.0, (ni, m))
    b = rng.uniform(-1.0, 1.0, (ni, d)) * 2.0
    b = np.maximum(b, -a[:, :d] / grid.h)
    return {
        "a": a,
        "b": b,
        "c": rng.uniform(-0.5, 1.0, ni),
        "eta": rng.uniform(-1.0, 1.0, ni),
        "terminal": rng.uniform(-1.0, 1.0, grid.n),
        "boundary_values": rng.uniform(-1.0, 1.0, grid.boundary_ids.size),
        "T": float(rng.uniform(0.01, 0.2)),
    }


def fuzz_max_principle(grid: Grid, trials: int, seed: int = 0) -> tuple[int, list[MaxPrincipleResult]]:
    rng = np.random.default_rng(seed)
    failures = []
    for _ in range(trials):
        s = random_linear_scheme(grid, rng)
        bv = s["boundary_values"]
        res = max_principle_check(grid, s["a"], s["b"], s["c"], s["eta"], s["terminal"], lambda t: bv, s["T"])
        if not res.passed:
            failures.append(res)
    return trials - len(failures), failures

"""Explicit monotone backward marching for dv/dt + max(H_h[v], P_h[v] - K) = 0.

Terminal data sit at t = T; each step moves from t to t - tau via
``v(t - tau) = v(t) + tau * F[v(t)]``. Bounded domains pin the boundary
collar (nodes outside Omega^h) to g(t, x); the torus has no collar.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DivergenceDetected,
    IncompatibleRefinement,
    InsufficientData,
    InvalidParameter,
    MonotonicityCheckFailed,
    RefuseToStep,
)
from .hamiltonians import ErsatzOperator, SampleSpec, check_monotone_in_u0, check_stencil_ellipticity
from .pucci import eval_script_p
from .stencil_grid import Grid, build_grid


def cfl_time_step(op, h: float, safety: float = 0.9) -> float:
    """tau = safety / (2 m Lz / h^2 + d Lg / h + L0).

    ``op`` may be an :class:`ErsatzOperator` (Lz includes the 2/hd slope of
    the cutoff) or a bare :class:`StencilHamiltonian`.
    """
    if not 0 < safety:
        raise InvalidParameter("safety factor must be positive")
    ham = op.ham if isinstance(op, ErsatzOperator) else op
    lz = op.z_lipschitz if isinstance(op, ErsatzOperator) else ham.z_window[1]
    denom = 2 * ham.m * lz / h**2 + ham.dim * ham.l_grad / h + ham.l_u0
    return safety / denom


@dataclass(frozen=True, eq=False)
class SolveConfig:
    grid: Grid
    op: ErsatzOperator
    g: Callable[[float, np.ndarray], np.ndarray]
    T: float
    tau: float | None = None
    safety: float = 0.9
    mode: str | None = None
    store: str = "full"
    store_every: int = 1
    probes: tuple = ()
    allow_unstable: bool = False
    verify_ellipticity: bool = True
    sample_spec: SampleSpec | None = None

    def __post_init__(self):
        mode = self.mode or ("whole-space" if self.grid.periodic else "cylinder")
        if mode not in ("cylinder", "whole-space"):
            raise InvalidParameter(f"unknown mode {mode!r}")
        if (mode == "whole-space") != self.grid.periodic:
            raise InvalidParameter("whole-space mode requires a torus grid and cylinder mode a bounded one")
        if mode == "cylinder" and self.grid.interior.all():
            raise InvalidParameter("cylinder mode needs a nonempty boundary collar")
        object.__setattr__(self, "mode", mode)
        if not self.T > 0:
            raise InvalidParameter("horizon T must be positive")
        if self.store not in ("full", "final"):
            raise InvalidParameter("store policy must be 'full' or 'final'")
        if self.store_every < 1:
            raise InvalidParameter("store_every must be >= 1")
        if not self.allow_unstable and not 0 < self.safety <= 1:
            raise InvalidParameter("safety factor must lie in (0, 1]")
        if self.op.stencil != self.grid.stencil:
            raise InvalidParameter("operator and grid use different stencils")

    def time_step(self) -> float:
        if self.tau is not None:
            return float(self.tau)
        return cfl_time_step(self.op, self.grid.h, self.safety)

    def time_grid(self) -> np.ndarray:
        """Ascending times 0 = t_0 < ... < t_N = T; the step nearest 0 absorbs the remainder."""
        tau = self.time_step()
        n = max(1, math.ceil(self.T / tau - 1e-9))
        desc = [self.T - k * tau for k in range(n)] + [0.0]
        return np.array(desc[::-1])

    def with_grid(self, grid: Grid) -> "SolveConfig":
        return replace(self, grid=grid, probes=())

    def with_k(self, big_k: float) -> "SolveConfig":
        return replace(self, op=self.op.with_k(big_k))


@dataclass(frozen=True, eq=False)
class Trajectory:
    grid: Grid
    times: np.ndarray  # every step time, ascending
    stored: np.ndarray  # indices into ``times`` of stored slices, ascending
    values: np.ndarray  # (len(stored), n)
    branch: np.ndarray  # (len(stored), n) bool, P branch active when stepping from that slice
    active_counts: np.ndarray  # (N,), step i goes from times[i+1] to times[i]
    n_interior: int
    big_k: float
    time_diff_sup: float
    g_sup: float
    probe_ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    probe_values: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))

    @property
    def taus(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def steps(self) -> int:
        return self.times.shape[0] - 1

    @property
    def is_full(self) -> bool:
        return self.stored.shape[0] == self.times.shape[0]

    @property
    def active_set_fraction(self) -> float:
        total = self.n_interior * self.steps
        return float(self.active_counts.sum() / total) if total else 0.0

    def slice(self, time_index: int) -> np.ndarray:
        pos = np.searchsorted(self.stored, time_index)
        if pos >= self.stored.shape[0] or self.stored[pos] != time_index:
            raise InsufficientData(f"time index {time_index} is not stored")
        return self.values[pos]

    @property
    def initial(self) -> np.ndarray:
        return self.values[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]


class _Stepper:
    """Precomputed gather indices for the explicit update on one grid."""

    def __init__(self, config: SolveConfig):
        grid = config.grid
        self.config = config
        self.grid = grid
        self.op = config.op
        self.int_ids = grid.interior_ids
        self.bnd_ids = grid.boundary_ids
        self.P = grid.plus[:, self.int_ids]
        self.M = grid.minus[:, self.int_ids]
        self.E = grid.plus[: grid.dim, self.int_ids]
        self.x_int = grid.coords[self.int_ids]
        self.x_bnd = grid.coords[self.bnd_ids]
        self.h = grid.h

    def operator(self, v: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
        """F[v] on interior nodes and the P-branch mask."""
        c = np.take(v, self.int_ids)
        # (m, n) layout; the Hamiltonian sees the transposed (n, m) view
        zt = np.take(v, self.P)
        zt += np.take(v, self.M)
        zt -= 2.0 * c
        zt /= self.h**2
        grad = ((np.take(v, self.E) - c) / self.h).T
        hv = self.op.ham.func(c, grad, zt.T, t, self.x_int)
        hv = np.broadcast_to(np.asarray(hv, dtype=float), c.shape)
        pv = eval_script_p(zt, self.op.params.hat_delta, axis=0) - self.op.params.big_k
        use_p = pv > hv
        return np.where(use_p, pv, hv), use_p

    def boundary(self, t: float) -> np.ndarray:
        if self.bnd_ids.size == 0:
            return np.empty(0)
        return np.asarray(self.config.g(t, self.x_bnd), dtype=float).reshape(-1)

    def step(self, v: np.ndarray, t: float, tau: float) -> tuple[np.ndarray, np.ndarray]:
        f, use_p = self.operator(v, t)
        new = v.copy()
        new[self.int_ids] = v[self.int_ids] + tau * f
        new[self.bnd_ids] = self.boundary(t - tau)
        return new, use_p


def step(config: SolveConfig, v: np.ndarray, t: float, tau: float | None = None) -> np.ndarray:
    """One explicit update from time ``t`` to ``t - tau``."""
    tau = config.time_step() if tau is None else tau
    return _Stepper(config).step(np.asarray(v, dtype=float), t, tau)[0]


def _preflight(config: SolveConfig):
    op = config.op
    ham = op.ham
    h = config.grid.h
    if config.allow_unstable:
        return
    tau_max = cfl_time_step(op, h, 1.0)
    if config.tau is not None and config.tau > tau_max * (1 + 1e-12):
        raise RefuseToStep(f"fixed tau={config.tau:.6g} exceeds the monotonicity bound {tau_max:.6g}")
    if h * ham.l_grad > ham.z_window[0] + 1e-15:
        raise RefuseToStep(
            f"h * |drift| = {h * ham.l_grad:.4g} exceeds the smallest second-difference weight "
            f"{ham.z_window[0]:.4g}; the forward-difference scheme would not be monotone"
        )
    if config.verify_ellipticity:
        spec = config.sample_spec or _spec_for(config)
        check_stencil_ellipticity(ham, op.params.hat_delta, spec).raise_if_failed()


def _spec_for(config: SolveConfig) -> SampleSpec:
    c = config.grid.coords
    return SampleSpec(
        n=256, t_range=(0.0, config.T), x_lower=tuple(c.min(axis=0)), x_upper=tuple(c.max(axis=0))
    )


def solve(config: SolveConfig) -> Trajectory:
    _preflight(config)
    grid = config.grid
    st = _Stepper(config)
    times = config.time_grid()
    n_steps = times.shape[0] - 1

    if config.store == "full":
        stored = sorted(set(range(0, n_steps + 1, config.store_every)) | {0, n_steps})
    else:
        stored = [0, n_steps]
    stored = np.array(stored, dtype=np.int64)
    store_pos = {int(j): p for p, j in enumerate(stored)}
    values = np.empty((stored.shape[0], grid.n))
    branch = np.zeros((stored.shape[0], grid.n), dtype=bool)
    probes = np.asarray(config.probes, dtype=np.int64)
    probe_values = np.empty((n_steps + 1, probes.shape[0]))
    counts = np.zeros(n_steps, dtype=np.int64)

    v = np.asarray(config.g(times[-1], grid.coords), dtype=float).reshape(grid.n)
    g_sup = float(np.abs(v).max())
    time_diff = 0.0
    for i in range(n_steps, 0, -1):
        t, tau = times[i], times[i] - times[i - 1]
        new, use_p = st.step(v, t, tau)
        if i in store_pos:
            values[store_pos[i]] = v
            branch[store_pos[i], st.int_ids] = use_p
        if probes.size:
            probe_values[i] = v[probes]
        counts[i - 1] = int(use_p.sum())
        if not np.all(np.isfinite(new)):
            raise DivergenceDetected(f"non-finite value after step {n_steps - i + 1}", step=n_steps - i + 1)
        if st.int_ids.size:
            time_diff = max(time_diff, float(np.abs(new[st.int_ids] - v[st.int_ids]).max()) / tau)
        if st.bnd_ids.size:
            g_sup = max(g_sup, float(np.abs(new[st.bnd_ids]).max()))
        v = new
    values[0] = v
    _, use_p = st.operator(v, times[0])
    branch[0, st.int_ids] = use_p
    if probes.size:
        probe_values[0] = v[probes]

    return Trajectory(
        grid=grid,
        times=times,
        stored=stored,
        values=values,
        branch=branch,
        active_counts=counts,
        n_interior=int(st.int_ids.size),
        big_k=config.op.params.big_k,
        time_diff_sup=time_diff,
        g_sup=g_sup,
        probe_ids=probes,
        probe_values=probe_values if probes.size else np.empty((0, 0)),
    )


def residual_sup(traj: Trajectory, config: SolveConfig) -> float:
    """sup |(v(t_{i+1}) - v(t_i)) / tau_i + F[v(t_{i+1})]| over interior nodes."""
    if not traj.is_full:
        raise InsufficientData("residual needs every time slice (store='full', store_every=1)")
    st = _Stepper(config)
    worst = 0.0
    ids = st.int_ids
    for i in range(traj.steps):
        tau = traj.times[i + 1] - traj.times[i]
        f, _ = st.operator(traj.values[i + 1], traj.times[i + 1])
        r = (traj.values[i + 1][ids] - traj.values[i][ids]) / tau + f
        worst = max(worst, float(np.abs(r).max(initial=0.0)))
    return worst


def picard_check(
    traj: Trajectory, config: SolveConfig, window: int = 5, iterations: int = 50
) -> float:
    """Re-solve the last ``window`` steps (ending at t = 0) by Picard iteration
    with midpoint quadrature and return the sup distance to the marched slice.
    """
    if not traj.is_full:
        raise InsufficientData("Picard cross-check needs every time slice")
    window = min(window, traj.steps)
    st = _Stepper(config)
    ids = st.int_ids
    t = traj.times[: window + 1]
    start = traj.values[window]
    w = np.repeat(start[None, :], window + 1, axis=0)
    for j in range(window):
        w[j, st.bnd_ids] = st.boundary(t[j])
    for _ in range(iterations):
        incr = np.empty((window, ids.size))
        for i in range(window):
            mid = 0.5 * (w[i] + w[i + 1])
            f, _ = st.operator(mid, 0.5 * (t[i] + t[i + 1]))
            incr[i] = (t[i + 1] - t[i]) * f
        acc = np.cumsum(incr[::-1], axis=0)[::-1]  # acc[j] = sum_{i >= j}
        nxt = w.copy()
        nxt[:window, ids] = start[ids] + acc
        w = nxt
    return float(np.abs(w[0] - traj.values[0]).max())


@dataclass
class KSweepEntry:
    big_k: float
    trajectory: Trajectory
    positive_increment: float | None  # max (v_K - v_prevK)+ ; None for the first K
    cauchy_increment: float | None  # sup |v_K - v_prevK|

    @property
    def active_set_fraction(self) -> float:
        return self.trajectory.active_set_fraction


def k_sweep(
    config: SolveConfig,
    k_values: Sequence[float],
    tol: float = 1e-12,
    *,
    check_u0: bool = True,
    executor=None,
) -> list[KSweepEntry]:
    """Solve for every K (ascending) and check that v_K is nonincreasing in K."""
    ks = [float(k) for k in k_values]
    if not ks or any(k <= 0 for k in ks) or any(b <= a for a, b in zip(ks, ks[1:])):
        raise InvalidParameter("K values must be positive and strictly ascending")
    if check_u0:
        c = config.grid.coords
        spec = SampleSpec(t_range=(0.0, config.T), x_lower=tuple(c.min(axis=0)), x_upper=tuple(c.max(axis=0)))
        check_monotone_in_u0(config.op.ham, spec).raise_if_failed(MonotonicityCheckFailed)
    configs = [config.with_k(k) for k in ks]
    if executor is not None:
        trajs = list(executor.map(solve, configs))
    else:
        trajs = [solve(c) for c in configs]
    out = []
    prev = None
    for k, tr in zip(ks, trajs):
        if prev is None:
            out.append(KSweepEntry(k, tr, None, None))
        else:
            diff = tr.values - prev.values
            pos = float(np.maximum(diff, 0.0).max())
            if pos > tol:
                raise MonotonicityCheckFailed(f"v_K increased by {pos:.3e} going to K={k}")
            out.append(KSweepEntry(k, tr, pos, float(np.abs(diff).max())))
        prev = tr
    return out


@dataclass
class RefinementRow:
    h: float
    sup_diff_next: float | None  # sup over the common lattice of |v_h - v_{h_next}| at t = 0
    observed_order: float | None


def common_lattice(grids: Sequence[Grid]) -> list[np.ndarray]:
    """Node ids, in every grid, of the coarsest grid's nodes."""
    coarse = grids[0]
    out = [np.arange(coarse.n)]
    for g in grids[1:]:
        ratio = coarse.h_exact / g.h_exact
        if ratio.denominator != 1 or ratio < 1:
            raise IncompatibleRefinement(f"h={g.h} does not refine h={coarse.h} by an integer factor")
        ids = g._ids_of(coarse.index * ratio.numerator)
        if (ids < 0).any():
            raise IncompatibleRefinement("coarse nodes are missing from a finer grid")
        out.append(ids)
    return out


def h_refine(
    config: SolveConfig,
    h_values: Sequence[float],
    *,
    executor=None,
    store: str = "final",
    store_every: int = 1,
) -> tuple[list[RefinementRow], list[Trajectory]]:
    hs = [float(h) for h in h_values]
    if len(hs) < 2 or any(b >= a for a, b in zip(hs, hs[1:])):
        raise InvalidParameter("h values must be strictly descending with at least two entries")
    base = config.grid
    grids = [build_grid(base.domain, base.stencil, h) for h in hs]
    lattice = common_lattice(grids)
    configs = [replace(config.with_grid(g), store=store, store_every=store_every) for g in grids]
    trajs = list(executor.map(solve, configs)) if executor is not None else [solve(c) for c in configs]
    diffs = [
        float(np.abs(trajs[i].initial[lattice[i]] - trajs[i + 1].initial[lattice[i + 1]]).max())
        for i in range(len(hs) - 1)
    ]
    rows = []
    for i, h in enumerate(hs):
        e = diffs[i] if i < len(diffs) else None
        order = None
        if i + 1 < len(diffs) and diffs[i + 1] > 0 and diffs[i] > 0:
            order = math.log(diffs[i] / diffs[i + 1]) / math.log(hs[i] / hs[i + 1])
        rows.append(RefinementRow(h, e, order))
    return rows, trajs


def h_bar_on_grid(config: SolveConfig, times: np.ndarray) -> float:
    """max |H(0, 0, 0, t, x)| over grid nodes and the given times."""
    ham = config.op.ham
    x = config.grid.coords
    n = x.shape[0]
    zero_u, zero_g, zero_z = np.zeros(n), np.zeros((n, ham.dim)), np.zeros((n, ham.m))
    ts = np.unique(times) if ham.time_dependent else times[:1]
    return float(max(np.abs(ham.evaluate(zero_u, zero_g, zero_z, t, x)).max() for t in ts))


def sup_norm_bound(traj: Trajectory, config: SolveConfig) -> tuple[float, float]:
    """(sup |v|, exp(L0 T) (T (H_bar + K) + sup |g|)) with measured H_bar and sup |g|."""
    ham = config.op.ham
    h_bar = h_bar_on_grid(config, traj.times)
    bound = math.exp(ham.l_u0 * config.T) * (config.T * (h_bar + config.op.params.big_k) + traj.g_sup)
    return float(np.abs(traj.values).max()), bound

"""Extremal operators, ellipticity classes and the rank-one stencil decomposition."""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, linprog

from .errors import (
    DecompositionInfeasible,
    DimensionMismatch,
    InvalidParameter,
    SearchFailed,
)
from .stencil_grid import StencilSet, build_stencil

EIG_TOL = 1e-12
HAT_DELTA_FLOOR = 1e-6


@dataclass(frozen=True)
class EllipticityParams:
    """Every scalar constant the scheme consumes."""

    delta: float
    hat_delta: float
    big_k: float
    k0: float = 0.0
    h_bar: float = 0.0
    check_delta: float | None = None

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise InvalidParameter(f"delta must lie in (0, 1), got {self.delta}")
        if not 0.0 < self.hat_delta <= self.delta / 4 * (1 + 1e-12):
            raise InvalidParameter(
                f"hat_delta must lie in (0, delta/4] = (0, {self.delta / 4}], got {self.hat_delta}"
            )
        if not self.big_k > 0:
            raise InvalidParameter(f"K must be positive, got {self.big_k}")
        if self.k0 < 0 or self.h_bar < 0:
            raise InvalidParameter("K0 and H_bar must be nonnegative")
        if self.check_delta is not None and not 0.0 < self.check_delta < 1.0:
            raise InvalidParameter("check_delta must lie in (0, 1)")


def _sym(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim == 0:
        u = u.reshape(1, 1)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {u.shape}")
    if not np.allclose(u, u.T, rtol=0, atol=1e-12 * max(1.0, np.abs(u).max())):
        raise InvalidParameter("matrix is not symmetric")
    return 0.5 * (u + u.T)


def _check_unit_interval(name, value):
    if not 0.0 < value < 1.0:
        raise InvalidParameter(f"{name} must lie in (0, 1), got {value}")


def eval_script_p(z, hat_delta: float, axis: int = -1):
    """Box-maximal operator: max of sum a_k z_k over a_k in [hat_delta/2, 2/hat_delta].

    The maximum of a linear form over a box sits at a vertex, so each
    component contributes ``2/hd * z+`` or ``-hd/2 * z-``. Works along
    ``axis`` of ``z`` (the last one by default).
    """
    _check_unit_interval("hat_delta", hat_delta)
    z = np.asarray(z, dtype=float)
    pos = np.maximum(z, 0.0).sum(axis=axis)
    neg = np.maximum(-z, 0.0).sum(axis=axis)
    out = (2.0 / hat_delta) * pos - (hat_delta / 2.0) * neg
    return float(out) if np.ndim(out) == 0 else out


def stencil_projections(u, stencil: StencilSet) -> np.ndarray:
    """<u l_k, l_k> for every stencil vector."""
    u = _sym(u)
    if u.shape[0] != stencil.dim:
        raise DimensionMismatch("matrix and stencil dimensions differ")
    L = stencil.vectors.astype(float)
    return np.einsum("ki,ij,kj->k", L, u, L)


def eval_p(u, stencil: StencilSet, hat_delta: float) -> float:
    return eval_script_p(stencil_projections(u, stencil), hat_delta)


def eigenvalues(u) -> np.ndarray:
    ev = np.linalg.eigvalsh(_sym(u))
    ev[np.abs(ev) < EIG_TOL] = 0.0
    return ev


def eval_p0(u, delta: float) -> float:
    """Pucci maximal operator over S_{delta/2}: -(delta/2) sum eig- + (2/delta) sum eig+."""
    _check_unit_interval("delta", delta)
    ev = eigenvalues(u)
    return float((2.0 / delta) * np.maximum(ev, 0).sum() - (delta / 2.0) * np.maximum(-ev, 0).sum())


def pucci_cutoff(h_value: float, u, delta: float, big_k: float) -> float:
    """max(H, P_0 - K) for a precomputed value of H."""
    return max(h_value, eval_p0(u, delta) - big_k)


def check_s_delta(a, delta: float) -> bool:
    ev = np.linalg.eigvalsh(_sym(a))
    return bool(ev.min() >= delta - EIG_TOL and ev.max() <= 1.0 / delta + EIG_TOL)


# -- rank-one decomposition --------------------------------------------------


@functools.lru_cache(maxsize=64)
def _design(stencil: StencilSet) -> tuple[np.ndarray, tuple]:
    d = stencil.dim
    iu = np.triu_indices(d)
    L = stencil.vectors.astype(float)
    A = np.stack([np.outer(l, l)[iu] for l in L], axis=1)  # (d(d+1)/2, m)
    A.setflags(write=False)
    return A, iu


def _slack_lp(b: np.ndarray, A: np.ndarray, lo: float, hi: float | None):
    """max s subject to A lam = b, lam_k - lo >= s, hi - lam_k >= s."""
    n_eq, m = A.shape
    c = np.zeros(m + 1)
    c[-1] = -1.0
    rows = [np.hstack([-np.eye(m), np.ones((m, 1))])]
    rhs = [np.full(m, -lo)]
    if hi is not None:
        rows.append(np.hstack([np.eye(m), np.ones((m, 1))]))
        rhs.append(np.full(m, hi))
    A_ub = np.vstack(rows)
    b_ub = np.concatenate(rhs)
    A_eq = np.hstack([A, np.zeros((n_eq, 1))])
    res = linprog(
        c,
        A_ub=A_ub,
        b_ub=b_ub,
        A_eq=A_eq,
        b_eq=b,
        bounds=[(None, None)] * (m + 1),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    return res


def _project(lam: np.ndarray, A: np.ndarray, b: np.ndarray) -> np.ndarray:
    # least-norm correction onto the affine set A lam = b
    r = A @ lam - b
    return lam - A.T @ np.linalg.solve(A @ A.T, r)


def decompose_matrix(a, stencil: StencilSet, hat_delta: float) -> np.ndarray:
    """Coefficients lam in [hd, 1/hd]^m with sum_k lam_k l_k l_k^T = a.

    Solved as a max-min-slack LP; ties among optimal slacks are broken by a
    second LP minimizing a strictly decreasing weighted sum of the
    coefficients, which favours small leading entries and is deterministic.
    """
    _check_unit_interval("hat_delta", hat_delta)
    a = _sym(a)
    if a.shape[0] != stencil.dim:
        raise DimensionMismatch("matrix and stencil dimensions differ")
    A, iu = _design(stencil)
    b = a[iu]
    m = stencil.m
    lo, hi = hat_delta, 1.0 / hat_delta
    res = _slack_lp(b, A, lo, hi)
    if res.status != 0 or res.x[-1] < -1e-12:
        raise DecompositionInfeasible(
            f"no coefficients in [{lo:.6g}, {hi:.6g}] reproduce the matrix"
        )
    s_star = res.x[-1]
    lam = res.x[:m]

    if m > A.shape[0]:
        # secondary objective over the optimal face
        w = np.linspace(1.0, 0.5, m)
        A_ub = np.vstack([-np.eye(m), np.eye(m)])
        # relax the optimal slack for the solver, but never below zero when it was positive
        s_fix = max(s_star - 1e-10 * max(1.0, abs(s_star)), min(s_star, 0.0))
        b_ub = np.concatenate([np.full(m, -(lo + s_fix)), np.full(m, hi - s_fix)])
        res2 = linprog(
            w,
            A_ub=A_ub,
            b_ub=b_ub,
            A_eq=A,
            b_eq=b,
            bounds=[(None, None)] * m,
            method="highs",
            options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
        )
        if res2.status == 0:
            lam = res2.x

    lam = _project(lam, A, b)
    if lam.min() < lo - 1e-12 or lam.max() > hi + 1e-12:
        raise DecompositionInfeasible("decomposition left the coefficient window after projection")
    return np.clip(lam, lo, hi)


def reconstruct(lam, stencil: StencilSet) -> np.ndarray:
    L = stencil.vectors.astype(float)
    return np.einsum("k,ki,kj->ij", np.asarray(lam, dtype=float), L, L)


# -- search for hat_delta -----------------------------------------------------


def _van_der_corput(k: int) -> float:
    x, denom = 0.0, 1.0
    while k:
        denom *= 2.0
        k, rem = divmod(k, 2)
        x += rem / denom
    return x


def s_delta_samples(delta: float, d: int, count: int, seed: int = 0) -> list[np.ndarray]:
    """Prefix-stable sequence of matrices in S_delta.

    Starts with the diagonal extreme points, then alternates rotated extreme
    points and random interior draws. The first ``n`` items never depend on
    ``count``, so enlarging the sample only adds matrices.
    """
    lo, hi = delta, 1.0 / delta
    out: list[np.ndarray] = []
    for combo in itertools.product((lo, hi), repeat=d):
        out.append(np.diag(combo))
        if len(out) >= count:
            return out
    rng = np.random.default_rng(seed)
    k = 1
    while len(out) < count:
        if d == 1:
            out.append(np.array([[lo + (hi - lo) * _van_der_corput(k)]]))
        elif d == 2:
            th = np.pi * _van_der_corput(k)
            v = np.array([np.cos(th), np.sin(th)])
            out.append(lo * np.eye(2) + (hi - lo) * np.outer(v, v))
        else:
            q, _ = np.linalg.qr(rng.standard_normal((d, d)))
            ev = rng.choice([lo, hi], size=d)
            out.append((q * ev) @ q.T)
        if len(out) >= count:
            break
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        ev = rng.uniform(lo, hi, size=d)
        out.append((q * ev) @ q.T)
        k += 1
    return out


def _max_hat_delta(a: np.ndarray, stencil: StencilSet) -> float:
    """Largest hd with a decomposition in [hd, 1/hd]^m (0 if none)."""
    A, iu = _design(stencil)
    b = _sym(a)[iu]
    res = _slack_lp(b, A, 0.0, None)
    if res.status != 0 or res.x[-1] <= 0:
        return 0.0
    s = res.x[-1]
    lam = res.x[:-1]
    if lam.max() <= 1.0 / s:
        return float(s)
    # the upper bound binds: the two-sided slack is decreasing in hd, find its root
    def margin(hd):
        r = _slack_lp(b, A, hd, 1.0 / hd)
        return r.x[-1] if r.status == 0 else -1.0

    return float(brentq(margin, min(s, 1.0 / lam.max()), s, xtol=1e-14, rtol=1e-12))


def feasible_hat_delta(
    delta: float,
    d: int,
    samples: int = 256,
    stencil: StencilSet | None = None,
    seed: int = 0,
    iterations: int = 40,
) -> float:
    """Largest hat_delta on a bisection grid in [floor, delta/4] for which
    every sampled matrix of S_{delta/4} decomposes.

    This is a reproducible estimate, not a proof. With ``stencil=None`` the
    narrowest adequate stencil from :func:`adequate_stencil` is used.
    """
    _check_unit_interval("delta", delta)
    if samples < 1:
        raise InvalidParameter("samples must be >= 1")
    if stencil is None:
        stencil = adequate_stencil(delta, d, samples=samples, seed=seed)
    cap = delta / 4.0
    bound = _sample_bound(delta, stencil, samples, seed)
    if bound >= cap * (1 - 1e-9) and _all_feasible(delta, stencil, samples, seed, cap):
        return cap
    if bound < HAT_DELTA_FLOOR:
        raise SearchFailed(
            f"no hat_delta >= {HAT_DELTA_FLOOR} decomposes S_(delta/4) on a stencil with m={stencil.m}"
        )
    lo_, hi_ = HAT_DELTA_FLOOR, cap
    for _ in range(iterations):
        mid = 0.5 * (lo_ + hi_)
        if mid <= bound:
            lo_ = mid
        else:
            hi_ = mid
    # stay inside the sampled bound so the LP solutions keep slack well above solver tolerance
    return lo_ * (1.0 - 1e-3)


@functools.lru_cache(maxsize=128)
def _sample_bound(delta: float, stencil: StencilSet, samples: int, seed: int) -> float:
    best = np.inf
    for a in s_delta_samples(delta / 4.0, stencil.dim, samples, seed):
        best = min(best, _max_hat_delta(a, stencil))
        if best < HAT_DELTA_FLOOR:
            break
    return float(best)


def _all_feasible(delta, stencil, samples, seed, hd) -> bool:
    A, iu = _design(stencil)
    for a in s_delta_samples(delta / 4.0, stencil.dim, samples, seed):
        r = _slack_lp(a[iu], A, hd, 1.0 / hd)
        if r.status != 0 or r.x[-1] < -1e-12:
            return False
    return True


@functools.lru_cache(maxsize=32)
def adequate_stencil(delta: float, d: int, samples: int = 256, seed: int = 0, max_radius: int = 8) -> StencilSet:
    """Narrowest stencil (by max-norm radius) whose decomposition covers S_{delta/4}."""
    for r in range(1, max_radius + 1):
        st = build_stencil(d, r)
        if _sample_bound(delta, st, samples, seed) >= HAT_DELTA_FLOOR:
            return st
    raise SearchFailed(f"no stencil of radius <= {max_radius} decomposes S_(delta/4) for delta={delta}")

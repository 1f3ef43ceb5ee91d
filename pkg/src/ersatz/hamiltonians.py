"""Hamiltonians written on pure second differences, the ersatz cutoff and
sampled checkers for the structural assumptions.

Evaluators are vectorized: ``u0`` has shape (n,), ``grad`` (n, d), ``z``
(n, m), ``x`` (n, d) and ``t`` is a scalar. :meth:`StencilHamiltonian.__call__`
also accepts a single point and then returns a float.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatch, EllipticityViolation, InvalidSpec
from .pucci import EllipticityParams, decompose_matrix, eval_script_p
from .stencil_grid import StencilSet

DD_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class StencilHamiltonian:
    func: Callable
    dim: int
    m: int
    z_window: tuple[float, float]
    l_grad: float = 0.0
    l_u0: float = 0.0
    independent_of_u0: bool = False
    nonincreasing_in_u0: bool = True
    time_dependent: bool = False
    name: str = "custom"

    def evaluate(self, u0, grad, z, t, x) -> np.ndarray:
        u0 = np.asarray(u0, dtype=float).reshape(-1)
        n = u0.shape[0]
        grad = np.asarray(grad, dtype=float).reshape(n, self.dim)
        z = np.asarray(z, dtype=float).reshape(n, self.m)
        x = np.asarray(x, dtype=float).reshape(n, self.dim)
        return np.asarray(self.func(u0, grad, z, float(t), x), dtype=float).reshape(n)

    def __call__(self, u0, grad, z, t=0.0, x=None):
        single = np.ndim(u0) == 0
        if x is None:
            x = np.zeros((np.size(u0), self.dim))
        out = self.evaluate(u0, grad, z, t, x)
        return float(out[0]) if single else out


def _source_fn(source, d):
    if callable(source):
        return source
    value = float(source)
    return lambda t, x: np.full(x.shape[0], value)


def make_linear(
    nu: Sequence[float],
    drift: Sequence[float] | None = None,
    zeroth: float = 0.0,
    source=0.0,
    *,
    hat_delta: float | None = None,
    strict: bool = True,
) -> StencilHamiltonian:
    """H = sum nu_k z_k + <drift, grad> + zeroth * u0 + source(t, x)."""
    nu = np.asarray(nu, dtype=float)
    m = nu.shape[0]
    if drift is None:
        raise InvalidSpec("drift must be given (its length fixes the dimension)")
    drift = np.asarray(drift, dtype=float)
    d = drift.shape[0]
    if (nu < 0).any():
        raise EllipticityViolation("weights must be nonnegative")
    if strict and hat_delta is not None:
        if nu.min() < hat_delta - DD_TOL or nu.max() > 1.0 / hat_delta + DD_TOL:
            raise EllipticityViolation(
                f"weights {nu.tolist()} leave the window [{hat_delta}, {1 / hat_delta}]"
            )
    src = _source_fn(source, d)
    zeroth = float(zeroth)

    def func(u0, grad, z, t, x):
        return z @ nu + grad @ drift + zeroth * u0 + src(t, x)

    return StencilHamiltonian(
        func,
        d,
        m,
        (float(nu.min()), float(nu.max())),
        l_grad=float(np.abs(drift).max(initial=0.0)),
        l_u0=abs(zeroth),
        independent_of_u0=zeroth == 0.0,
        nonincreasing_in_u0=zeroth <= 0.0,
        time_dependent=callable(source),
        name="linear",
    )


@dataclass(frozen=True)
class Row:
    a: np.ndarray
    b: np.ndarray
    c: float = 0.0
    f: float = 0.0

    @classmethod
    def coerce(cls, row) -> "Row":
        if isinstance(row, Row):
            return row
        if isinstance(row, dict):
            return cls(
                np.asarray(row["a"], dtype=float),
                np.asarray(row.get("b", []), dtype=float),
                float(row.get("c", 0.0)),
                float(row.get("f", 0.0)),
            )
        a, b, c, f = row
        return cls(np.asarray(a, dtype=float), np.asarray(b, dtype=float), float(c), float(f))


def _stack_rows(rows) -> tuple[np.ndarray, ...]:
    rows = [Row.coerce(r) for r in rows]
    if not rows:
        raise InvalidSpec("coefficient table is empty")
    m = rows[0].a.shape[0]
    d = max(r.b.shape[0] for r in rows)
    if any(r.a.shape[0] != m for r in rows):
        raise InvalidSpec("rows disagree on the number of second-difference weights")
    if any(r.b.shape[0] not in (0, d) for r in rows):
        raise InvalidSpec("rows disagree on the drift dimension")
    A = np.stack([r.a for r in rows])
    B = np.stack([r.b if r.b.size else np.zeros(d) for r in rows])
    C = np.array([r.c for r in rows])
    F = np.array([r.f for r in rows])
    if (A < 0).any():
        raise InvalidSpec("second-difference weights must be nonnegative")
    return A, B, C, F


def _affine(A, B, C, F, u0, grad, z):
    # (rows, n): reductions over rows then run along contiguous memory
    return A @ z.T + B @ grad.T + C[:, None] * u0 + F[:, None]


def make_bellman(rows, dim: int | None = None) -> StencilHamiltonian:
    """H = max over rows of (sum a_k z_k + <b, grad> + c u0 + f)."""
    A, B, C, F = _stack_rows(rows)
    d = dim if dim is not None else B.shape[1]
    if B.shape[1] == 0:
        B = np.zeros((A.shape[0], d))
    if B.shape[1] != d:
        raise DimensionMismatch("drift length does not match the dimension")

    def func(u0, grad, z, t, x):
        return _affine(A, B, C, F, u0, grad, z).max(axis=0)

    return StencilHamiltonian(
        func,
        d,
        A.shape[1],
        (float(A.min()), float(A.max())),
        l_grad=float(np.abs(B).max(initial=0.0)),
        l_u0=float(np.abs(C).max()),
        independent_of_u0=bool((C == 0).all()),
        nonincreasing_in_u0=bool((C <= 0).all()),
        name="bellman",
    )


def make_isaacs(table, dim: int | None = None) -> StencilHamiltonian:
    """H = max over outer groups of min over the rows inside each group."""
    if not table or any(not group for group in table):
        raise InvalidSpec("Isaacs table and each of its groups must be nonempty")
    sizes = [len(group) for group in table]
    A, B, C, F = _stack_rows([row for group in table for row in group])
    d = dim if dim is not None else B.shape[1]
    if B.shape[1] == 0:
        B = np.zeros((A.shape[0], d))
    bounds = np.concatenate([[0], np.cumsum(sizes)])

    def func(u0, grad, z, t, x):
        vals = _affine(A, B, C, F, u0, grad, z)
        out = vals[bounds[0] : bounds[1]].min(axis=0)
        for lo, hi in zip(bounds[1:-1], bounds[2:]):
            np.maximum(out, vals[lo:hi].min(axis=0), out=out)
        return out

    return StencilHamiltonian(
        func,
        d,
        A.shape[1],
        (float(A.min()), float(A.max())),
        l_grad=float(np.abs(B).max(initial=0.0)),
        l_u0=float(np.abs(C).max()),
        independent_of_u0=bool((C == 0).all()),
        nonincreasing_in_u0=bool((C <= 0).all()),
        name="isaacs",
    )


class _DecompositionCache:
    """Per-matrix decomposition cache; reads are lock-free, inserts serialized."""

    def __init__(self, stencil, hat_delta):
        self.stencil = stencil
        self.hat_delta = hat_delta
        self._store: dict[bytes, np.ndarray] = {}
        self._lock = threading.Lock()

    def get(self, a: np.ndarray) -> np.ndarray:
        key = np.ascontiguousarray(a, dtype=float).tobytes()
        lam = self._store.get(key)
        if lam is None:
            lam = decompose_matrix(a, self.stencil, self.hat_delta)
            with self._lock:
                self._store.setdefault(key, lam)
        return lam

    def __len__(self):
        return len(self._store)


def from_diffusion(
    a_field,
    lower_order,
    stencil: StencilSet,
    hat_delta: float,
    *,
    l_grad: float = 0.0,
    l_u0: float = 0.0,
    time_dependent: bool = True,
) -> StencilHamiltonian:
    """Rewrite tr(a D^2 v) + lower order in second-difference form via the
    rank-one decomposition of ``a``.

    ``a_field`` is either a constant matrix or ``a_field(t, x, u0, grad)``
    returning a d x d matrix at a single point. ``lower_order(u0, grad, t, x)``
    is vectorized (or None for zero).
    """
    d, m = stencil.dim, stencil.m
    cache = _DecompositionCache(stencil, hat_delta)
    low = lower_order if lower_order is not None else (lambda u0, grad, t, x: np.zeros(u0.shape[0]))

    if not callable(a_field):
        lam = cache.get(np.asarray(a_field, dtype=float))

        def func(u0, grad, z, t, x):
            return z @ lam + low(u0, grad, t, x)

    else:

        def func(u0, grad, z, t, x):
            lams = np.stack(
                [cache.get(np.asarray(a_field(t, x[i], u0[i], grad[i]), dtype=float)) for i in range(u0.shape[0])]
            )
            return (z * lams).sum(axis=1) + low(u0, grad, t, x)

    ham = StencilHamiltonian(
        func,
        d,
        m,
        (hat_delta, 1.0 / hat_delta),
        l_grad=l_grad,
        l_u0=l_u0,
        independent_of_u0=l_u0 == 0.0,
        time_dependent=time_dependent,
        name="diffusion",
    )
    object.__setattr__(ham, "cache", cache)
    return ham


# -- the ersatz operator -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ErsatzOperator:
    ham: StencilHamiltonian
    params: EllipticityParams
    stencil: StencilSet

    def __post_init__(self):
        if self.ham.m != self.stencil.m or self.ham.dim != self.stencil.dim:
            raise DimensionMismatch("Hamiltonian and stencil shapes differ")

    @property
    def z_lipschitz(self) -> float:
        # the cutoff inherits slopes up to 2/hd from the box-maximal operator
        return max(self.ham.z_window[1], 2.0 / self.params.hat_delta)

    def evaluate(self, u0, grad, z, t, x) -> tuple[np.ndarray, np.ndarray]:
        """Values and a boolean mask, True where the P - K branch is strictly larger."""
        hv = self.ham.evaluate(u0, grad, z, t, x)
        pv = eval_script_p(np.asarray(z, dtype=float).reshape(hv.shape[0], -1), self.params.hat_delta)
        pv = np.asarray(pv) - self.params.big_k
        use_p = pv > hv
        return np.where(use_p, pv, hv), use_p

    def with_k(self, big_k: float) -> "ErsatzOperator":
        from dataclasses import replace

        return replace(self, params=replace(self.params, big_k=float(big_k)))


def ersatz_eval(op: ErsatzOperator, u0, grad, z, t=0.0, x=None) -> tuple[float, str]:
    if x is None:
        x = np.zeros(op.ham.dim)
    val, use_p = op.evaluate([u0], [grad], [z], t, [x])
    return float(val[0]), "P" if use_p[0] else "H"


# -- sampled assumption checkers ----------------------------------------------


@dataclass(frozen=True)
class SampleSpec:
    n: int = 512
    seed: int = 0
    z_scale: float = 10.0
    u0_scale: float = 5.0
    grad_scale: float = 5.0
    t_range: tuple[float, float] = (0.0, 1.0)
    x_lower: tuple | None = None
    x_upper: tuple | None = None
    eps: float = 1e-6

    def draw(self, d: int, m: int):
        rng = np.random.default_rng(self.seed)
        n = self.n
        lo = np.zeros(d) if self.x_lower is None else np.asarray(self.x_lower, dtype=float)
        hi = np.ones(d) if self.x_upper is None else np.asarray(self.x_upper, dtype=float)
        u0 = rng.uniform(-self.u0_scale, self.u0_scale, n)
        grad = rng.uniform(-self.grad_scale, self.grad_scale, (n, d))
        z = rng.uniform(-self.z_scale, self.z_scale, (n, m))
        t = rng.uniform(*self.t_range, n)
        x = rng.uniform(lo, hi, (n, d))
        # always include the origin of (u0, grad, z)
        u0[0] = 0.0
        grad[0] = 0.0
        z[0] = 0.0
        return u0, grad, z, t, x


@dataclass
class CheckReport:
    name: str
    passed: bool
    checked: int
    violations: list = field(default_factory=list)
    value: float | None = None

    def raise_if_failed(self, exc=EllipticityViolation):
        if not self.passed:
            first = self.violations[0] if self.violations else ""
            raise exc(f"{self.name} failed on {len(self.violations)} samples; first: {first}")


def _by_time(ham, u0, grad, z, t, x):
    # evaluators take one scalar time per call
    if not ham.time_dependent:
        return ham.evaluate(u0, grad, z, float(t[0]), x)
    out = np.empty(u0.shape[0])
    for tv in np.unique(t):
        sel = t == tv
        out[sel] = ham.evaluate(u0[sel], grad[sel], z[sel], tv, x[sel])
    return out


def check_stencil_ellipticity(ham: StencilHamiltonian, hat_delta: float, spec: SampleSpec = SampleSpec()) -> CheckReport:
    """Every divided difference in z_k must lie in [hd, 1/hd] up to 1e-7."""
    u0, grad, z, t, x = spec.draw(ham.dim, ham.m)
    base = _by_time(ham, u0, grad, z, t, x)
    lo, hi = hat_delta - DD_TOL, 1.0 / hat_delta + DD_TOL
    violations = []
    for k in range(ham.m):
        zk = z.copy()
        zk[:, k] += spec.eps
        dd = (_by_time(ham, u0, grad, zk, t, x) - base) / spec.eps
        bad = np.flatnonzero((dd < lo) | (dd > hi))
        violations += [
            {"sample": int(i), "k": k, "slope": float(dd[i]), "z": z[i].tolist()} for i in bad
        ]
    return CheckReport("stencil-ellipticity", not violations, spec.n * ham.m, violations)


def check_monotone_in_u0(ham: StencilHamiltonian, spec: SampleSpec = SampleSpec()) -> CheckReport:
    u0, grad, z, t, x = spec.draw(ham.dim, ham.m)
    rng = np.random.default_rng(spec.seed + 1)
    u1 = u0 + rng.uniform(0.0, spec.u0_scale, u0.shape[0])
    h0 = _by_time(ham, u0, grad, z, t, x)
    h1 = _by_time(ham, u1, grad, z, t, x)
    bad = np.flatnonzero(h1 > h0 + 1e-12 * np.maximum(1.0, np.abs(h0)))
    violations = [{"sample": int(i), "u0": float(u0[i]), "u0_larger": float(u1[i])} for i in bad]
    return CheckReport("monotone-in-u0", not violations, spec.n, violations)


def check_growth_bound(ham: StencilHamiltonian, spec: SampleSpec = SampleSpec(), k0: float = 0.0) -> float:
    """Sampled sup of |H(u0, grad, 0, t, x)| - K0 (|u0| + |grad|): an estimate of H_bar."""
    u0, grad, _, t, x = spec.draw(ham.dim, ham.m)
    z = np.zeros((u0.shape[0], ham.m))
    vals = np.abs(_by_time(ham, u0, grad, z, t, x)) - k0 * (np.abs(u0) + np.linalg.norm(grad, axis=1))
    return float(max(vals.max(), 0.0))

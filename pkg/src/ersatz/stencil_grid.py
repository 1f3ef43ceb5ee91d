"""Stencils, lattice grids and the finite-difference operators on them.

Nodes are identified by integer multi-indices ``i`` with coordinates ``h * i``.
The spacing and domain bounds are converted to exact fractions so that node
membership never depends on floating-point comparisons.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import (
    DimensionMismatch,
    GridTooCoarse,
    InvalidDimension,
    InvalidParameter,
    StencilOutOfDomain,
)


def _exact(value) -> Fraction:
    # repr() round-trips the float, so 0.1 becomes 1/10 rather than its binary expansion
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    return Fraction(repr(float(value)))


@dataclass(frozen=True)
class StencilSet:
    """Integer direction vectors l_1..l_m, one representative per +/- pair."""

    dim: int
    vectors: np.ndarray  # (m, d) int

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != self.dim:
            raise DimensionMismatch(f"stencil vectors must have shape (m, {self.dim})")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def m(self) -> int:
        return self.vectors.shape[0]

    @property
    def radius(self) -> float:
        """Radius of the smallest centred ball containing the symmetrized stencil."""
        return float(np.sqrt((self.vectors.astype(float) ** 2).sum(axis=1).max()))

    def symmetrized(self) -> np.ndarray:
        return np.concatenate([self.vectors, -self.vectors])

    def index_of(self, l) -> tuple[int, int]:
        """Return ``(k, sign)`` with ``l == sign * vectors[k]``."""
        l = np.asarray(l, dtype=np.int64)
        for k, v in enumerate(self.vectors):
            if np.array_equal(v, l):
                return k, 1
            if np.array_equal(v, -l):
                return k, -1
        raise InvalidParameter(f"vector {l.tolist()} is not in the stencil")

    def __eq__(self, other):
        return (
            isinstance(other, StencilSet)
            and self.dim == other.dim
            and np.array_equal(self.vectors, other.vectors)
        )

    def __hash__(self):
        return hash((self.dim, self.vectors.tobytes()))


def _standard_vectors(d: int) -> list[tuple[int, ...]]:
    eye = np.eye(d, dtype=np.int64)
    vecs = [tuple(eye[i]) for i in range(d)]
    plus = [tuple(eye[i] + eye[j]) for i in range(d) for j in range(i + 1, d)]
    minus = [tuple(eye[i] - eye[j]) for i in range(d) for j in range(i + 1, d)]
    return vecs + sorted(plus) + sorted(minus)


def build_standard_stencil(d: int) -> StencilSet:
    if not isinstance(d, (int, np.integer)) or d < 1:
        raise InvalidDimension(f"dimension must be a positive integer, got {d!r}")
    return StencilSet(int(d), np.array(_standard_vectors(int(d)), dtype=np.int64))


def build_stencil(d: int, radius: int = 1) -> StencilSet:
    """Standard stencil extended by every primitive integer direction with
    max-norm at most ``radius``.

    ``radius=1`` returns the standard stencil. Wider stencils are needed for
    the rank-one decomposition to cover ellipticity classes with a large
    condition number.
    """
    base = build_standard_stencil(d)
    if radius < 1:
        raise InvalidParameter("stencil radius must be >= 1")
    if radius == 1:
        return base
    have = {tuple(v) for v in base.vectors}
    extra = []
    for v in itertools.product(range(-radius, radius + 1), repeat=d):
        if not any(v) or math.gcd(*(abs(c) for c in v)) != 1:
            continue
        first = next(c for c in v if c != 0)
        if first < 0 or v in have:
            continue
        extra.append(v)
    extra.sort(key=lambda v: (max(abs(c) for c in v), v))
    vectors = np.array([*map(tuple, base.vectors), *extra], dtype=np.int64)
    return StencilSet(d, vectors)


@dataclass(frozen=True)
class Domain:
    kind: str  # "box" | "ball" | "torus"
    dim: int
    lower: tuple | None = None
    upper: tuple | None = None
    center: tuple | None = None
    radius: float | None = None
    period: tuple | None = None

    @classmethod
    def box(cls, lower, upper) -> "Domain":
        lower, upper = tuple(map(float, lower)), tuple(map(float, upper))
        if len(lower) != len(upper) or not lower:
            raise InvalidDimension("box bounds must have equal nonzero length")
        if any(u <= lo for lo, u in zip(lower, upper)):
            raise InvalidParameter("box extents must be positive")
        return cls("box", len(lower), lower=lower, upper=upper)

    @classmethod
    def ball(cls, center, radius) -> "Domain":
        center = tuple(map(float, center))
        if not center:
            raise InvalidDimension("ball center must be nonempty")
        if radius <= 0:
            raise InvalidParameter("ball radius must be positive")
        return cls("ball", len(center), center=center, radius=float(radius))

    @classmethod
    def torus(cls, period) -> "Domain":
        period = tuple(map(float, period))
        if not period:
            raise InvalidDimension("torus period must be nonempty")
        if any(p <= 0 for p in period):
            raise InvalidParameter("torus periods must be positive")
        return cls("torus", len(period), period=period)

    @property
    def bounded(self) -> bool:
        return self.kind != "torus"

    def distance_to_complement(self, x: np.ndarray) -> np.ndarray:
        """rho(x) = dist(x, R^d minus Omega), clamped at 0 outside the closure."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "box":
            lo, up = np.array(self.lower), np.array(self.upper)
            return np.maximum(np.minimum(x - lo, up - x).min(axis=1), 0.0)
        if self.kind == "ball":
            r = self.radius - np.linalg.norm(x - np.array(self.center), axis=1)
            return np.maximum(r, 0.0)
        return np.full(x.shape[0], np.inf)


@dataclass(frozen=True, eq=False)
class Grid:
    """Nodes of the closed domain on the lattice h Z^d.

    ``plus[k]``/``minus[k]`` hold the node id of ``x +/- h l_k`` (or -1) and
    ``interior`` marks the nodes of Omega^h = {rho > lambda h}.
    """

    domain: Domain
    stencil: StencilSet
    h: float
    h_exact: Fraction
    index: np.ndarray  # (n, d) int
    coords: np.ndarray  # (n, d)
    rho: np.ndarray
    interior: np.ndarray  # (n,) bool
    plus: np.ndarray  # (m, n) int
    minus: np.ndarray  # (m, n) int
    _origin: np.ndarray = field(repr=False)
    _lookup: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.index.shape[0]

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def periodic(self) -> bool:
        return self.domain.kind == "torus"

    @property
    def interior_ids(self) -> np.ndarray:
        return np.flatnonzero(self.interior)

    @property
    def boundary_ids(self) -> np.ndarray:
        return np.flatnonzero(~self.interior)

    def node_id(self, multi_index) -> int:
        """Node id for an integer multi-index, or -1 when it is not a node."""
        return int(self._ids_of(np.atleast_2d(np.asarray(multi_index, dtype=np.int64)))[0])

    def locate(self, x) -> int:
        """Node id of the lattice point at coordinates ``x`` (-1 if absent)."""
        x = np.asarray(x, dtype=float)
        i = np.rint(x / self.h).astype(np.int64)
        if not np.allclose(i * self.h, x, rtol=0, atol=1e-9 * max(1.0, self.h)):
            return -1
        return self.node_id(i)

    def _ids_of(self, idx: np.ndarray) -> np.ndarray:
        shape = np.array(self._lookup.shape)
        rel = idx - self._origin
        if self.periodic:
            rel = np.mod(rel, shape)
            return self._lookup[tuple(rel.T)]
        ok = np.all((rel >= 0) & (rel < shape), axis=1)
        out = np.full(idx.shape[0], -1, dtype=np.int64)
        out[ok] = self._lookup[tuple(rel[ok].T)]
        return out


def build_grid(
    domain: Domain, stencil: StencilSet, h: float, *, allow_empty: bool = False
) -> Grid:
    """Lattice grid on the closure of ``domain`` with spacing ``h``.

    Raises :class:`GridTooCoarse` when Omega^h is empty unless ``allow_empty``.
    """
    if stencil.dim != domain.dim:
        raise DimensionMismatch("stencil and domain dimensions differ")
    if not h > 0:
        raise InvalidParameter("h must be positive")
    d = domain.dim
    hq = _exact(h)

    if domain.kind == "torus":
        counts = []
        for p in domain.period:
            q = _exact(p) / hq
            if q.denominator != 1:
                raise InvalidParameter(f"torus period {p} is not a multiple of h={h}")
            counts.append(int(q))
        origin = np.zeros(d, dtype=np.int64)
        axes = [np.arange(c) for c in counts]
        index = np.array(list(itertools.product(*axes)), dtype=np.int64).reshape(-1, d)
    elif domain.kind == "box":
        lo = [math.ceil(_exact(a) / hq) for a in domain.lower]
        hi = [math.floor(_exact(b) / hq) for b in domain.upper]
        origin = np.array(lo, dtype=np.int64)
        axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        index = np.array(list(itertools.product(*axes)), dtype=np.int64).reshape(-1, d)
    else:
        c = [_exact(v) for v in domain.center]
        r = _exact(domain.radius)
        lo = [math.ceil((ci - r) / hq) for ci in c]
        hi = [math.floor((ci + r) / hq) for ci in c]
        origin = np.array(lo, dtype=np.int64)
        axes = [range(a, b + 1) for a, b in zip(lo, hi)]
        r2 = r * r
        index = np.array(
            [
                i
                for i in itertools.product(*axes)
                if sum((k * hq - ci) ** 2 for k, ci in zip(i, c)) <= r2
            ],
            dtype=np.int64,
        ).reshape(-1, d)

    if domain.kind == "torus":
        shape = counts
    else:
        shape = [len(a) for a in axes]
    lookup = np.full(shape, -1, dtype=np.int64)
    lookup[tuple((index - origin).T)] = np.arange(index.shape[0])

    hf = float(hq)
    coords = index * hf
    rho = domain.distance_to_complement(coords)
    interior = rho > stencil.radius * hf
    if domain.kind == "torus":
        interior[:] = True

    grid = Grid(
        domain=domain,
        stencil=stencil,
        h=hf,
        h_exact=hq,
        index=index,
        coords=coords,
        rho=rho,
        interior=interior,
        plus=np.empty((0, 0), dtype=np.int64),
        minus=np.empty((0, 0), dtype=np.int64),
        _origin=origin,
        _lookup=lookup,
    )
    plus = np.stack([grid._ids_of(index + l) for l in stencil.vectors])
    minus = np.stack([grid._ids_of(index - l) for l in stencil.vectors])
    object.__setattr__(grid, "plus", plus)
    object.__setattr__(grid, "minus", minus)
    for arr in (index, coords, rho, interior, plus, minus, lookup):
        arr.setflags(write=False)

    if not interior.any() and not allow_empty:
        raise GridTooCoarse(f"Omega^h is empty for h={h} (lambda*h={stencil.radius * hf:.4g})")
    return grid


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise DimensionMismatch(f"expected {self.grid.n} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidParameter("grid function values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def sample(cls, grid: Grid, fn) -> "GridFunction":
        return cls(grid, np.asarray(fn(grid.coords), dtype=float))


def _neighbor(grid: Grid, l, x: int, sign: int = 1) -> int:
    k, s = grid.stencil.index_of(l)
    table = grid.plus if s * sign > 0 else grid.minus
    j = int(table[k, x])
    if j < 0:
        raise StencilOutOfDomain(f"node {x} has no neighbor along {np.asarray(l).tolist()}")
    return j


def first_diff(f: GridFunction, l, x: int) -> float:
    """delta_{h,l} f(x) = (f(x + h l) - f(x)) / h."""
    j = _neighbor(f.grid, l, x)
    return (f.values[j] - f.values[x]) / f.grid.h


def second_diff(f: GridFunction, l, x: int) -> float:
    """Delta_{h,l} f(x) = (f(x + h l) - 2 f(x) + f(x - h l)) / h^2."""
    jp = _neighbor(f.grid, l, x, 1)
    jm = _neighbor(f.grid, l, x, -1)
    v = f.values
    return (v[jp] - 2.0 * v[x] + v[jm]) / f.grid.h**2


def diff_vectors(f: GridFunction, stencil: StencilSet, x: int) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences along e_1..e_d and second differences along l_1..l_m."""
    if stencil != f.grid.stencil:
        raise DimensionMismatch("stencil differs from the grid's stencil")
    d = stencil.dim
    eye = np.eye(d, dtype=np.int64)
    grad = np.array([first_diff(f, eye[i], x) for i in range(d)])
    z = np.array([second_diff(f, l, x) for l in stencil.vectors])
    return grad, z


def second_diffs(values: np.ndarray, grid: Grid, ids: np.ndarray | None = None) -> np.ndarray:
    """Vectorized Delta_{h,l_k} over nodes ``ids`` (default: interior), shape (len(ids), m)."""
    ids = grid.interior_ids if ids is None else ids
    p, q = grid.plus[:, ids], grid.minus[:, ids]
    if (p < 0).any() or (q < 0).any():
        raise StencilOutOfDomain("second difference requested at a node without full stencil")
    c = values[ids]
    return ((values[p] - 2.0 * c + values[q]) / grid.h**2).T


def forward_diffs(
    values: np.ndarray, grid: Grid, ids: np.ndarray | None = None, *, all_vectors: bool = False
) -> np.ndarray:
    """Vectorized delta_{h,l} over nodes ``ids``; along e_1..e_d unless ``all_vectors``."""
    ids = grid.interior_ids if ids is None else ids
    rows = grid.plus if all_vectors else grid.plus[: grid.dim]
    p = rows[:, ids]
    if (p < 0).any():
        raise StencilOutOfDomain("first difference requested at a node without full stencil")
    return ((values[p] - values[ids]) / grid.h).T

"""YAML experiment configs: parsing with line-anchored errors, canonical
printing, hashing and translation into solver objects."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, ErsatzError
from .hamiltonians import ErsatzOperator, SampleSpec, from_diffusion, make_bellman, make_isaacs, make_linear
from .pucci import EllipticityParams, adequate_stencil, feasible_hat_delta
from .solver import SolveConfig
from .stencil_grid import Domain, Grid, StencilSet, build_grid, build_stencil

REQUIRED = object()

# section -> key -> default (REQUIRED when mandatory). Keys only valid for some
# variants default to None and are checked by the section validators.
SCHEMA: dict[str, dict[str, object]] = {
    "domain": {"kind": REQUIRED, "lower": None, "upper": None, "center": None, "radius": None, "period": None, "d": None},
    "grid": {"h": None, "h_list": None, "stencil": "standard"},
    "params": {"delta": REQUIRED, "hat_delta": REQUIRED, "K": None, "K_list": None, "K0": 0.0},
    "hamiltonian": {
        "kind": REQUIRED,
        "nu": None,
        "drift": None,
        "zeroth": 0.0,
        "source": 0.0,
        "rows": None,
        "table": None,
        "matrix": None,
    },
    "data": {"terms": REQUIRED, "time_slope": 0.0},
    "time": {"T": REQUIRED, "tau": None, "safety": 0.9},
    "run": {
        "mode": None,
        "store": "full",
        "store_every": 1,
        "seed": 0,
        "alpha": 0.5,
        "pairs": 20000,
        "out": None,
    },
}

TERM_SCHEMA: dict[str, dict[str, object]] = {
    "quadratic": {"kind": REQUIRED, "matrix": REQUIRED, "shift": None, "scale": 1.0},
    "trig": {"kind": REQUIRED, "frequency": REQUIRED, "amplitude": 1.0, "phase": 0.0},
    "constant": {"kind": REQUIRED, "value": REQUIRED},
    "radial_power": {"kind": REQUIRED, "center": REQUIRED, "exponent": REQUIRED, "eps": 0.0, "scale": 1.0},
}
ROW_KEYS = ("a", "b", "c", "f")

# fields that do not change the computed numbers
NON_SEMANTIC = {("run", "out")}


class _Lines:
    """Maps key paths to source line numbers (1-based)."""

    def __init__(self):
        self.lines: dict[tuple, int] = {}

    def at(self, *path) -> int | None:
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path[:-1]
        return self.lines.get((), None)


def _to_python(node, path, lines: _Lines):
    lines.lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = k.value
            if key in out:
                raise ConfigError(f"duplicate key {'.'.join(map(str, path + (key,)))!r}", k.start_mark.line + 1)
            lines.lines[path + (key,)] = k.start_mark.line + 1
            out[key] = _to_python(v, path + (key,), lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v, path + (i,), lines) for i, v in enumerate(node.value)]
    return yaml.SafeLoader.construct_object(yaml.SafeLoader(""), node, deep=True)


class _Checker:
    def __init__(self, lines: _Lines):
        self.lines = lines

    def fail(self, msg, *path):
        raise ConfigError(msg, self.lines.at(*path))

    def mapping(self, obj, schema, path):
        if not isinstance(obj, dict):
            self.fail(f"{'.'.join(map(str, path)) or 'config'} must be a mapping", *path)
        for key in obj:
            if key not in schema:
                self.fail(f"unknown key {'.'.join(map(str, path + (key,)))!r}", *path, key)
        out = {}
        for key, default in schema.items():
            if key in obj and obj[key] is not None:
                out[key] = obj[key]
            elif default is REQUIRED:
                self.fail(f"missing required key {'.'.join(map(str, path + (key,)))!r}", *path)
            else:
                out[key] = copy.deepcopy(default)
        return out

    def number(self, value, *path, positive=False, integer=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(f"{'.'.join(map(str, path))} must be a number", *path)
        if integer:
            if int(value) != value:
                self.fail(f"{'.'.join(map(str, path))} must be an integer", *path)
            value = int(value)
        else:
            value = float(value)
        if positive and not value > 0:
            self.fail(f"{'.'.join(map(str, path))} must be positive", *path)
        return value

    def vector(self, value, *path, length=None):
        if not isinstance(value, list) or not value:
            self.fail(f"{'.'.join(map(str, path))} must be a nonempty list of numbers", *path)
        out = [self.number(v, *path, i) for i, v in enumerate(value)]
        if length is not None and len(out) != length:
            self.fail(f"{'.'.join(map(str, path))} must have length {length}", *path)
        return out

    def matrix(self, value, d, *path):
        if not isinstance(value, list) or len(value) != d:
            self.fail(f"{'.'.join(map(str, path))} must be a {d}x{d} matrix", *path)
        return [self.vector(r, *path, i, length=d) for i, r in enumerate(value)]

    def choice(self, value, options, *path):
        if value not in options:
            self.fail(f"{'.'.join(map(str, path))} must be one of {', '.join(map(str, options))}", *path)
        return value


def _check(raw: dict, lines: _Lines) -> dict:
    ck = _Checker(lines)
    top = ck.mapping(raw, {k: REQUIRED if k != "run" else {} for k in SCHEMA}, ())
    cfg = {}

    dom = ck.mapping(top["domain"], SCHEMA["domain"], ("domain",))
    kind = ck.choice(dom["kind"], ("box", "ball", "torus"), "domain", "kind")
    needed = {"box": ("lower", "upper"), "ball": ("center", "radius"), "torus": ("period",)}[kind]
    for key in ("lower", "upper", "center", "radius", "period"):
        if key in needed and dom[key] is None:
            ck.fail(f"domain.{key} is required for a {kind}", "domain")
        if key not in needed and dom[key] is not None:
            ck.fail(f"domain.{key} does not apply to a {kind}", "domain", key)
    for key in ("lower", "upper", "center", "period"):
        if dom[key] is not None:
            dom[key] = ck.vector(dom[key], "domain", key)
    if dom["radius"] is not None:
        dom["radius"] = ck.number(dom["radius"], "domain", "radius", positive=True)
    d = len(dom[needed[0]])
    if dom["d"] is not None and ck.number(dom["d"], "domain", "d", integer=True) != d:
        ck.fail(f"domain.d={dom['d']} disagrees with the bounds (dimension {d})", "domain", "d")
    dom["d"] = d
    if kind == "box" and len(dom["upper"]) != d:
        ck.fail("domain.lower and domain.upper differ in length", "domain", "upper")
    cfg["domain"] = dom

    grid = ck.mapping(top["grid"], SCHEMA["grid"], ("grid",))
    if (grid["h"] is None) == (grid["h_list"] is None):
        ck.fail("give exactly one of grid.h and grid.h_list", "grid")
    if grid["h"] is not None:
        grid["h"] = ck.number(grid["h"], "grid", "h", positive=True)
    else:
        grid["h_list"] = ck.vector(grid["h_list"], "grid", "h_list")
    st = grid["stencil"]
    if st not in ("standard", "auto"):
        st = ck.number(st, "grid", "stencil", integer=True, positive=True)
    grid["stencil"] = st
    cfg["grid"] = grid

    par = ck.mapping(top["params"], SCHEMA["params"], ("params",))
    par["delta"] = ck.number(par["delta"], "params", "delta", positive=True)
    if par["hat_delta"] != "auto":
        par["hat_delta"] = ck.number(par["hat_delta"], "params", "hat_delta", positive=True)
    if (par["K"] is None) == (par["K_list"] is None):
        ck.fail("give exactly one of params.K and params.K_list", "params")
    if par["K"] is not None:
        par["K"] = ck.number(par["K"], "params", "K", positive=True)
    else:
        par["K_list"] = ck.vector(par["K_list"], "params", "K_list")
    par["K0"] = ck.number(par["K0"], "params", "K0")
    cfg["params"] = par

    ham = ck.mapping(top["hamiltonian"], SCHEMA["hamiltonian"], ("hamiltonian",))
    hk = ck.choice(ham["kind"], ("linear", "bellman", "isaacs", "diffusion"), "hamiltonian", "kind")
    allowed = {
        "linear": {"nu", "drift", "zeroth", "source"},
        "diffusion": {"matrix", "drift", "zeroth", "source"},
        "bellman": {"rows"},
        "isaacs": {"table"},
    }[hk]
    for key in ("nu", "drift", "rows", "table", "matrix"):
        if key in allowed and key != "drift" and ham[key] is None:
            ck.fail(f"hamiltonian.{key} is required for kind {hk}", "hamiltonian")
        if key not in allowed and ham[key] is not None:
            ck.fail(f"hamiltonian.{key} does not apply to kind {hk}", "hamiltonian", key)
    if hk in ("bellman", "isaacs"):
        for key, default in (("zeroth", 0.0), ("source", 0.0)):
            if ham[key] != default:
                ck.fail(f"hamiltonian.{key} does not apply to kind {hk}", "hamiltonian", key)
    if hk in ("linear", "diffusion"):
        ham["drift"] = ck.vector(ham["drift"], "hamiltonian", "drift", length=d) if ham["drift"] else [0.0] * d
        ham["zeroth"] = ck.number(ham["zeroth"], "hamiltonian", "zeroth")
        ham["source"] = ck.number(ham["source"], "hamiltonian", "source")
    if hk == "linear":
        ham["nu"] = ck.vector(ham["nu"], "hamiltonian", "nu")
    if hk == "diffusion":
        ham["matrix"] = ck.matrix(ham["matrix"], d, "hamiltonian", "matrix")

    def row(r, *path):
        r = ck.mapping(r, {k: REQUIRED for k in ROW_KEYS}, path)
        return {
            "a": ck.vector(r["a"], *path, "a"),
            "b": ck.vector(r["b"], *path, "b", length=d),
            "c": ck.number(r["c"], *path, "c"),
            "f": ck.number(r["f"], *path, "f"),
        }

    if hk == "bellman":
        if not isinstance(ham["rows"], list) or not ham["rows"]:
            ck.fail("hamiltonian.rows must be a nonempty list", "hamiltonian", "rows")
        ham["rows"] = [row(r, "hamiltonian", "rows", i) for i, r in enumerate(ham["rows"])]
    if hk == "isaacs":
        tab = ham["table"]
        if not isinstance(tab, list) or not tab or not all(isinstance(g, list) and g for g in tab):
            ck.fail("hamiltonian.table must be a nonempty list of nonempty row lists", "hamiltonian", "table")
        ham["table"] = [
            [row(r, "hamiltonian", "table", i, j) for j, r in enumerate(grp)] for i, grp in enumerate(tab)
        ]
    cfg["hamiltonian"] = {k: v for k, v in ham.items() if k == "kind" or k in allowed}

    data = ck.mapping(top["data"], SCHEMA["data"], ("data",))
    if not isinstance(data["terms"], list) or not data["terms"]:
        ck.fail("data.terms must be a nonempty list", "data", "terms")
    terms = []
    for i, term in enumerate(data["terms"]):
        path = ("data", "terms", i)
        if not isinstance(term, dict) or "kind" not in term:
            ck.fail("each data term needs a kind", *path)
        tk = ck.choice(term["kind"], tuple(TERM_SCHEMA), *path, "kind")
        term = ck.mapping(term, TERM_SCHEMA[tk], path)
        if tk == "quadratic":
            term["matrix"] = ck.matrix(term["matrix"], d, *path, "matrix")
            term["shift"] = ck.vector(term["shift"], *path, "shift", length=d) if term["shift"] else [0.0] * d
            term["scale"] = ck.number(term["scale"], *path, "scale")
        elif tk == "trig":
            term["frequency"] = ck.vector(term["frequency"], *path, "frequency", length=d)
            term["amplitude"] = ck.number(term["amplitude"], *path, "amplitude")
            term["phase"] = ck.number(term["phase"], *path, "phase")
        elif tk == "constant":
            term["value"] = ck.number(term["value"], *path, "value")
        else:
            term["center"] = ck.vector(term["center"], *path, "center", length=d)
            term["exponent"] = ck.number(term["exponent"], *path, "exponent")
            term["eps"] = ck.number(term["eps"], *path, "eps")
            term["scale"] = ck.number(term["scale"], *path, "scale")
            if term["eps"] <= 0 and term["exponent"] < 2:
                ck.fail("radial_power needs eps > 0 unless exponent >= 2", *path, "eps")
        terms.append(term)
    data["terms"] = terms
    data["time_slope"] = ck.number(data["time_slope"], "data", "time_slope")
    cfg["data"] = data

    tm = ck.mapping(top["time"], SCHEMA["time"], ("time",))
    tm["T"] = ck.number(tm["T"], "time", "T", positive=True)
    if tm["tau"] is not None:
        tm["tau"] = ck.number(tm["tau"], "time", "tau", positive=True)
    tm["safety"] = ck.number(tm["safety"], "time", "safety", positive=True)
    cfg["time"] = tm

    run = ck.mapping(top["run"] if top["run"] is not None else {}, SCHEMA["run"], ("run",))
    if run["mode"] is not None:
        ck.choice(run["mode"], ("cylinder", "whole-space"), "run", "mode")
    ck.choice(run["store"], ("full", "final"), "run", "store")
    run["store_every"] = ck.number(run["store_every"], "run", "store_every", integer=True, positive=True)
    run["seed"] = ck.number(run["seed"], "run", "seed", integer=True)
    if not 0 <= run["seed"] < 2**64:
        ck.fail("run.seed must fit in an unsigned 64-bit integer", "run", "seed")
    run["alpha"] = ck.number(run["alpha"], "run", "alpha", positive=True)
    run["pairs"] = ck.number(run["pairs"], "run", "pairs", integer=True, positive=True)
    if run["out"] is not None and not isinstance(run["out"], str):
        ck.fail("run.out must be a path string", "run", "out")
    cfg["run"] = run
    return cfg


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """A validated, canonicalized experiment description."""

    data: dict

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.data == other.data

    def __getitem__(self, section):
        return self.data[section]

    @property
    def dim(self) -> int:
        return self.data["domain"]["d"]

    @property
    def seed(self) -> int:
        return self.data["run"]["seed"]

    def dump(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=False, default_flow_style=None, width=100)

    def semantic(self) -> dict:
        out = copy.deepcopy(self.data)
        for sec, key in NON_SEMANTIC:
            out[sec].pop(key, None)
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.semantic(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_updates(self, **sections) -> "ExperimentConfig":
        """Override keys, e.g. ``with_updates(run={'seed': 3})``; the result is revalidated."""
        raw = copy.deepcopy(self.data)
        for sec, upd in sections.items():
            raw.setdefault(sec, {}).update(upd)
        return parse_config(yaml.safe_dump(raw, sort_keys=False))

    # -- translation -------------------------------------------------------

    def h_values(self) -> list[float]:
        g = self.data["grid"]
        return [g["h"]] if g["h"] is not None else list(g["h_list"])

    def k_values(self) -> list[float]:
        p = self.data["params"]
        return [p["K"]] if p["K"] is not None else list(p["K_list"])

    def domain(self) -> Domain:
        dom = self.data["domain"]
        if dom["kind"] == "box":
            return Domain.box(dom["lower"], dom["upper"])
        if dom["kind"] == "ball":
            return Domain.ball(dom["center"], dom["radius"])
        return Domain.torus(dom["period"])

    def stencil(self) -> StencilSet:
        st = self.data["grid"]["stencil"]
        if st == "standard":
            return build_stencil(self.dim, 1)
        if st == "auto":
            return adequate_stencil(self.data["params"]["delta"], self.dim)
        return build_stencil(self.dim, st)

    def hat_delta(self, stencil: StencilSet | None = None) -> float:
        p = self.data["params"]
        if p["hat_delta"] == "auto":
            return feasible_hat_delta(p["delta"], self.dim, stencil=stencil or self.stencil())
        return p["hat_delta"]

    def hamiltonian(self, stencil: StencilSet, hat_delta: float):
        ham = self.data["hamiltonian"]
        kind = ham["kind"]
        if kind == "linear":
            if len(ham["nu"]) != stencil.m:
                raise ConfigError(f"hamiltonian.nu needs {stencil.m} weights for this stencil")
            return make_linear(ham["nu"], ham["drift"], ham["zeroth"], ham["source"], hat_delta=hat_delta, strict=False)
        if kind == "bellman":
            return make_bellman(ham["rows"], self.dim)
        if kind == "isaacs":
            return make_isaacs(ham["table"], self.dim)
        drift = np.asarray(ham["drift"])
        zeroth, source = ham["zeroth"], ham["source"]

        def lower(u0, grad, t, x):
            return grad @ drift + zeroth * u0 + source

        return from_diffusion(
            ham["matrix"],
            lower,
            stencil,
            hat_delta,
            l_grad=float(np.abs(drift).max()),
            l_u0=abs(zeroth),
            time_dependent=False,
        )

    def terminal_data(self):
        """g(t, x) built from the catalog terms plus time_slope * (T - t)."""
        return make_data(self.data["data"], self.data["time"]["T"])

    def solve_config(self, *, h: float | None = None, big_k: float | None = None, grid: Grid | None = None) -> SolveConfig:
        stencil = grid.stencil if grid is not None else self.stencil()
        hd = self.hat_delta(stencil)
        p = self.data["params"]
        params = EllipticityParams(p["delta"], hd, big_k if big_k is not None else self.k_values()[0], k0=p["K0"])
        op = ErsatzOperator(self.hamiltonian(stencil, hd), params, stencil)
        if grid is None:
            grid = build_grid(self.domain(), stencil, h if h is not None else self.h_values()[0])
        tm, run = self.data["time"], self.data["run"]
        c = grid.coords
        spec = SampleSpec(
            n=256, seed=run["seed"], t_range=(0.0, tm["T"]), x_lower=tuple(c.min(axis=0)), x_upper=tuple(c.max(axis=0))
        )
        return SolveConfig(
            grid=grid,
            op=op,
            g=self.terminal_data(),
            T=tm["T"],
            tau=tm["tau"],
            safety=tm["safety"],
            mode=run["mode"],
            store=run["store"],
            store_every=run["store_every"],
            sample_spec=spec,
        )


def make_data(data: dict, T: float):
    terms = [dict(t) for t in data["terms"]]
    slope = float(data["time_slope"])

    def g(t, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros(x.shape[0])
        for term in terms:
            kind = term["kind"]
            if kind == "quadratic":
                y = x - np.asarray(term["shift"])
                out += term["scale"] * np.einsum("ni,ij,nj->n", y, np.asarray(term["matrix"]), y)
            elif kind == "trig":
                out += term["amplitude"] * np.sin(2 * np.pi * (x @ np.asarray(term["frequency"])) + term["phase"])
            elif kind == "constant":
                out += term["value"]
            else:
                r2 = ((x - np.asarray(term["center"])) ** 2).sum(axis=1)
                out += term["scale"] * (term["eps"] ** 2 + r2) ** (term["exponent"] / 2)
        return out + slope * (T - t)

    return g


def parse_config(text: str) -> ExperimentConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigError(f"malformed YAML: {exc.problem}", line) from None
    if node is None:
        raise ConfigError("empty config", 1)
    lines = _Lines()
    raw = _to_python(node, (), lines)
    return ExperimentConfig(_check(raw, lines))


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)


__all__ = ["ExperimentConfig", "parse_config", "load_config", "make_data", "ErsatzError"]

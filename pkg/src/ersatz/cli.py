"""Command-line front end: ersatz solve | sweep-k | refine-h | verify | decompose."""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import replace

import numpy as np

from .config import ExperimentConfig, load_config
from .errors import ErsatzError, InvalidParameter, VerificationFailed
from .estimates import (
    fuzz_interpolation,
    fuzz_max_principle,
    measure,
    refinement_boundedness,
)
from .hamiltonians import SampleSpec, check_growth_bound, check_monotone_in_u0, check_stencil_ellipticity
from .io import OutputBundle, csv_text, report_csv, report_text, slice_csv
from .pucci import check_s_delta, decompose_matrix, reconstruct
from .solver import h_refine, k_sweep, picard_check, residual_sup, solve, sup_norm_bound
from .stencil_grid import Domain, build_grid, build_stencil

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def thread_count(arg: int | None) -> int:
    if arg is not None:
        n = arg
    else:
        env = os.environ.get("ERSATZ_THREADS", "").strip()
        try:
            n = int(env) if env else 1
        except ValueError:
            raise InvalidParameter(f"ERSATZ_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise InvalidParameter("thread count must be >= 1")
    return n


@contextmanager
def executor_for(threads: int):
    if threads <= 1:
        yield None
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            yield pool


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_updates(run={"seed": args.seed})
    return cfg


def _out_dir(args, cfg: ExperimentConfig, command: str) -> str:
    return args.out or cfg["run"]["out"] or os.path.join("ersatz-out", command)


def _estimate_items(report) -> list:
    return [(f"estimate.{k}", v) for k, v in report.items()]


def cmd_solve(args) -> int:
    cfg = _load(args)
    bundle = OutputBundle(_out_dir(args, cfg, "solve"), "solve", cfg, cfg.seed)
    t0 = time.perf_counter()
    sc = cfg.solve_config()
    traj = solve(sc)
    bundle.timings["solve_s"] = time.perf_counter() - t0
    run = cfg["run"]
    rep = measure(traj, sc, alpha=run["alpha"], pairs=run["pairs"], seed=cfg.seed)
    sup_v, bound = sup_norm_bound(traj, sc)
    items = [
        ("h", sc.grid.h),
        ("K", sc.op.params.big_k),
        ("hat_delta", sc.op.params.hat_delta),
        ("T", sc.T),
        ("steps", traj.steps),
        ("tau", sc.time_step()),
        ("nodes", sc.grid.n),
        ("interior_nodes", traj.n_interior),
        ("sup_abs_v", sup_v),
        ("sup_norm_bound", bound),
        *_estimate_items(rep),
    ]
    bundle.add("slice.csv", slice_csv(traj))
    bundle.add("report.txt", report_text(items))
    bundle.add("report.csv", report_csv(items))
    bundle.summary = {"steps": traj.steps, "active_set_fraction": traj.active_set_fraction}
    bundle.timings["total_s"] = time.perf_counter() - t0
    print(report_text(items), end="")
    print(f"wrote {bundle.write()}")
    return EXIT_OK


def cmd_sweep_k(args) -> int:
    cfg = _load(args)
    bundle = OutputBundle(_out_dir(args, cfg, "sweep-k"), "sweep-k", cfg, cfg.seed)
    t0 = time.perf_counter()
    sc = cfg.solve_config()
    with executor_for(thread_count(args.threads)) as pool:
        entries = k_sweep(sc, cfg.k_values(), executor=pool)
    bundle.timings["sweep_s"] = time.perf_counter() - t0
    rows = [(e.big_k, e.active_set_fraction, e.positive_increment, e.cauchy_increment) for e in entries]
    header = ["K", "active_set_fraction", "positive_increment", "cauchy_increment"]
    bundle.add("convergence.csv", csv_text(header, rows))
    bundle.add("slice.csv", slice_csv(entries[-1].trajectory, [0]))
    items = [("K_values", len(entries)), ("final_cauchy_increment", entries[-1].cauchy_increment)]
    items += [(f"active_set_fraction.K={e.big_k:g}", e.active_set_fraction) for e in entries]
    bundle.add("report.txt", report_text(items))
    print(csv_text(header, rows), end="")
    print(f"wrote {bundle.write()}")
    return EXIT_OK


def cmd_refine_h(args) -> int:
    cfg = _load(args)
    bundle = OutputBundle(_out_dir(args, cfg, "refine-h"), "refine-h", cfg, cfg.seed)
    t0 = time.perf_counter()
    sc = cfg.solve_config(h=cfg.h_values()[0])
    run = cfg["run"]
    with executor_for(thread_count(args.threads)) as pool:
        rows, trajs = h_refine(sc, cfg.h_values(), executor=pool, store=run["store"], store_every=run["store_every"])
    bundle.timings["refine_s"] = time.perf_counter() - t0
    reports = [
        measure(tr, replace(sc, grid=tr.grid), alpha=run["alpha"], pairs=run["pairs"], seed=cfg.seed) for tr in trajs
    ]
    fields = [k for k, _ in reports[0].items()]
    header = ["h", "sup_diff_next", "observed_order", *fields]
    table = [
        (r.h, r.sup_diff_next, r.observed_order, *[getattr(rep, f) for f in fields]) for r, rep in zip(rows, reports)
    ]
    bundle.add("convergence.csv", csv_text(header, table))
    items = [("levels", len(rows))]
    if len(reports) >= 3:
        flags = refinement_boundedness(reports)
        bundle.add(
            "boundedness.csv",
            csv_text(
                ["field", "flagged", *[f"ratio{i + 1}" for i in range(len(reports) - 1)]],
                [(b.field, b.flagged, *b.ratios) for b in flags],
            ),
        )
        items += [(f"flag.{b.field}", b.flagged) for b in flags]
    bundle.add("slice.csv", slice_csv(trajs[-1], [0]))
    bundle.add("report.txt", report_text(items))
    print(csv_text(header, table), end="")
    print(report_text(items), end="")
    print(f"wrote {bundle.write()}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _load(args)
    bundle = OutputBundle(_out_dir(args, cfg, "verify"), "verify", cfg, cfg.seed)
    t0 = time.perf_counter()
    sc = cfg.solve_config()
    ham, hd = sc.op.ham, sc.op.params.hat_delta
    spec = sc.sample_spec or SampleSpec(seed=cfg.seed)
    ell = check_stencil_ellipticity(ham, hd, spec)
    ell.raise_if_failed()
    mono = check_monotone_in_u0(ham, spec)
    growth = check_growth_bound(ham, spec, sc.op.params.k0)

    traj = solve(replace(sc, store="full", store_every=1))
    run = cfg["run"]
    rep = measure(traj, sc, alpha=run["alpha"], pairs=run["pairs"], seed=cfg.seed)
    res = residual_sup(traj, sc)
    pic = picard_check(traj, sc)
    sup_v, bound = sup_norm_bound(traj, sc)

    fuzz_grid = build_grid(Domain.box([0.0] * cfg.dim, [1.0] * cfg.dim), build_stencil(cfg.dim), 0.125)
    interp_ok, interp_fail = fuzz_interpolation(2000, seed=cfg.seed)
    mp_ok, mp_fail = fuzz_max_principle(fuzz_grid, 10, seed=cfg.seed)
    bundle.timings["verify_s"] = time.perf_counter() - t0

    checks = [
        ("check.stencil_ellipticity", ell.passed),
        ("check.monotone_in_u0", mono.passed),
        ("check.sup_norm_bound", sup_v <= bound),
        ("check.interpolation_fuzz", not interp_fail),
        ("check.max_principle_fuzz", not mp_fail),
    ]
    items = [
        *checks,
        ("growth_sup_minus_k0", growth),
        ("residual_sup", res),
        ("picard_discrepancy", pic),
        ("sup_abs_v", sup_v),
        ("sup_norm_bound", bound),
        ("interpolation_passed", interp_ok),
        ("max_principle_passed", mp_ok),
        *_estimate_items(rep),
    ]
    bundle.add("report.txt", report_text(items))
    bundle.add("report.csv", report_csv(items))
    print(report_text(items), end="")
    print(f"wrote {bundle.write()}")
    failed = [name for name, ok in checks if not ok and name != "check.monotone_in_u0"]
    if failed:
        raise VerificationFailed("failed: " + ", ".join(failed))
    return EXIT_OK


def parse_matrix(text: str) -> np.ndarray:
    """``"1,0;0,1"`` or a JSON nested list."""
    text = text.strip()
    try:
        if text.startswith("["):
            rows = json.loads(text)
        else:
            rows = [[float(v) for v in r.split(",")] for r in text.split(";")]
        a = np.asarray(rows, dtype=float)
    except (ValueError, json.JSONDecodeError):
        raise InvalidParameter(f"cannot parse matrix {text!r}") from None
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidParameter("matrix must be square")
    if not np.allclose(a, a.T, atol=1e-12):
        raise InvalidParameter("matrix must be symmetric")
    return a


def cmd_decompose(args) -> int:
    a = parse_matrix(args.matrix)
    stencil = build_stencil(a.shape[0], args.stencil_radius)
    lam = decompose_matrix(a, stencil, args.hat_delta)
    resid = float(np.abs(reconstruct(lam, stencil) - a).max())
    for l, v in zip(stencil.vectors, lam):
        print(f"l=({','.join(str(int(c)) for c in l)})  lambda={v:.17g}")
    print(f"residual = {resid:.3e}")
    if args.delta is not None:
        print(f"in_S_delta = {check_s_delta(a, args.delta)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ersatz", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="YAML experiment config")
        sp.add_argument("--out", help="output directory (default: run.out or ersatz-out/<command>)")
        sp.add_argument("--threads", type=int, help="worker threads for independent solves (env ERSATZ_THREADS)")
        sp.add_argument("--seed", type=int, help="override run.seed")

    for name, fn, help_ in (
        ("solve", cmd_solve, "solve one config"),
        ("sweep-k", cmd_sweep_k, "solve for every K in params.K_list"),
        ("refine-h", cmd_refine_h, "solve for every h in grid.h_list"),
        ("verify", cmd_verify, "assumption checks, estimates and property suites"),
    ):
        sp = sub.add_parser(name, help=help_)
        common(sp)
        sp.set_defaults(func=fn)

    sp = sub.add_parser("decompose", help="rank-one decomposition of a symmetric matrix")
    sp.add_argument("--matrix", required=True, help='rows separated by ";", e.g. "1,0;0,1"')
    sp.add_argument("--hat-delta", type=float, required=True)
    sp.add_argument("--delta", type=float, help="also report membership in S_delta")
    sp.add_argument("--stencil-radius", type=int, default=1)
    sp.add_argument("--seed", type=int, help="accepted for uniformity; the LP is deterministic")
    sp.set_defaults(func=cmd_decompose)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ErsatzError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: [io-error] {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end: construction runs, verification, measure scans.

Configuration lives in one INI-style file ([model] and [run] sections) with
flag overrides taking precedence; outputs are deterministic CSV/JSON keyed by
the config and seed.  Exit codes: 0 ok, 1 verification failure, 2 invalid
input or precondition, 3 non-convergence.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import bruno as bruno_mod
from . import diophantine as dioph_mod
from .kernel import kernel_v, triple_sine_integral, triple_sine_quadrature
from .series import (
    CountertermTable,
    NonConvergenceError,
    SignExcludedError,
    amplitude_cubic_coefficient,
    compute_coeffs,
    decay_check,
    lambda_modes,
    order_consistency,
    residual_norm,
    save_coeffs_csv,
    save_counterterms_csv,
    save_nu_csv,
    solve_nu,
    summary_json,
)
from .spectrum import ModelParams, NuTable, chi_h
from .trees import counterterm, dump_tree, enumerate_r_trees, enumerate_trees, sum_trees

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_INVALID = 2
EXIT_NOCONV = 3

_MODEL_KEYS = {f.name for f in fields(ModelParams)}
_RUN_KEYS = {"eps", "eps_lo", "eps_hi", "eps_count", "orders", "grid", "seed",
             "outdir", "force", "samples", "window", "jobs", "kernel_sign_flip"}


class ConfigError(ValueError):
    pass


def load_config(path: str | None, overrides: dict) -> tuple[ModelParams, dict]:
    model: dict = {}
    run: dict = {"orders": 2, "grid": 1000, "seed": 0, "outdir": "out",
                 "jobs": 1, "force": False, "kernel_sign_flip": False}
    if path:
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        cp.optionxform = str   # keys are case-sensitive (Mmax vs mmax)
        if not cp.read(path):
            raise ConfigError(f"config file {path!r} not readable")
        for sec in cp.sections():
            if sec not in ("model", "run"):
                raise ConfigError(f"unknown config section [{sec}]")
        for key, val in cp.items("model") if cp.has_section("model") else []:
            if key not in _MODEL_KEYS:
                raise ConfigError(f"unknown model key {key!r}")
            model[key] = val
        for key, val in cp.items("run") if cp.has_section("run") else []:
            if key not in _RUN_KEYS:
                raise ConfigError(f"unknown run key {key!r}")
            run[key] = val
    for key, val in overrides.items():
        if val is None:
            continue
        if key in _MODEL_KEYS:
            model[key] = val
        else:
            run[key] = val
    typed = {}
    for key, val in model.items():
        if key in ("Kmax", "Mmax", "Nmax", "h_max", "omega_branch"):
            typed[key] = int(val)
        elif key == "extended_precision":
            typed[key] = str(val).lower() in ("1", "true", "yes")
        else:
            typed[key] = float(val)
    try:
        params = ModelParams(**typed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    for key in ("orders", "grid", "seed", "eps_count", "samples", "jobs"):
        if key in run:
            run[key] = int(run[key])
    for key in ("eps", "eps_lo", "eps_hi", "window"):
        if key in run:
            run[key] = float(run[key])
    for key in ("force", "kernel_sign_flip"):
        run[key] = str(run.get(key, "0")).lower() in ("1", "true", "yes")
    run["outdir"] = os.environ.get("LINDBEAM_OUTDIR", run.get("outdir", "out"))
    return params, run


def _outdir(run: dict) -> Path:
    p = Path(run["outdir"])
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_coeffs(params: ModelParams, run: dict) -> int:
    out = _outdir(run)
    eps = run.get("eps", params.eps0 / 2)
    K = run["orders"]
    try:
        if params.a == 0.0 and params.b == 0.0:
            nu = NuTable(eps0=params.eps0, nu_cap=params.nu_cap)
            lt, q = CountertermTable(), 0.0
            A = 0.0
        else:
            nu, info = solve_nu(params, eps, K)
            lt, q = info["counterterms"], info["q"]
            A = amplitude_cubic_coefficient(params, eps, params.Mmax, nu)
    except SignExcludedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    table = compute_coeffs(params, eps, nu, lt, K, params.Mmax, q=q)
    save_coeffs_csv(table, out / "coeffs.csv")
    save_counterterms_csv(lt, out / "counterterms.csv")
    save_nu_csv(nu, out / "nu.csv")
    (out / "summary.json").write_text(summary_json(table, params, eps, A=A))
    print(f"wrote coeffs/counterterms/nu/summary to {out}")
    return EXIT_OK


def cmd_counterterms(params: ModelParams, run: dict) -> int:
    out = _outdir(run)
    eps = run.get("eps", params.eps0 / 2)
    K = run["orders"]
    try:
        nu, info = solve_nu(params, eps, K)
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    lt = CountertermTable()
    q = info["q"]
    for k in range(2, K + 1):
        for (n, m) in lambda_modes(params):
            for h in (-1, 0, 1):
                val = counterterm(k, n, m, h, params, eps, nu, q,
                                  lt, min(params.Mmax, 33))
                if val != 0.0:
                    lt.set(k, n, m, h, val)
    save_counterterms_csv(lt, out / "counterterms.csv")
    print(f"wrote scale-resolved counterterms to {out}")
    return EXIT_OK


def cmd_trees(params: ModelParams, run: dict, order: int, n: int, m: int,
              special: bool) -> int:
    try:
        if special:
            ts = enumerate_r_trees(order, n, m, params, min(params.Mmax, 15))
        else:
            ts = enumerate_trees(order, n, m, params, min(params.Mmax, 15))
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"# {len(ts)} skeletons of order {order} at mode ({n},{m})")
    for t in ts:
        print(f"# multiplicity {t.mult}")
        print(dump_tree(t))
    return EXIT_OK


def cmd_verify(params: ModelParams, run: dict) -> int:
    """Property suite: kernel oracle, cutoff partition, expansion equivalences,
    counting inequalities.  Exit 1 on the first failing check."""
    out = _outdir(run)
    K_cap = min(run["orders"], 4)
    report: dict = {"schema_version": 1, "checks": {}, "skipped": []}
    ok_all = True

    def record(name, ok, detail):
        nonlocal ok_all
        report["checks"][name] = {"ok": bool(ok), "detail": detail}
        ok_all = ok_all and ok
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")

    flip = -1.0 if run.get("kernel_sign_flip") else 1.0

    # kernel oracle
    worst = 0.0
    for mm in range(1, 13):
        for m1 in range(1, 13):
            for m2 in range(1, 13):
                want = triple_sine_quadrature(mm, m1, m2)
                got = flip * triple_sine_integral(mm, m1, m2)
                worst = max(worst, abs(want - got))
    record("kernel_oracle", worst < 1e-10, f"max deviation {worst:.2e}")

    # partition of unity
    xs = np.geomspace(params.gamma * 2 ** -16, 40.0, 2000)
    H = 20
    tot = chi_h(xs, -1, params.gamma) + sum(chi_h(xs, h, params.gamma)
                                            for h in range(0, H + 1))
    dev = float(np.max(np.abs(tot[xs > 2.0 ** -H * params.gamma] - 1.0)))
    record("partition_of_unity", dev < 1e-12, f"max deviation {dev:.2e}")

    # expansion equivalence on a small grid (the coarse cutoff is intentional:
    # the identity is exact at any truncation, so the tail warning is muted)
    import warnings as _w
    Mm = 9
    pts = bruno_mod.sample_diophantine_points(
        params.with_(Mmax=Mm, Nmax=60), 3, seed=run["seed"], Mmax=Mm, Nmax=60)
    worst_rel = 0.0
    kcap = min(K_cap, 3)
    if kcap >= 1:
        _w.filterwarnings("ignore", message="convolution mass beyond")
        for eps, nu in pts:
            q = 0.8
            lt = CountertermTable()
            for (nn, mm) in lambda_modes(params, Mm, 60):
                v = counterterm(2, nn, mm, -1, params, eps, nu, q,
                                CountertermTable(), Mm)
                if v != 0.0:
                    lt.set(2, nn, mm, -1, v)
            table = compute_coeffs(params, eps, nu, lt, kcap, Mm, q=q)
            for k in range(1, kcap + 1):
                for nn in range(-(k + 1), k + 2):
                    for mm in (1, 3, 5, 7, 9):
                        if (abs(nn), mm) == (1, 1):
                            continue
                        want = table.value(k, nn, mm)
                        got = flip ** k * sum_trees(k, nn, mm, params, eps, nu,
                                                    q, lt, Mm)
                        worst_rel = max(worst_rel,
                                        abs(want - got) / max(1.0, abs(want)))
        record("tree_recursion_equivalence", worst_rel < 1e-10,
               f"worst relative deviation {worst_rel:.2e}")
    else:
        report["skipped"].append("tree_recursion_equivalence")

    # counting inequality
    bad = 0
    total = 0
    for eps, nu in pts:
        for k in (1, 2):
            for nn in range(-(k + 1), k + 2):
                for mm in (1, 3, 5):
                    if (abs(nn), mm) == (1, 1):
                        continue
                    for tree in enumerate_trees(k, nn, mm, params, Mm):
                        for asg in bruno_mod.admissible_scales(tree, params, eps, nu):
                            total += 1
                            if not bruno_mod.check_bruno(tree, asg, params,
                                                         raise_on_fail=False):
                                bad += 1
    record("counting_inequality", bad == 0, f"{total} assignments, {bad} violations")

    (out / "verify.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    if not ok_all:
        first = next(n for n, c in report["checks"].items() if not c["ok"])
        print(f"verification failed at: {first}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_residual(params: ModelParams, run: dict) -> int:
    out = _outdir(run)
    K = run["orders"]
    lo = run.get("eps_lo", params.eps0 / 100)
    hi = run.get("eps_hi", params.eps0 / 2)
    count = run.get("eps_count", 8)
    eps_list = np.geomspace(lo, hi, count)
    rows = []
    pts = []
    for eps in eps_list:
        eps = float(eps)
        try:
            nu, info = solve_nu(params, eps, K)
        except (NonConvergenceError, SignExcludedError) as exc:
            rows.append((eps, "", "", f"excluded: {exc}"))
            continue
        accepted = dioph_mod.check_cantor(eps, nu, params)
        if not accepted and not run["force"]:
            rows.append((eps, "", "", "excluded: amplitude conditions"))
            continue
        table = compute_coeffs(params, eps, nu, info["counterterms"], K,
                               params.Mmax, q=info["q"])
        R = residual_norm(table, params, eps, nu)
        oc = order_consistency(table, params, eps, nu, info["counterterms"])
        rows.append((eps, R, oc, "ok"))
        pts.append((math.log(eps), math.log(R)))
    slope = float(np.polyfit([p[0] for p in pts], [p[1] for p in pts], 1)[0]) \
        if len(pts) >= 2 else float("nan")
    with open(out / "residual.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eps", "residual_sup", "order_consistency", "status"])
        for r in rows:
            w.writerow([repr(r[0])] + [repr(x) if x != "" else "" for x in r[1:3]]
                       + [r[3]])
    (out / "residual.json").write_text(json.dumps(
        {"schema_version": 1, "slope": slope, "target": (K + 2) / 2 - 0.3,
         "accepted": len(pts), "total": len(rows)}, indent=2, sort_keys=True))
    print(f"residual slope {slope:.3f} over {len(pts)} accepted eps (target "
          f">= {(K + 2) / 2 - 0.3:.2f}); wrote {out}/residual.csv")
    return EXIT_OK


def cmd_dioph(params: ModelParams, run: dict, what: str) -> int:
    out = _outdir(run)
    grid = run["grid"]
    if what == "mass":
        rows = []
        for gam in (params.gamma, params.gamma / 2, params.gamma / 4):
            rep = dioph_mod.measure_mass_complement(gam, params.tau0, grid,
                                                    params.Nmax)
            rows.append((gam, rep))
        with open(out / "dioph_mass.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["gamma", "fail_fraction", "excluded_measure",
                        "tail_bound", "six_gamma"])
            for gam, rep in rows:
                w.writerow([repr(gam), repr(rep.fail_fraction),
                            repr(rep.excluded_measure), repr(rep.tail_bound),
                            repr(6 * gam)])
        ok = all(rep.excluded_with_tail <= 6 * gam for gam, rep in rows)
        print(f"mass measure: estimates {'within' if ok else 'EXCEED'} 6*gamma")
        return EXIT_OK if ok else EXIT_VERIFY
    if what == "melnikov":
        eps = run.get("eps", params.eps0 / 2)
        try:
            nu, _ = solve_nu(params, eps, run["orders"])
        except NonConvergenceError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_NOCONV
        marg = dioph_mod.melnikov_margins(eps, nu, params)
        (out / "dioph_melnikov.json").write_text(json.dumps(
            {"schema_version": 1, "eps": eps, "first": marg["first"],
             "second": marg["second"], "gamma": params.gamma,
             "ok": marg["first"] >= params.gamma and marg["second"] >= params.gamma},
            indent=2, sort_keys=True))
        print(f"melnikov margins: first {marg['first']:.3e}, second {marg['second']:.3e}")
        return EXIT_OK
    if what == "cantor":
        eps = run.get("eps", params.eps0 / 2)
        try:
            nu, _ = solve_nu(params, eps, run["orders"])
        except NonConvergenceError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_NOCONV
        ok = dioph_mod.check_cantor(eps, nu, params)
        marg = dioph_mod.cantor_margins(eps, nu, params)
        (out / "dioph_cantor.json").write_text(json.dumps(
            {"schema_version": 1, "eps": eps, "accepted": bool(ok),
             "square": marg["square"], "first": marg["first"],
             "second": marg["second"]}, indent=2, sort_keys=True, default=str))
        print(f"eps={eps}: {'accepted' if ok else 'excluded'}")
        return EXIT_OK
    if what == "measure":
        window = run.get("window", params.eps0 / 2)
        rows = []
        for w_ in (window, window / 4, window / 16):
            rep = dioph_mod.measure_cantor(params, w_, grid, K=run["orders"])
            rows.append((w_, rep))
        with open(out / "dioph_measure.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["window", "grid_fail_fraction", "excluded_measure",
                        "tail_bound", "relative_excluded"])
            for w_, rep in rows:
                w.writerow([repr(w_), repr(rep.fail_fraction),
                            repr(rep.excluded_measure), repr(rep.tail_bound),
                            repr(rep.excluded_with_tail / w_)])
        rels = [rep.excluded_with_tail / w_ for w_, rep in rows]
        print("relative excluded:", " > ".join(f"{r:.3e}" for r in rels),
              "monotone" if rels[0] > rels[1] > rels[2] else "NOT monotone")
        return EXIT_OK
    print(f"unknown dioph target {what!r}", file=sys.stderr)
    return EXIT_INVALID


def _bruno_point(args) -> list[tuple[int, int, int]]:
    """Counting-inequality tallies for one sampled point (pool worker)."""
    params, Mm, eps, nu_items = args
    nu = NuTable(dict(nu_items), eps0=params.eps0, nu_cap=params.nu_cap)
    rows = []
    for k in (1, 2, 3):
        total = bad = 0
        for nn in range(-(k + 1), k + 2):
            for mm in (1, 3, 5):
                if (abs(nn), mm) == (1, 1):
                    continue
                for tree in enumerate_trees(k, nn, mm, params, Mm):
                    for asg in bruno_mod.admissible_scales(tree, params, eps, nu):
                        total += 1
                        if not bruno_mod.check_bruno(tree, asg, params,
                                                     raise_on_fail=False):
                            bad += 1
        rows.append((k, total, bad))
    return rows


def cmd_bruno(params: ModelParams, run: dict) -> int:
    out = _outdir(run)
    Mm = 9
    pts = bruno_mod.sample_diophantine_points(
        params.with_(Mmax=Mm, Nmax=60), run.get("samples", 20),
        seed=run["seed"], Mmax=Mm, Nmax=60)
    work = [(params, Mm, eps, tuple(sorted(nu.items()))) for eps, nu in pts]
    if run.get("jobs", 1) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=run["jobs"]) as pool:
            results = list(pool.map(_bruno_point, work))
    else:
        results = [_bruno_point(w) for w in work]
    tallies = {k: [0, 0] for k in (1, 2, 3)}
    for res in results:
        for k, total, bad in res:
            tallies[k][0] += total
            tallies[k][1] += bad
    rows = [(k, t, b) for k, (t, b) in sorted(tallies.items())]
    with open(out / "bruno.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["order", "assignments", "violations"])
        for r in rows:
            w.writerow(list(r))
    ok = all(b == 0 for _, _, b in rows)
    print("\n".join(f"order {k}: {t} assignments, {b} violations"
                    for k, t, b in rows))
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_kernel(params: ModelParams, run: dict) -> int:
    out = _outdir(run)
    cap = min(params.Mmax, 16)
    with open(out / "kernel.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "m1", "m2", "value"])
        for m in range(1, cap + 1):
            for m1 in range(1, cap + 1):
                for m2 in range(m1, cap + 1):
                    v = kernel_v(m, m1, m2)
                    if v != 0.0:
                        w.writerow([m, m1, m2, repr(v)])
    print(f"wrote kernel table to {out}/kernel.csv")
    return EXIT_OK


def cmd_report(params: ModelParams, run: dict) -> int:
    out = _outdir(run)
    rc_verify = cmd_verify(params, run)
    rep = {"schema_version": 1, "verify_ok": rc_verify == EXIT_OK}
    eps = run.get("eps", params.eps0 / 2)
    try:
        nu, info = solve_nu(params, eps, run["orders"])
        table = compute_coeffs(params, eps, nu, info["counterterms"],
                               run["orders"], params.Mmax, q=info["q"])
        rep["q"] = info["q"]
        rep["residual"] = residual_norm(table, params, eps, nu)
        rep["nu_sup_over_eps"] = nu.sup_norm() / eps
        rep["decay_ok"] = decay_check(table, params).ok
    except (NonConvergenceError, SignExcludedError) as exc:
        rep["construction_error"] = str(exc)
    (out / "report.json").write_text(json.dumps(rep, indent=2, sort_keys=True,
                                                default=float))
    print(f"wrote report to {out}/report.json")
    return EXIT_OK if rc_verify == EXIT_OK else rc_verify


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="lindbeam",
        description="Periodic solutions of the quadratic beam equation and "
                    "verification of the machinery behind them.")
    ap.add_argument("--config", help="INI config file ([model]/[run] sections)")
    for f in fields(ModelParams):
        ap.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name)
    ap.add_argument("--eps", dest="eps")
    ap.add_argument("--orders", dest="orders")
    ap.add_argument("--grid", dest="grid")
    ap.add_argument("--seed", dest="seed")
    ap.add_argument("--samples", dest="samples")
    ap.add_argument("--window", dest="window")
    ap.add_argument("--outdir", dest="outdir")
    ap.add_argument("--jobs", dest="jobs")
    ap.add_argument("--force", action="store_const", const="1", dest="force")
    ap.add_argument("--eps-lo", dest="eps_lo")
    ap.add_argument("--eps-hi", dest="eps_hi")
    ap.add_argument("--eps-count", dest="eps_count")
    ap.add_argument("--kernel-sign-flip", action="store_const", const="1",
                    dest="kernel_sign_flip",
                    help="test hook: negate the kernel in verification checks")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("coeffs")
    sub.add_parser("counterterms")
    tp = sub.add_parser("trees")
    tp.add_argument("order", type=int)
    tp.add_argument("n", type=int)
    tp.add_argument("m", type=int)
    tp.add_argument("--special", action="store_true",
                    help="special-end-node family")
    sub.add_parser("verify")
    sub.add_parser("residual")
    dp = sub.add_parser("dioph")
    dp.add_argument("what", choices=["mass", "melnikov", "cantor", "measure"])
    bp = sub.add_parser("bruno")
    bp.add_argument("what", choices=["check"])
    sub.add_parser("kernel")
    sub.add_parser("report")
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("config", "command", "order", "n", "m",
                              "special", "what") and v is not None}
    try:
        params, run = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        if args.command == "coeffs":
            return cmd_coeffs(params, run)
        if args.command == "counterterms":
            return cmd_counterterms(params, run)
        if args.command == "trees":
            return cmd_trees(params, run, args.order, args.n, args.m,
                             args.special)
        if args.command == "verify":
            return cmd_verify(params, run)
        if args.command == "residual":
            return cmd_residual(params, run)
        if args.command == "dioph":
            return cmd_dioph(params, run, args.what)
        if args.command == "bruno":
            return cmd_bruno(params, run)
        if args.command == "kernel":
            return cmd_kernel(params, run)
        if args.command == "report":
            return cmd_report(params, run)
    except SignExcludedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

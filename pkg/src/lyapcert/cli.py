"""Command-line front end: ``lyapcert {check,matrosov,simulate,delta}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .certify import (FAIL, INCONCLUSIVE, PASS, Verdict, _jsonable, check_decay, check_integral_budget,
                      check_radial_unboundedness, check_sandwich, combine, dwell_bound_check,
                      initial_set, matrosov_bundle, matrosov_construct, matrosov_definiteness,
                      trajectory_bundle, zero_set_distance)
from .expr import parse
from .integrate import integrate
from .sampling import SamplingPlan
from .stability import settling_time, uniformity_report
from .systems import ConfigError, builtin, candidate_certificate, load_config_file

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_INCONCLUSIVE = 0, 1, 2, 3
MODE_NAMES = {"uniform": "uniform", "asymptotic": "uniform-asymptotic", "global": "global"}

# human-readable statement of each check
CONDITIONS = {
    "sandwich": "V1(x) <= V(t, x) <= V2(x) with V1, V2 positive definite",
    "decay": "V' - max(W*, 0) <= 0 (or <= -V3(x) in asymptotic/global mode)",
    "integral_budget": "integral of max(W*, 0) along solutions <= M(x0)",
    "radial_unboundedness": "V1 grows without bound along rays",
    "definiteness": "|W'| bounded away from 0 near the zero set of V*",
    "dwell_bound": "time in the probe set per visit <= 2L/xi, finitely many visits",
    "uniformity": "delta(epsilon) > 0 independent of t0",
}


@dataclass
class RunManifest:
    command: str
    source: str
    params: dict = field(default_factory=dict)
    knobs: dict = field(default_factory=dict)
    seed: int = 0
    threads: int = 1
    version: str = __version__
    duration_s: float = 0.0

    def to_json(self) -> dict:
        return _jsonable(dataclasses.asdict(self))


class UsageError(Exception):
    pass


def _parse_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    return text


def _params(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--param expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = _parse_value(value.strip())
    return out


def _floats(text: str, name: str) -> list:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{name} expects comma-separated numbers, got {text!r}") from None
    if not values:
        raise UsageError(f"{name} is empty")
    return values


def _load(args):
    params = _params(args.param)
    if args.config:
        if params:
            raise UsageError("--param applies to --builtin only")
        return (args.config, params) + tuple(load_config_file(args.config))
    return (args.builtin, params) + tuple(builtin(args.builtin, **params))


def _status_code(status: str) -> int:
    return {PASS: EXIT_PASS, FAIL: EXIT_FAIL, INCONCLUSIVE: EXIT_INCONCLUSIVE}[status]


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _summary_lines(title, verdicts, extra=()):
    lines = [title]
    for v in verdicts:
        lines.append(f"  [{v.status:>12}] {v.check}: {CONDITIONS.get(v.check, v.check)}")
        if v.margin_min is not None:
            lines.append(f"                 worst margin {_fmt(v.margin_min)}, samples {v.samples_used}")
        if v.witness:
            w = v.witness
            where = ", ".join(f"{k}={_fmt(w[k])}" for k in ("t", "x") if k in w)
            lines.append(f"                 witness {where}: lhs={_fmt(w.get('lhs'))} "
                         f"rhs={_fmt(w.get('rhs'))} ({w.get('inequality', '')})")
    lines.extend(extra)
    return lines


def _emit(args, manifest, status, verdicts, title, extra=(), payload=None, started=None):
    manifest.duration_s = time.perf_counter() - started if started is not None else 0.0
    report = {"manifest": manifest.to_json(), "status": status,
              "verdicts": [v.to_json() for v in verdicts]}
    if payload:
        report.update(_jsonable(payload))
    text = json.dumps(report, indent=2, sort_keys=True)
    if getattr(args, "out", None) and args.command != "simulate":
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    if args.json:
        print(text)
    else:
        print("\n".join(_summary_lines(title, verdicts, extra)))
        print(f"overall: {status}")
    return _status_code(status)


def _run_checks(system, cert, mode, args, workers):
    plan = SamplingPlan(samples=args.samples, seed=args.seed)
    cert = cert.with_mode(mode)
    verdicts = [check_sandwich(cert, system, plan), check_decay(cert, system, plan, mode)]
    starts = initial_set(system, count=args.trajectories, seed=args.seed)
    verdicts.append(check_integral_budget(cert, system, starts, T_max=args.horizon, workers=workers))
    if mode == "global":
        verdicts.append(check_radial_unboundedness(cert, system))
    return verdicts


def cmd_check(args) -> int:
    started = time.perf_counter()
    source, params, system, cert, _ = _load(args)
    mode = MODE_NAMES[args.mode] if args.mode else None
    extra = []
    if cert is None:
        cert = candidate_certificate(system, mode or "uniform")
        extra.append("  no certificate supplied: tested the candidate V = |x|^2/2, W* = 0, M = 0")
    mode = mode or cert.mode
    if mode != "uniform" and cert.V3 is None:
        raise ConfigError(f"mode {mode!r} needs V3 in the certificate")
    manifest = RunManifest("check", source, params,
                           {"mode": mode, "samples": args.samples, "horizon": args.horizon,
                            "trajectories": args.trajectories, "abs_tol": 1e-10, "rel_tol": 1e-10},
                           args.seed, args.threads)
    verdicts = _run_checks(system, cert, mode, args, args.threads)
    overall = combine(verdicts, "certificate")
    title = f"certificate check for {system.label or source} ({mode} mode)"
    return _emit(args, manifest, overall.status, verdicts, title, extra,
                 {"certificate": {"V": str(cert.V), "Wstar": str(cert.Wstar), "V1": str(cert.V1),
                                  "V2": str(cert.V2), "V3": None if cert.V3 is None else str(cert.V3),
                                  "M": str(cert.M)}},
                 started)


def _constructed_budget(md, system, cert, xi):
    """M(x0) = 2L (1 + V(x0) / a) with a = xi r1 / (2 X sqrt(n)) and X = sampled sup |f|."""
    t, X = SamplingPlan(samples=8192).points(system.n, md.A)
    X_sup = float(np.max(np.linalg.norm(system.rhs_many(t, X), axis=1)))
    a = xi * md.r1 / (2 * X_sup * math.sqrt(system.n))
    return parse(f"{2 * md.L!r} * (1 + ({cert.V}) / {a!r})", system.n), {"X_sup": X_sup, "decrement": a}


def cmd_matrosov(args) -> int:
    started = time.perf_counter()
    source, params, system, cert, md = _load(args)
    if md is None:
        raise ConfigError("no [matrosov] data for this system")
    overrides = {k: getattr(args, k) for k in ("alpha", "A", "r1") if getattr(args, k) is not None}
    if overrides:
        md = dataclasses.replace(md, L=None, **overrides)
    md.validate(system.domain_radius)
    md = md.with_L(system.n)
    if cert is None:
        cert = candidate_certificate(system)
    manifest = RunManifest("matrosov", source, params,
                           {"alpha": md.alpha, "A": md.A, "r1": md.r1, "L": md.L, "samples": args.samples,
                            "horizon": args.horizon, "trajectories": args.trajectories,
                            "bundle": args.bundle},
                           args.seed, args.threads)
    est = matrosov_definiteness(md, system, SamplingPlan(samples=args.samples, seed=args.seed))
    definiteness = Verdict(est.status, "definiteness", None, est.xi_hat, None, est.samples_used,
                           est.notes, est.to_json())
    verdicts = [definiteness]
    payload = {"xi_hat": est.xi_hat, "L": md.L}
    if est.status == PASS:
        xi = est.xi_hat
        budget, budget_info = _constructed_budget(md, system, cert, xi)
        built = matrosov_construct(md, cert, system, xi=xi, budget=budget)
        verdicts += _run_checks(system, built, "uniform-asymptotic", args, args.threads)
        bundle = matrosov_bundle(md, system, count=args.bundle, horizon=args.horizon, seed=args.seed)
        trajs = trajectory_bundle(system, bundle, workers=args.threads)
        dwell = dwell_bound_check(md, system, cert.V, trajs, xi, distance=zero_set_distance(md, system),
                                  workers=args.threads)
        verdicts.append(dwell)
        runs = dwell.details["runs"]
        lengths = [x for r in runs for x in r["lengths"]]
        payload.update(budget_info, dwell={
            "N_total": dwell.details["N_total"],
            "N_max": max((r["N"] for r in runs), default=0),
            "max_length": max(lengths, default=0.0),
            "min_bound": min((r["bound"] for r in runs if r.get("bound") is not None), default=None),
            "L_measured": max((r["L"] for r in runs), default=0.0),
        })
    overall = combine(verdicts, "matrosov")
    extra = [f"  xi_hat = {est.xi_hat:.6g}, L = {md.L:.6g}"]
    if "dwell" in payload:
        d = payload["dwell"]
        extra.append(f"  dwell: N = {d['N_total']} visits, longest {d['max_length']:.4g} "
                     f"vs bound {_fmt(d['min_bound'])}")
    return _emit(args, manifest, overall.status, verdicts,
                 f"definiteness pipeline for {system.label or source}", extra, payload, started)


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    source, params, system, _, _ = _load(args)
    x0 = _floats(args.x0, "--x0")
    if len(x0) != system.n:
        raise UsageError(f"--x0 needs {system.n} components, got {len(x0)}")
    traj = integrate(system, x0, args.t0, args.tf, args.tol, args.tol, stop_on_exit=False)
    times = None
    if args.points:
        times = np.linspace(traj.t0, traj.tf, args.points)
    if args.out:
        traj.to_csv(args.out, times)
    else:
        traj.to_csv(sys.stdout, times)
    manifest = RunManifest("simulate", source, params,
                           {"x0": x0, "t0": args.t0, "tf": args.tf, "tol": args.tol},
                           args.seed, args.threads, duration_s=time.perf_counter() - started)
    info = {"manifest": manifest.to_json(), "status": traj.status, "steps": traj.n_steps,
            "rejected": traj.n_rejected, "tf": traj.tf, "xf": traj.xf.tolist()}
    print(json.dumps(_jsonable(info), sort_keys=True) if args.json
          else f"{traj.status}: {traj.n_steps} steps, x({traj.tf:g}) = {traj.xf.tolist()}",
          file=sys.stderr if not args.out else sys.stdout)
    return EXIT_PASS if traj.status == "completed" else EXIT_INCONCLUSIVE


def cmd_delta(args) -> int:
    started = time.perf_counter()
    source, params, system, _, _ = _load(args)
    eps = _floats(args.eps_grid, "--eps-grid")
    t0s = _floats(args.t0_grid, "--t0-grid")
    report = uniformity_report(system, eps, t0s, horizon=args.horizon, directions=args.directions,
                               workers=args.threads, full_ball=args.full_ball)
    if args.settle:
        eta, c = args.settle
        report.settling = settling_time(system, eta, c, t0s, args.directions, args.horizon,
                                        workers=args.threads)
    manifest = RunManifest("delta", source, params,
                           {"eps_grid": eps, "t0_grid": t0s, "horizon": args.horizon,
                            "directions": report.directions, "full_ball": args.full_ball,
                            "settle": args.settle},
                           args.seed, args.threads)
    status = PASS if report.uniformly_stable else FAIL
    witness = None
    if report.witnesses:
        (e, t0), x0 = sorted(report.witnesses.items())[0]
        witness = {"t": t0, "x": x0, "lhs": None, "rhs": e,
                   "inequality": "sup |x(t)| < epsilon for the smallest probed radius"}
    verdict = Verdict(status, "uniformity", witness, float(np.min(report.uniform_delta)), None,
                      report.delta.size, report.notes, {})
    extra = ["  epsilon    uniform delta    spread over t0"]
    for e, d, s in zip(report.epsilons, report.uniform_delta, report.spread):
        extra.append(f"  {e:<10g} {d:<16.6g} {s:.3g}")
    for r in report.settling:
        extra.append(f"  settling T(eta={r.eta:g}, c={r.c:g}, t0={r.t0:g}) = "
                     + ("not attained" if r.T is None else f"{r.T:.6g}"))
    if args.out:
        report.write(args.out)
    payload = {"delta_table": report.delta, "summary": report.summary()}
    if report.settling:
        payload["settling"] = [{"eta": r.eta, "c": r.c, "t0": r.t0, "T": r.T} for r in report.settling]
    saved_out, args.out = args.out, None  # the report directory is not a JSON file
    try:
        return _emit(args, manifest, status, [verdict],
                     f"epsilon-delta probe for {system.label or source}", extra, payload, started)
    finally:
        args.out = saved_out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lyapcert",
                                     description="Falsification checks for generalized Lyapunov certificates.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="TOML config file")
    src.add_argument("--builtin", help="built-in system name")
    common.add_argument("--param", action="append", metavar="KEY=VALUE",
                        help="builtin parameter (repeatable)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--json", action="store_true", help="print the JSON report instead of a summary")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", parents=[common], help="sandwich, decay and integral budget checks")
    p.add_argument("--mode", choices=sorted(MODE_NAMES))
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--horizon", type=float, default=50.0, help="T_max for the budget integrals")
    p.add_argument("--trajectories", type=int, default=16)
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("matrosov", parents=[common], help="definiteness, construction and dwell checks")
    p.add_argument("--alpha", type=float)
    p.add_argument("--A", type=float)
    p.add_argument("--r1", type=float)
    p.add_argument("--samples", type=int, default=32768)
    p.add_argument("--horizon", type=float, default=40.0)
    p.add_argument("--trajectories", type=int, default=16)
    p.add_argument("--bundle", type=int, default=8, help="trajectories started on the zero set")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_matrosov)

    p = sub.add_parser("simulate", parents=[common], help="integrate one trajectory to CSV")
    p.add_argument("--x0", required=True, help="comma-separated initial state")
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--tf", type=float, default=10.0)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--points", type=int, help="sample the dense output at this many equally spaced times")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("delta", parents=[common], help="epsilon-delta uniformity probe")
    p.add_argument("--eps-grid", default="0.1,0.5,1")
    p.add_argument("--t0-grid", default="0,1,5,10")
    p.add_argument("--horizon", type=float, default=50.0)
    p.add_argument("--directions", type=int)
    p.add_argument("--full-ball", action="store_true", help="also probe interior shells")
    p.add_argument("--settle", nargs=2, type=float, metavar=("ETA", "C"),
                   help="also estimate settling times T(eta, c)")
    p.add_argument("--out", help="directory for CSV, JSON and plot data")
    p.set_defaults(func=cmd_delta)
    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"lyapcert: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        # precondition violations from the numeric layer (bad radius, empty grid, ...)
        print(f"lyapcert: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

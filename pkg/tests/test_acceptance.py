"""Acceptance criteria 1-11, each at its stated tolerance.

Each test records one ``criterion k: PASS/FAIL`` line, printed in the
terminal summary (see conftest.py). Run alone with
``pytest tests/test_acceptance.py -v``.
"""

import json
import math
import time

import numpy as np
import pytest

from lyapcert import cli
from lyapcert.certify import (FAIL, PASS, check_decay, check_integral_budget, check_sandwich,
                              decay_residual, dwell_bound_check, initial_set, matrosov_bundle,
                              matrosov_definiteness, orbital_derivative, trajectory_bundle)
from lyapcert.integrate import integrate, path_integral
from lyapcert.sampling import SamplingPlan
from lyapcert.stability import example17_bounds_check, settling_time, uniformity_report
from lyapcert.systems import builtin, candidate_certificate, example17, example17_params

E = math.e


def _line(k, name, ok, detail):
    return f"criterion {k}: {'PASS' if ok else 'FAIL'} - {name}: {detail}"


@pytest.fixture(scope="module")
def example17_runs():
    """100 initial states in the ball of radius 0.5, each at t0 in {0, 1, 5}."""
    rng = np.random.default_rng(17)
    d = rng.standard_normal((100, 2))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    x0s = d * (0.5 * np.sqrt(rng.uniform(size=100)))[:, None]
    init = [(t0, x0) for t0 in (0.0, 1.0, 5.0) for x0 in x0s]
    params = example17_params(2, "exp(-t)", "x1^2", M1=1.0)
    start = time.perf_counter()
    verdict = example17_bounds_check(params, init, T_max=50.0)
    return verdict, time.perf_counter() - start


def test_criterion_1_trajectory_bound(example17_runs, record):
    verdict, elapsed = example17_runs
    runs = verdict.details["runs"]
    worst = max(r["sup_norm"] / (np.linalg.norm(r["x0"]) * E) for r in runs if np.any(r["x0"]))
    ok = (len(runs) == 300 and all(r["status"] == PASS for r in runs)
          and all(r["sup_norm"] <= np.linalg.norm(r["x0"]) * E * (1 + 1e-6) for r in runs)
          and elapsed <= 30.0)
    record(_line(1, "example17 trajectory bound", ok,
                 f"300 runs, max sup|x|/(|x0| e) = {worst:.9f}, {elapsed:.1f}s"))
    assert ok


def test_criterion_2_integral_budget(example17_runs, record):
    verdict, _ = example17_runs
    runs = verdict.details["runs"]
    quad = max(r["quad_error"] for r in runs)
    ratio = max(r["integral"] / (float(np.dot(r["x0"], r["x0"])) * E ** 2) for r in runs if np.any(r["x0"]))
    ok = (all(r["integral"] <= float(np.dot(r["x0"], r["x0"])) * E ** 2 * (1 + 1e-6) for r in runs)
          and quad <= 1e-6)
    record(_line(2, "example17 integral budget", ok,
                 f"max integral / (M1 |x0|^2 e^2) = {ratio:.6f}, max quadrature error {quad:.2e}"))
    assert ok


def test_criterion_3_identity(capsys, record):
    sys, cert, _ = builtin("example17")
    t, X = SamplingPlan(samples=10_000, seed=3).points(sys.n, sys.domain_radius)
    residual = float(np.max(np.abs(decay_residual(cert, sys, t, X))))
    code = cli.main(["check", "--builtin", "example17", "--mode", "uniform"])
    capsys.readouterr()
    ok = residual <= 1e-9 and code == 0
    record(_line(3, "example17 identity V' - max(W*, 0) = 0", ok,
                 f"max |residual| = {residual:.2e} over 1e4 points, check exit {code}"))
    assert ok


def test_criterion_4_positive_control(capsys, record):
    sys, cert, _ = builtin("linear_decay")
    plan = SamplingPlan()
    sandwich = check_sandwich(cert, sys, plan)
    decay = check_decay(cert, sys, plan, "uniform-asymptotic")
    t, X = plan.points(sys.n, sys.domain_radius)
    slack = float(np.max(np.abs(decay_residual(cert, sys, t, X) + cert.V3.evaluate_many(t, X))))
    budget = check_integral_budget(cert, sys, initial_set(sys))
    code = cli.main(["check", "--builtin", "linear_decay", "--mode", "asymptotic"])
    capsys.readouterr()
    ok = (sandwich.status == decay.status == budget.status == PASS and slack <= 1e-12 and code == 0)
    record(_line(4, "linear decay positive control", ok,
                 f"sandwich {sandwich.status}, decay {decay.status} (|slack| <= {slack:.1e}), "
                 f"budget {budget.status}, exit {code}"))
    assert ok


def test_criterion_5_negative_control(record):
    sys, _, _ = builtin("unstable_linear")
    cert = candidate_certificate(sys)
    verdict = check_decay(cert, sys, SamplingPlan(), "uniform")
    w = verdict.witness
    vdot = float(orbital_derivative(cert.V, sys, np.array([w["t"]]), np.array([w["x"]]))[0])
    ok = verdict.status == FAIL and vdot >= 1e-6
    record(_line(5, "unstable linear negative control", ok,
                 f"{verdict.status}, witness x={w['x']}, re-evaluated V' = {vdot:.6g}"))
    assert ok


def test_criterion_6_uniformity(record):
    eps, t0s = [0.1, 0.5, 1.0], [0.0, 1.0, 5.0, 10.0]
    lin = uniformity_report(builtin("linear_decay")[0], eps, t0s)
    lin_err = float(np.max(np.abs(lin.delta - np.array(eps)[:, None]) / np.array(eps)[:, None]))
    ex = uniformity_report(builtin("example17")[0], eps, t0s)
    ex_ratio = float(np.min(ex.uniform_delta / (np.array(eps) / E)))
    ok = lin_err <= 1e-3 and ex_ratio >= 1 - 5e-3
    record(_line(6, "epsilon-delta uniformity", ok,
                 f"linear decay max rel. deviation {lin_err:.1e}; "
                 f"example17 min delta / (eps/e) = {ex_ratio:.4f}"))
    assert ok


def test_criterion_7_not_asymptotic(record):
    sys = builtin("example17")[0]
    c = 0.5
    rows = settling_time(sys, 0.1 * c, c, [0.0, 1.0, 5.0, 10.0])
    ok = all(not r.attained for r in rows)
    record(_line(7, "example17 settling time not attained", ok,
                 f"{sum(not r.attained for r in rows)}/{len(rows)} initial times report 'not attained'"))
    assert ok


def _xi_grid_oracle(alpha=0.5, A=1.0, r1=0.01):
    """min |W'| for W = x1 x2 on alpha < |x| < A, |x2| < r1, t over a period, by dense grid."""
    t = np.linspace(0.0, 2 * np.pi, 721)[:, None, None]
    x1 = np.concatenate([np.linspace(-A, -alpha * 0.99, 401), np.linspace(alpha * 0.99, A, 401)])
    x2 = np.linspace(-r1, r1, 201)
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    r = np.hypot(X1, X2)
    keep = (r > alpha) & (r < A)
    X1, X2 = X1[keep][None, :], X2[keep][None, :]
    wdot = X2 ** 2 - X1 ** 2 - (2 + np.sin(t[:, :, 0])) * X1 * X2
    return float(np.min(np.abs(wdot)))


def test_criterion_8_matrosov(record):
    sys, cert, md = builtin("matrosov_oscillator", alpha=0.5, A=1.0, r1=0.01)
    oracle = _xi_grid_oracle()
    est = matrosov_definiteness(md, sys)
    xi = est.xi_hat
    starts = matrosov_bundle(md, sys, count=8, horizon=40.0)
    starts += [(t0, t0 + 40.0, np.array(x0)) for t0, x0 in
               [(0.0, (0.0, 0.9)), (1.0, (0.0, -0.9)), (2.0, (0.6, 0.6)), (3.0, (-0.7, 0.3))]]
    trajs = trajectory_bundle(sys, starts)
    ok_check = dwell_bound_check(md, sys, cert.V, trajs, xi)
    inflated = dwell_bound_check(md, sys, cert.V, trajs, 10 * xi)
    runs = ok_check.details["runs"]
    N = ok_check.details["N_total"]
    ok = (0.2 <= xi <= 0.25 and oracle <= xi <= oracle + 0.01
          and ok_check.status == PASS and inflated.status == FAIL
          and all(r["max_length"] <= r["bound"] for r in runs if r["N"])
          and 0 < N < math.inf)
    record(_line(8, "definiteness and dwell bounds", ok,
                 f"xi_hat = {xi:.5f} (grid oracle {oracle:.5f}), dwell check {ok_check.status} "
                 f"with N = {N} visits, 10x xi -> {inflated.status}"))
    assert ok


def test_criterion_9_integrator(record):
    sys = builtin("linear_decay")[0]
    traj = integrate(sys, [1.0], 0.0, 1.0, 1e-10, 1e-10)
    end_err = abs(traj.xf[0] - math.exp(-1.0))
    long = integrate(sys, [1.0], 0.0, 5.0, 1e-10, 1e-10)
    quad = path_integral(long, lambda t, X: X[:, 0] ** 2)
    quad_err = abs(quad.value - (1 - math.exp(-10.0)) / 2)
    ok = end_err <= 1e-8 and quad_err <= 1e-7
    record(_line(9, "integrator and quadrature accuracy", ok,
                 f"endpoint error {end_err:.1e}, path integral error {quad_err:.1e}"))
    assert ok


def _corpus():
    exprs = []
    systems = [builtin("linear_decay", n=2), builtin("unstable_linear", n=2),
               builtin("matrosov_oscillator"), builtin("example17"),
               builtin("example17", n=1, h="0"), builtin("example17", n=3, h="x1^4"),
               example17(1, "2*exp(-2*t)", "0")]
    for sys, cert, md in systems:
        cert = cert or candidate_certificate(sys)
        found = list(sys.f) + [cert.V, cert.Wstar, cert.V1, cert.V2, cert.V3, cert.M]
        if md is not None:
            found += [md.W, md.Vstar]
        exprs += [(e, sys.domain_radius) for e in found if e is not None]
    return exprs


def test_criterion_10_dual_numbers(record):
    corpus = _corpus()
    rng = np.random.default_rng(10)
    h = 1e-6
    worst = 0.0
    for _ in range(1000):
        expr, radius = corpus[rng.integers(len(corpus))]
        n = expr.n
        t = rng.uniform(0.0, 10.0)
        x = rng.uniform(-radius, radius, n) / math.sqrt(max(n, 1))
        dt, dx = expr.gradient(t, x)
        fd_t = (expr.evaluate(t + h, x) - expr.evaluate(t - h, x)) / (2 * h)
        worst = max(worst, abs(dt - fd_t) / (1 + abs(dt)))
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            fd = (expr.evaluate(t, x + e) - expr.evaluate(t, x - e)) / (2 * h)
            worst = max(worst, abs(dx[i] - fd) / (1 + abs(dx[i])))
    ok = worst <= 1e-6
    record(_line(10, "dual-number gradients vs central differences", ok,
                 f"max |dual - FD| / (1 + |dual|) = {worst:.1e} over 1000 pairs from {len(corpus)} expressions"))
    assert ok


def _report(capsys, argv):
    code = cli.main(argv)
    doc = json.loads(capsys.readouterr().out)
    doc["manifest"].pop("duration_s")
    return code, doc


def test_criterion_11_determinism(capsys, record):
    argv = ["check", "--builtin", "example17", "--seed", "7", "--json"]
    code1, a = _report(capsys, argv)
    code2, b = _report(capsys, argv)
    ok = code1 == code2 == 0 and json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    record(_line(11, "deterministic reports", ok, f"two seed-7 runs identical modulo duration: {a == b}"))
    assert ok

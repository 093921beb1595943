"""Empirical probes of uniform stability, settling times and explicit bounds.

All probes run on a finite horizon; "for all t >= t0" is approximated by
``[t0, t0 + horizon]`` and every report says so.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .certify import (FAIL, INCONCLUSIVE, PASS, RESOLUTION_NOTE, PositivePart, Verdict,
                      _jsonable, _witness, decay_residual)
from .integrate import COMPLETED, integrate, path_integral
from .sampling import sphere_directions
from .systems import Example17Params, SystemDef, beta_integral, example17

DEFAULT_HORIZON = 50.0
DELTA_REL_TOL = 1e-3
SMALLEST_RADIUS = 1e-6  # fraction of epsilon tried before declaring delta = 0
HORIZON_NOTE = "'for all t >= t0' checked on the finite horizon [t0, t0 + horizon]"


def _map(fn, items, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _initial_points(n, radius, directions, full_ball):
    dirs = sphere_directions(n, directions)
    if not full_ball:
        return dirs * radius
    shells = np.array([0.25, 0.5, 0.75, 1.0])
    return np.vstack([dirs * radius * s for s in shells])


@dataclass
class DeltaEstimate:
    delta: float
    epsilon: float
    t0: float
    witness: Optional[list] = None  # initial state of an escaping trajectory when delta == 0

    def __float__(self):
        return self.delta


def estimate_delta(system: SystemDef, epsilon: float, t0: float = 0.0,
                   horizon: float = DEFAULT_HORIZON, directions: Optional[int] = None,
                   rel_tol: float = DELTA_REL_TOL, abs_tol_ode: float = 1e-9,
                   rel_tol_ode: float = 1e-9, full_ball: bool = False) -> DeltaEstimate:
    """Largest radius r <= epsilon such that solutions from |x0| = r stay in the epsilon ball.

    Bisection on r; a radius passes when every sampled direction keeps
    sup |x(t)| < epsilon over the horizon.
    """
    if not 0 < epsilon <= system.domain_radius:
        raise ValueError(f"require 0 < epsilon <= domain_radius, got {epsilon}")
    unit = _initial_points(system.n, 1.0, directions, full_ball)
    order = list(range(len(unit)))

    def escapes(r):
        for pos, k in enumerate(order):
            traj = integrate(system, unit[k] * r, t0, t0 + horizon, abs_tol_ode, rel_tol_ode,
                             exit_radius=epsilon)
            if traj.status != COMPLETED:
                # try the escaping direction first next time
                order.insert(0, order.pop(pos))
                return (unit[k] * r).tolist()
        return None

    if escapes(epsilon) is None:
        return DeltaEstimate(float(epsilon), epsilon, t0)
    lo = SMALLEST_RADIUS * epsilon
    witness = escapes(lo)
    if witness is not None:
        return DeltaEstimate(0.0, epsilon, t0, witness)
    hi = float(epsilon)
    while hi - lo > rel_tol * lo:
        mid = 0.5 * (lo + hi)
        if escapes(mid) is None:
            lo = mid
        else:
            hi = mid
    return DeltaEstimate(lo, epsilon, t0)


@dataclass
class StabilityReport:
    epsilons: list
    t0s: list
    delta: np.ndarray                     # shape (len(epsilons), len(t0s))
    horizon: float
    directions: int
    witnesses: dict = field(default_factory=dict)
    settling: list = field(default_factory=list)   # rows (eta, c, t0, T or None)
    notes: list = field(default_factory=list)

    @property
    def uniform_delta(self) -> np.ndarray:
        return self.delta.min(axis=1)

    @property
    def spread(self) -> np.ndarray:
        lo = self.delta.min(axis=1)
        hi = self.delta.max(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(lo > 0, (hi - lo) / np.where(lo > 0, lo, 1.0), np.inf)

    @property
    def uniformly_stable(self) -> bool:
        return bool(np.all(self.uniform_delta > 0))

    @property
    def monotone_in_epsilon(self) -> bool:
        return bool(np.all(np.diff(self.delta, axis=0) >= 0)) if len(self.epsilons) > 1 else True

    def summary(self) -> dict:
        return _jsonable({
            "verdict": "uniformly stable (empirical)" if self.uniformly_stable
            else "not uniformly stable (empirical)",
            "epsilon": self.epsilons,
            "t0": self.t0s,
            "uniform_delta": self.uniform_delta,
            "spread": [s if math.isfinite(s) else None for s in self.spread],
            "delta_nondecreasing_in_epsilon": self.monotone_in_epsilon,
            "horizon": self.horizon,
            "directions": self.directions,
            "escape_witnesses": {f"{e!r},{t!r}": w for (e, t), w in self.witnesses.items()},
            "notes": self.notes,
        })

    def write(self, directory):
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "delta_table.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epsilon", "t0", "delta"])
            for i, eps in enumerate(self.epsilons):
                for j, t0 in enumerate(self.t0s):
                    w.writerow([repr(float(eps)), repr(float(t0)), repr(float(self.delta[i, j]))])
        with open(os.path.join(directory, "delta_curve.dat"), "w", encoding="utf-8") as fh:
            fh.write("# epsilon uniform_delta " + " ".join(f"delta_t0={t!r}" for t in self.t0s) + "\n")
            for i, eps in enumerate(self.epsilons):
                row = [eps, self.uniform_delta[i], *self.delta[i]]
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        if self.settling:
            write_settling_table(os.path.join(directory, "settling_table.csv"), self.settling)
        with open(os.path.join(directory, "summary.json"), "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def uniformity_report(system: SystemDef, epsilons, t0s, horizon: float = DEFAULT_HORIZON,
                      directions: Optional[int] = None, workers: int = 1,
                      full_ball: bool = False) -> StabilityReport:
    """delta(epsilon, t0) table; uniform delta(epsilon) is the minimum over t0."""
    epsilons = [float(e) for e in epsilons]
    t0s = [float(t) for t in t0s]
    if not epsilons or not t0s:
        raise ValueError("epsilon and t0 grids must be non-empty")
    cells = [(e, t) for e in epsilons for t in t0s]
    results = _map(lambda c: estimate_delta(system, c[0], c[1], horizon, directions,
                                            full_ball=full_ball), cells, workers)
    delta = np.array([r.delta for r in results]).reshape(len(epsilons), len(t0s))
    witnesses = {(r.epsilon, r.t0): r.witness for r in results if r.witness is not None}
    notes = [HORIZON_NOTE,
             "delta probed on sphere directions"
             + (" and interior shells" if full_ball else " (boundary heuristic)"),
             "growth of delta as epsilon -> infinity is out of empirical reach on a bounded "
             "domain; only growth up to the domain radius is probed"]
    report = StabilityReport(epsilons, t0s, delta, horizon,
                             len(sphere_directions(system.n, directions)), witnesses, notes=notes)
    if not report.monotone_in_epsilon:
        report.notes.append("warning: delta estimate decreased with epsilon somewhere in the grid")
    return report


@dataclass
class SettlingResult:
    eta: float
    c: float
    t0: float
    T: Optional[float]         # None when not attained within the horizon
    worst_x0: Optional[list] = None

    @property
    def attained(self) -> bool:
        return self.T is not None


def _settle_one(system, x0, t0, eta, horizon, abs_tol, rel_tol):
    traj = integrate(system, x0, t0, t0 + horizon, abs_tol, rel_tol, stop_on_exit=False)
    if traj.status == "blow_up":
        return None
    grid = traj.dense_grid(16)
    norms = np.linalg.norm(traj.sample_many(grid), axis=1)
    if norms[-1] >= eta:
        return None
    above = np.nonzero(norms >= eta)[0]
    if above.size == 0:
        return 0.0
    lo, hi = grid[above[-1]], grid[above[-1] + 1]
    while hi - lo > 1e-9:
        mid = 0.5 * (lo + hi)
        if np.linalg.norm(traj.sample(mid)) >= eta:
            lo = mid
        else:
            hi = mid
    return hi - t0


def settling_time(system: SystemDef, eta: float, c: float, t0s, directions: Optional[int] = None,
                  horizon: float = DEFAULT_HORIZON, abs_tol: float = 1e-10, rel_tol: float = 1e-10,
                  full_ball: bool = False, workers: int = 1) -> list:
    """Smallest T with |x(t)| < eta on [t0 + T, t0 + horizon], maximized over sampled |x0| < c."""
    if not 0 < eta < c <= system.domain_radius:
        raise ValueError(f"require 0 < eta < c <= domain_radius, got eta={eta}, c={c}")
    starts = _initial_points(system.n, c * (1 - 1e-6), directions, full_ball)

    def per_t0(t0):
        worst, worst_x0 = 0.0, None
        for x0 in starts:
            T = _settle_one(system, x0, t0, eta, horizon, abs_tol, rel_tol)
            if T is None:
                return SettlingResult(eta, c, t0, None, x0.tolist())
            if worst_x0 is None or T > worst:
                worst, worst_x0 = T, x0.tolist()
        return SettlingResult(eta, c, t0, worst, worst_x0)

    return _map(per_t0, [float(t) for t in t0s], workers)


def write_settling_table(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eta", "c", "t0", "T"])
        for r in rows:
            w.writerow([repr(r.eta), repr(r.c), repr(r.t0),
                        "not attained" if r.T is None else repr(float(r.T))])


def example17_bounds_check(params: Example17Params, initial_set, T_max: float = 50.0,
                           abs_tol: float = 1e-10, rel_tol: float = 1e-10,
                           residual_tol: float = 1e-9, workers: int = 1) -> Verdict:
    """Trajectory bound, integral budget and zero dissipation residual along solutions.

    For x_i' = beta(t) x_i / (1 + h(x_i)) with M1 = integral of beta:
    (a) |x(t)|^2 <= |x0|^2 e^{2 M1}; (b) integral of max(W*, 0) <= M1 |x0|^2 e^{2 M1};
    (c) V' - max(W*, 0) = 0 pointwise, for V = |x|^2 / 2.
    """
    M1 = params.M1
    growth = math.exp(2 * M1)
    initial_set = [(float(t0), np.asarray(x0, float)) for t0, x0 in initial_set]
    reach = max([np.linalg.norm(x0) for _, x0 in initial_set] + [0.0]) * math.exp(M1)
    system, cert, _ = example17(params.n, params.beta, params.h, M1,
                                domain_radius=max(3.0, 2.0 * reach))
    positive = PositivePart(cert.Wstar)
    slack = 1 + 1e-6

    def one(item):
        t0, x0 = item
        r0 = float(np.dot(x0, x0))
        rec = {"t0": t0, "x0": x0.tolist()}
        traj = integrate(system, x0, t0, T_max, abs_tol, rel_tol)
        if traj.status != COMPLETED:
            rec.update(status=INCONCLUSIVE, trajectory_status=traj.status)
            return rec
        grid = traj.dense_grid(16)
        X = traj.sample_many(grid)
        sq = np.einsum("mn,mn->m", X, X)
        k = int(np.argmax(sq))
        bound_a = r0 * growth
        used, err = path_integral(traj, positive)
        tail = r0 * growth * beta_integral(params.beta, max(T_max, t0))[0]
        budget = M1 * r0 * growth
        residual = np.abs(decay_residual(cert, system, grid, X))
        j = int(np.argmax(residual))
        rec.update(
            sup_norm=math.sqrt(sq[k]), bound_norm=math.sqrt(bound_a),
            integral=used, quad_error=err, tail=tail, budget=budget,
            max_residual=float(residual[j]),
            ok_a=bool(sq[k] <= bound_a * slack),
            ok_b=bool(used + err + tail <= budget * slack),
            ok_c=bool(residual[j] <= residual_tol),
        )
        rec["status"] = PASS if rec["ok_a"] and rec["ok_b"] and rec["ok_c"] else FAIL
        if not rec["ok_a"]:
            rec["witness"] = _witness(grid[k], X[k], sq[k], bound_a * slack, "|x(t)|^2 <= |x0|^2 e^{2 M1}")
        elif not rec["ok_b"]:
            rec["witness"] = _witness(t0, x0, used + err + tail, budget * slack,
                                      "integral of max(W*, 0) <= M1 |x0|^2 e^{2 M1}")
        elif not rec["ok_c"]:
            rec["witness"] = _witness(grid[j], X[j], residual[j], residual_tol,
                                      "|V' - max(W*, 0)| <= tol")
        return rec

    records = _map(one, initial_set, workers)
    statuses = [r["status"] for r in records]
    if FAIL in statuses:
        status = FAIL
    elif all(s == PASS for s in statuses):
        status = PASS
    else:
        status = INCONCLUSIVE
    witness = next((r["witness"] for r in records if "witness" in r), None)
    ratios = [r["sup_norm"] / r["bound_norm"] for r in records if r.get("bound_norm")]
    return Verdict(status, "example17_bounds", witness,
                   None, None, len(records), [HORIZON_NOTE, RESOLUTION_NOTE],
                   {"M1": M1, "runs": records,
                    "max_norm_ratio": max(ratios) if ratios else None,
                    "max_quad_error": max((r.get("quad_error", 0.0) for r in records), default=0.0),
                    "max_residual": max((r.get("max_residual", 0.0) for r in records), default=0.0)})

"""Sampling-based falsification of generalized Lyapunov certificate conditions.

A ``pass`` verdict means no counterexample was found at the sampled
resolution; it is not a proof. ``fail`` verdicts always carry a concrete
witness that reproduces the violation when re-evaluated.

Conditions checked, for a pair (V, W*) with comparison functions V1, V2, V3:

* sandwich:   V1(x) <= V(t, x) <= V2(x), V1 and V2 positive definite
* decay:      dV/dt + grad V . f - max(W*, 0) <= 0      (uniform stability)
              dV/dt + grad V . f - max(W*, 0) <= -V3(x)  (uniform asymptotic)
* budget:     integral of max(W*(t, x(t)), 0) along solutions <= M(x0)

and, for an auxiliary function W with V' <= V*(x) <= 0, the definiteness of
W' near the zero set of V*, the construction W* = |W'| on that set, and the
dwell-time and entry-count bounds for trajectories crossing it.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .integrate import COMPLETED, Predicate, detect_dwells, integrate, path_integral
from .quadrature import QuadratureError
from .expr import ExprDomainError
from .sampling import SamplingPlan, ball_points, sobol, sphere_directions
from .systems import Certificate, ConfigError, MatrosovData, SystemDef

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"
FAIL_TOL = 1e-12
ZERO_TOL = 1e-8
RESOLUTION_NOTE = "pass means no counterexample at the sampled resolution, not a proof"


@dataclass
class Verdict:
    status: str
    check: str = ""
    witness: Optional[dict] = None
    margin_min: Optional[float] = None
    margin_mean: Optional[float] = None
    samples_used: int = 0
    notes: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def to_json(self) -> dict:
        return {
            "check": self.check,
            "status": self.status,
            "witness": self.witness,
            "margin_min": _num(self.margin_min),
            "margin_mean": _num(self.margin_mean),
            "samples": self.samples_used,
            "notes": list(self.notes),
            "details": _jsonable(self.details),
        }


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else repr(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def combine(verdicts, check: str = "") -> Verdict:
    """Fail if any fails, pass if all pass, inconclusive otherwise."""
    verdicts = list(verdicts)
    statuses = [v.status for v in verdicts]
    if FAIL in statuses:
        status = FAIL
    elif statuses and all(s == PASS for s in statuses):
        status = PASS
    else:
        status = INCONCLUSIVE
    witness = next((v.witness for v in verdicts if v.status == status and v.witness), None)
    margins = [v.margin_min for v in verdicts if v.margin_min is not None]
    return Verdict(status, check, witness, min(margins) if margins else None,
                   None, sum(v.samples_used for v in verdicts),
                   [n for v in verdicts for n in v.notes])


# --- derived scalar fields ------------------------------------------------


class PositivePart:
    """max(g, 0) for any scalar field g."""

    def __init__(self, g):
        self.g = g
        self.uses_time = getattr(g, "uses_time", True)

    def evaluate_many(self, t, X):
        return np.maximum(np.asarray(self.g.evaluate_many(t, X), float), 0.0)

    def evaluate(self, t, x):
        return max(self.g.evaluate(t, x), 0.0)

    def __str__(self):
        return f"max({self.g}, 0)"


class LieDerivative:
    """Derivative of W along solutions: dW/dt + grad W . f(t, x)."""

    uses_time = True

    def __init__(self, W, system: SystemDef):
        self.W = W
        self.system = system

    def evaluate_many(self, t, X):
        X = np.asarray(X, float).reshape(-1, self.system.n)
        t = np.broadcast_to(np.asarray(t, float), (X.shape[0],))
        _, dt, dX = self.W.gradient_many(t, X)
        return dt + np.einsum("mn,mn->m", dX, self.system.rhs_many(t, X))

    def evaluate(self, t, x):
        return float(self.evaluate_many(np.array([float(t)]), np.asarray(x, float).reshape(1, -1))[0])

    def __str__(self):
        return f"d/dt[{self.W}]"


class AbsField:
    def __init__(self, g):
        self.g = g
        self.uses_time = getattr(g, "uses_time", True)

    def evaluate_many(self, t, X):
        return np.abs(self.g.evaluate_many(t, X))

    def evaluate(self, t, x):
        return abs(self.g.evaluate(t, x))

    def __str__(self):
        return f"|{self.g}|"


def orbital_derivative(V, system: SystemDef, t, X):
    """V' = dV/dt + grad V . f at a batch of points."""
    _, dt, dX = V.gradient_many(t, X)
    return dt + np.einsum("mn,mn->m", dX, system.rhs_many(t, X))


# --- falsification core ---------------------------------------------------


def _falsify(check, lhs, rhs, t, X, label, notes=(), strict=False):
    """Verdict for ``lhs <= rhs`` (``lhs < rhs`` when strict) over samples.

    The witness is the worst violation; ties resolve to the earliest sample,
    so verdicts are independent of how the work was partitioned.
    """
    lhs = np.asarray(lhs, float)
    rhs = np.asarray(rhs, float)
    slack = rhs - lhs
    finite = np.isfinite(slack)
    scale = np.maximum(1.0, np.maximum(np.abs(lhs), np.abs(rhs)))
    if strict:
        violated = finite & (slack <= 0)
    else:
        violated = finite & (slack < -FAIL_TOL * scale)
    notes = list(notes) + [RESOLUTION_NOTE]
    margin_min = float(np.min(slack[finite])) if np.any(finite) else None
    margin_mean = float(np.mean(slack[finite])) if np.any(finite) else None
    if np.any(violated):
        score = np.where(violated, slack, np.inf)
        i = int(np.argmin(score))
        return Verdict(FAIL, check, _witness(t[i], X[i], lhs[i], rhs[i], label),
                       margin_min, margin_mean, len(slack), notes)
    if not np.all(finite):
        i = int(np.argmax(~finite))
        return Verdict(INCONCLUSIVE, check, _witness(t[i], X[i], lhs[i], rhs[i], label),
                       margin_min, margin_mean, len(slack),
                       notes + ["evaluation produced a non-finite value at the witness point"])
    return Verdict(PASS, check, None, margin_min, margin_mean, len(slack), notes)


def _witness(t, x, lhs, rhs, label):
    return {"t": float(t), "x": [float(v) for v in np.atleast_1d(x)],
            "lhs": _num(lhs), "rhs": _num(rhs), "inequality": label}


def _diagnose(verdict, fields, t, x):
    """Attach the offending subexpression for non-finite inconclusive verdicts."""
    if verdict.status != INCONCLUSIVE or verdict.witness is None:
        return verdict
    for g in fields:
        if g is None or not hasattr(g, "evaluate"):
            continue
        try:
            g.evaluate(t, x)
        except ExprDomainError as exc:
            verdict.notes.append(f"domain error: {exc}")
            break
    return verdict


def _positive_definite(check, g, name, t, X, n):
    values = g.evaluate_many(t, X)
    v = _falsify(check, np.zeros_like(values), values, t, X, f"{name}(x) > 0", strict=True)
    at_zero = float(g.evaluate(0.0, np.zeros(n)))
    if v.status != FAIL and not abs(at_zero) <= FAIL_TOL:
        v = Verdict(FAIL, check, _witness(0.0, np.zeros(n), at_zero, 0.0, f"{name}(0) = 0"),
                    v.margin_min, v.margin_mean, v.samples_used, v.notes)
    return v


def check_sandwich(cert: Certificate, system: SystemDef, plan: SamplingPlan = SamplingPlan()) -> Verdict:
    """V1(x) <= V(t, x) <= V2(x) with V1, V2 positive definite, over sampled (t, x)."""
    n = system.n
    t, X = plan.points(n, system.domain_radius)
    v1 = cert.V1.evaluate_many(t, X)
    v = cert.V.evaluate_many(t, X)
    v2 = cert.V2.evaluate_many(t, X)
    lower = _falsify("sandwich", v1, v, t, X, "V1(x) <= V(t,x)")
    upper = _falsify("sandwich", v, v2, t, X, "V(t,x) <= V2(x)")
    pd1 = _positive_definite("sandwich", cert.V1, "V1", t, X, n)
    pd2 = _positive_definite("sandwich", cert.V2, "V2", t, X, n)
    verdict = combine([lower, upper, pd1, pd2], "sandwich")
    slack = np.minimum(v - v1, v2 - v)
    finite = np.isfinite(slack)
    if np.any(finite):
        verdict.margin_min = float(np.min(slack[finite]))
        verdict.margin_mean = float(np.mean(slack[finite]))
    verdict.samples_used = len(t)
    verdict.notes = sorted(set(verdict.notes))
    if verdict.witness:
        _diagnose(verdict, [cert.V1, cert.V, cert.V2], verdict.witness["t"], verdict.witness["x"])
    return verdict


def decay_residual(cert: Certificate, system: SystemDef, t, X):
    """V' - max(W*, 0) at a batch of points."""
    return orbital_derivative(cert.V, system, t, X) - np.maximum(cert.Wstar.evaluate_many(t, X), 0.0)


def check_decay(cert: Certificate, system: SystemDef, plan: SamplingPlan = SamplingPlan(),
                mode: Optional[str] = None) -> Verdict:
    """Dissipation inequality, non-strict (uniform) or with -V3 (asymptotic, global)."""
    mode = mode or cert.mode
    t, X = plan.points(system.n, system.domain_radius)
    lhs = decay_residual(cert, system, t, X)
    if mode == "uniform":
        rhs = np.zeros_like(lhs)
        label = "dV/dt + grad V . f - max(W*, 0) <= 0"
        parts = [_falsify("decay", lhs, rhs, t, X, label)]
    else:
        if cert.V3 is None:
            raise ConfigError(f"mode {mode!r} needs V3 in the certificate")
        rhs = -np.asarray(cert.V3.evaluate_many(t, X), float)
        label = "dV/dt + grad V . f - max(W*, 0) <= -V3(x)"
        parts = [_falsify("decay", lhs, rhs, t, X, label),
                 _positive_definite("decay", cert.V3, "V3", t, X, system.n)]
    verdict = combine(parts, "decay")
    main = parts[0]
    verdict.margin_min, verdict.margin_mean = main.margin_min, main.margin_mean
    verdict.samples_used = len(t)
    verdict.notes = sorted(set(verdict.notes))
    verdict.details["mode"] = mode
    if verdict.witness:
        _diagnose(verdict, [cert.V, cert.Wstar, cert.V3, *system.f],
                  verdict.witness["t"], verdict.witness["x"])
    return verdict


def check_radial_unboundedness(cert: Certificate, system: SystemDef, directions: int = 64,
                               decades: int = 6) -> Verdict:
    """V1 along rays at radii R * 10^k must grow without bound (probed, not proved)."""
    n = system.n
    dirs = sphere_directions(n, max(directions, 2) if n > 1 else None)
    radii = system.domain_radius * 10.0 ** np.arange(decades + 1)
    mins = []
    for r in radii:
        vals = cert.V1.evaluate_many(0.0, dirs * r)
        mins.append(float(np.min(vals)) if np.all(np.isfinite(vals)) else math.nan)
    mins = np.array(mins)
    ok = np.all(np.isfinite(mins)) and np.all(np.diff(mins) > 0) and mins[-1] > 1e3 * max(mins[0], 1e-300)
    notes = ["domain is modeled as a ball; growth of V1 probed along rays beyond it"]
    if ok:
        return Verdict(PASS, "radial_unboundedness", None, float(mins[-1]), None, mins.size * len(dirs),
                       notes, {"radii": radii, "min_V1": mins})
    k = int(np.argmin(np.diff(mins))) + 1 if mins.size > 1 else 0
    return Verdict(FAIL, "radial_unboundedness",
                   _witness(0.0, dirs[0] * radii[k], mins[k], mins[k - 1] if k else 0.0,
                            "min V1 over |x| = r increases without bound"),
                   None, None, mins.size * len(dirs), notes, {"radii": radii, "min_V1": mins})


def _map(fn, items, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def initial_set(system: SystemDef, count: int = 16, radius_fraction: float = 0.25,
                t0_max: float = 5.0, seed: int = 0):
    """Deterministic (t0, x0) pairs in ``[0, t0_max] x`` ball(radius_fraction * R)."""
    u = sobol(system.n + 2, count, seed + 1)
    X = ball_points(system.n, count, radius_fraction * system.domain_radius, u=u[:, 1:])
    return [(float(t0), x0) for t0, x0 in zip(u[:, 0] * t0_max, X)]


def check_integral_budget(cert: Certificate, system: SystemDef, init_set, T_max: float = 50.0,
                          abs_tol: float = 1e-10, rel_tol: float = 1e-10,
                          workers: int = 1) -> Verdict:
    """Integral of max(W*, 0) along each solution on [t0, T_max] (+ tail bound) <= M(x0)."""
    positive = PositivePart(cert.Wstar)
    budget_expr = cert.M

    def one(item):
        t0, x0 = item
        x0 = np.asarray(x0, float)
        if np.linalg.norm(x0) > system.domain_radius:
            raise ValueError(f"|x0| exceeds domain radius: {x0.tolist()}")
        budget = float(budget_expr.evaluate(0.0, x0)) if budget_expr is not None else math.inf
        record = {"t0": t0, "x0": x0.tolist(), "budget": budget}
        if t0 < T_max:
            traj = integrate(system, x0, t0, T_max, abs_tol, rel_tol)
            record["trajectory_status"] = traj.status
            if traj.status != COMPLETED:
                record["status"] = INCONCLUSIVE
                return record
            try:
                used, err = path_integral(traj, positive)
            except (ExprDomainError, QuadratureError) as exc:
                record.update(status=INCONCLUSIVE, error=str(exc))
                return record
        else:
            used, err = 0.0, 0.0
        tail = cert.tail(x0, t0, T_max) if cert.tail is not None else None
        total = used + err + (tail or 0.0)
        record.update(used=used, quad_error=err, tail=tail, total=total,
                      ratio=(total / budget) if budget > 0 else (0.0 if total == 0 else math.inf),
                      status=PASS if total <= budget else FAIL)
        return record

    records = _map(one, list(init_set), workers)
    notes = ["integral taken over [t0, T_max] from each initial time"]
    if cert.tail is None:
        notes.append(f"no tail bound available: integral truncated at T_max = {T_max}")
    statuses = [r["status"] for r in records]
    margins = [r["budget"] - r["total"] for r in records if "total" in r]
    ratios = [r["ratio"] for r in records if "ratio" in r]
    worst = max(ratios) if ratios else None
    details = {"worst_ratio": worst, "runs": records,
               "inconclusive_runs": statuses.count(INCONCLUSIVE)}
    witness = None
    if FAIL in statuses:
        status = FAIL
        bad = max((r for r in records if r["status"] == FAIL), key=lambda r: r["ratio"])
        witness = _witness(bad["t0"], bad["x0"], bad["total"], bad["budget"],
                           "integral of max(W*, 0) <= M(x0)")
    elif statuses and all(s == PASS for s in statuses):
        status = PASS
    else:
        status = INCONCLUSIVE
        notes.append("trajectories that blew up or left the domain are inconclusive, not failures")
    return Verdict(status, "integral_budget", witness,
                   min(margins) if margins else None,
                   float(np.mean(margins)) if margins else None,
                   len(records), notes + [RESOLUTION_NOTE], details)


# --- Matrosov-type construction --------------------------------------------


class ZeroSetDistance:
    """Approximate distance to ``{x : |V*(x)| <= zero_tol}`` inside a ball.

    Sample points are projected onto the zero set by Newton steps along
    grad V*; queries take the nearest projected point and refine it by
    coordinate descent with re-projection.
    """

    def __init__(self, Vstar, n: int, radius: float, zero_tol: float = ZERO_TOL,
                 count: int = 8192, seed: int = 0):
        self.Vstar = Vstar
        self.n = n
        self.zero_tol = zero_tol
        cloud = self.project(ball_points(n, count, radius, seed=seed))
        self.cloud = cloud
        self.tree = cKDTree(cloud) if len(cloud) else None

    def project(self, Y):
        Y = self._project_rows(np.asarray(Y, float))
        return Y[np.all(np.isfinite(Y), axis=1)]

    def __call__(self, X, sweeps: int = 12):
        X = np.asarray(X, float).reshape(-1, self.n)
        if self.tree is None:
            return np.full(len(X), np.inf)
        dist, idx = self.tree.query(X)
        Y = self.cloud[idx].copy()
        step = np.full(len(X), max(float(np.max(dist)) if len(dist) else 0.0, 1e-3))
        for _ in range(sweeps):
            for i in range(self.n):
                for sign in (1.0, -1.0):
                    trial = Y.copy()
                    trial[:, i] += sign * step
                    proj = self._project_rows(trial)
                    ok = np.all(np.isfinite(proj), axis=1)
                    d_new = np.where(ok, np.linalg.norm(X - np.where(ok[:, None], proj, 0.0), axis=1), np.inf)
                    better = d_new < dist
                    Y[better] = proj[better]
                    dist = np.where(better, d_new, dist)
            step = step / 2
        return dist

    def _project_rows(self, Y, iterations: int = 80):
        """Newton steps towards the zero set; rows that do not converge become NaN."""
        t = np.zeros(len(Y))
        for _ in range(iterations):
            val, _, grad = self.Vstar.gradient_many(t, Y)
            done = np.abs(val) <= self.zero_tol
            if np.all(done):
                break
            g2 = np.einsum("mn,mn->m", grad, grad)
            step = np.where(done | (g2 == 0), 0.0, val / np.where(g2 == 0, 1.0, g2))
            Y = Y - step[:, None] * grad
        val = self.Vstar.evaluate_many(t, Y)
        return np.where((np.abs(val) <= self.zero_tol)[:, None], Y, np.nan)


def zero_set_distance(md: MatrosovData, system: SystemDef, zero_tol: float = ZERO_TOL):
    if md.distance is not None:
        return md.distance
    return ZeroSetDistance(md.Vstar, system.n, system.domain_radius, zero_tol)


def probe_region(md: MatrosovData, distance) -> Predicate:
    """alpha < |x| < A and dist(x, zero set of V*) < r1."""
    near = Predicate(lambda t, X: distance(X) < md.r1, f"dist(x, E) < {md.r1}")
    return Predicate.norm_between(md.alpha, md.A) & near


@dataclass
class DefinitenessEstimate:
    xi_hat: float
    r1: float
    alpha: float
    A: float
    min_point: Optional[tuple]  # (t, x)
    status: str = PASS
    samples_used: int = 0
    notes: list = field(default_factory=list)

    def to_json(self):
        return _jsonable({"xi_hat": self.xi_hat, "r1": self.r1, "alpha": self.alpha, "A": self.A,
                          "min_point": None if self.min_point is None else
                          {"t": self.min_point[0], "x": list(self.min_point[1])},
                          "status": self.status, "samples": self.samples_used,
                          "notes": self.notes})


def _probe_points(md, system, distance, plan, zero_tol):
    """Points of the probe set: zero-set points shifted by offsets of size < r1."""
    n = system.n
    finder = distance if isinstance(distance, ZeroSetDistance) else \
        ZeroSetDistance(md.Vstar, n, min(md.A + md.r1, system.domain_radius) * 1.0,
                        zero_tol, count=4096, seed=plan.seed)
    base = finder.cloud
    norms = np.linalg.norm(base, axis=1)
    base = base[(norms > md.alpha - md.r1) & (norms < md.A + md.r1)]
    if len(base) == 0:
        return np.zeros(0), np.zeros((0, n))
    u = sobol(n + 2, plan.samples, plan.seed + 7)
    offsets = ball_points(n, plan.samples, md.r1, u=u[:, 1:])
    pick = np.minimum((u[:, 0] * len(base)).astype(int), len(base) - 1)
    X = base[pick] + offsets
    t = sobol(1, plan.samples, plan.seed + 11)[:, 0] * plan.t_max
    inside = probe_region(md, distance)(t, X)
    return t[inside], X[inside]


def matrosov_definiteness(md: MatrosovData, system: SystemDef,
                          plan: SamplingPlan = SamplingPlan(samples=32768),
                          zero_tol: float = ZERO_TOL) -> DefinitenessEstimate:
    """Estimate xi = inf |W'| over the probe set (minimized over t as well)."""
    if not 0 < md.alpha < md.A:
        raise ConfigError(f"require 0 < alpha < A, got alpha={md.alpha}, A={md.A}")
    distance = zero_set_distance(md, system, zero_tol)
    t, X = _probe_points(md, system, distance, plan, zero_tol)
    if len(t) == 0:
        return DefinitenessEstimate(0.0, md.r1, md.alpha, md.A, None, INCONCLUSIVE, 0,
                                    ["probe set empty under sampling"])
    wdot = np.abs(LieDerivative(md.W, system).evaluate_many(t, X))
    finite = np.isfinite(wdot)
    if not np.all(finite):
        i = int(np.argmax(~finite))
        return DefinitenessEstimate(0.0, md.r1, md.alpha, md.A, (float(t[i]), X[i].tolist()),
                                    INCONCLUSIVE, len(t), ["W' not finite at a probe point"])
    i = int(np.argmin(wdot))
    xi_hat = float(wdot[i])
    r1 = md.r1
    notes = [RESOLUTION_NOTE]
    if md.xi is not None:
        below = wdot < md.xi
        if np.any(below):
            r1 = min(r1, float(np.min(distance(X[below]))))
            notes.append(f"|W'| >= xi={md.xi} holds only for dist < {r1!r}")
    status = PASS if xi_hat > FAIL_TOL else FAIL
    if status == FAIL:
        notes.append("W' vanishes in the probe set: not definitely nonzero")
    return DefinitenessEstimate(xi_hat, r1, md.alpha, md.A, (float(t[i]), X[i].tolist()),
                                status, len(t), notes)


class MatrosovWstar:
    """W*(t, x) = |W'(t, x)| where |V*(x)| <= zero_tol, else 0."""

    uses_time = True

    def __init__(self, md: MatrosovData, system: SystemDef, zero_tol: float = ZERO_TOL):
        self.Vstar = md.Vstar
        self.wdot = LieDerivative(md.W, system)
        self.zero_tol = zero_tol

    def evaluate_many(self, t, X):
        X = np.asarray(X, float)
        t = np.broadcast_to(np.asarray(t, float), (X.shape[0],))
        out = np.zeros(X.shape[0])
        on = np.abs(self.Vstar.evaluate_many(t, X)) <= self.zero_tol
        if np.any(on):
            out[on] = np.abs(self.wdot.evaluate_many(t[on], X[on]))
        return out

    def evaluate(self, t, x):
        return float(self.evaluate_many(np.array([float(t)]), np.asarray(x, float).reshape(1, -1))[0])

    def __str__(self):
        return f"|{self.wdot}| on |{self.Vstar}| <= {self.zero_tol}, else 0"


class MatrosovV3:
    """V3(x) = -V*(x) off the zero set; on it, min(xi, min_t |W'(t, x)| / 2).

    The time minimum runs over a fixed grid, freezing the time dependence of
    |W'| so that V3 depends on x only.
    """

    uses_time = False

    def __init__(self, md: MatrosovData, system: SystemDef, xi: float, times,
                 zero_tol: float = ZERO_TOL):
        self.Vstar = md.Vstar
        self.wdot = LieDerivative(md.W, system)
        self.xi = xi
        self.times = np.asarray(times, float)
        self.zero_tol = zero_tol

    def evaluate_many(self, t, X):
        X = np.asarray(X, float)
        vstar = self.Vstar.evaluate_many(0.0, X)
        out = -vstar
        on = np.abs(vstar) <= self.zero_tol
        if np.any(on):
            Xon = X[on]
            T = np.repeat(self.times[None, :], len(Xon), axis=0).ravel()
            Xrep = np.repeat(Xon, len(self.times), axis=0)
            w = np.abs(self.wdot.evaluate_many(T, Xrep)).reshape(len(Xon), len(self.times))
            out[on] = np.minimum(self.xi, 0.5 * w.min(axis=1))
        return out

    def evaluate(self, t, x):
        return float(self.evaluate_many(np.array([float(t)]), np.asarray(x, float).reshape(1, -1))[0])

    def __str__(self):
        return f"-({self.Vstar}) off its zero set, min(xi, |W'|/2) on it"


def matrosov_construct(md: MatrosovData, cert: Certificate, system: SystemDef,
                       xi: Optional[float] = None, zero_tol: float = ZERO_TOL,
                       times=None, budget=None) -> Certificate:
    """Certificate with W* = |W'| on the zero set of V* and V3 built from V* and xi.

    V, V1, V2 (and M unless ``budget`` is given) are carried over from ``cert``.
    """
    xi = md.xi if xi is None else xi
    if xi is None or not xi > 0:
        raise ValueError("a positive definiteness bound xi is required")
    times = np.linspace(0.0, 100.0, 101) if times is None else times
    return Certificate(cert.V, MatrosovWstar(md, system, zero_tol), cert.V1, cert.V2,
                       MatrosovV3(md, system, xi, times, zero_tol),
                       budget if budget is not None else cert.M,
                       "uniform-asymptotic", None, f"{cert.label} (constructed)")


def matrosov_bundle(md: MatrosovData, system: SystemDef, count: int = 8,
                    horizon: float = 40.0, t0_max: float = 2 * math.pi,
                    zero_tol: float = ZERO_TOL, seed: int = 0):
    """Initial conditions on the zero set of V* inside the annulus alpha < |x| < A."""
    finder = ZeroSetDistance(md.Vstar, system.n, md.A, zero_tol, count=4096, seed=seed)
    norms = np.linalg.norm(finder.cloud, axis=1)
    pts = finder.cloud[(norms > md.alpha) & (norms < md.A)]
    if len(pts) == 0:
        return []
    order = np.argsort(np.arctan2(pts[:, -1], pts[:, 0]) if system.n > 1 else pts[:, 0], kind="stable")
    pts = pts[order][np.linspace(0, len(pts) - 1, min(count, len(pts))).astype(int)]
    t0s = np.linspace(0.0, t0_max, len(pts), endpoint=False)
    return [(float(t0), float(t0) + horizon, x0) for t0, x0 in zip(t0s, pts)]


def dwell_bound_check(md: MatrosovData, system: SystemDef, V, trajectories, xi: float,
                      distance=None, zero_tol: float = ZERO_TOL, workers: int = 1) -> Verdict:
    """Dwell lengths in the probe set <= 2L/xi, finite entry count, integral <= N * 2L.

    L is the measured sup of |W| inside the probe set along each trajectory.
    The entry-count bound uses the smallest measured V drop between
    consecutive entries; the decrement formula xi r1 / (2 X sqrt(n)) is
    reported with X the measured sup |f| inside the probe set.
    """
    if not xi > 0:
        raise ValueError(f"xi must be > 0, got {xi}")
    distance = distance or zero_set_distance(md, system, zero_tol)
    region = probe_region(md, distance)
    wdot_abs = AbsField(LieDerivative(md.W, system))

    def one(traj):
        dwells = detect_dwells(traj, region, integrand=wdot_abs)
        N = len(dwells)
        rec = {"t0": traj.t0, "x0": traj.x0.tolist(), "tf": traj.tf, "status": traj.status,
               "N": N, "lengths": dwells.lengths, "intervals": dwells.intervals}
        if N == 0:
            rec.update(L=0.0, bound=None, ok_length=True, ok_count=True, ok_integral=True)
            return rec
        grid = traj.dense_grid(16)
        pts = traj.sample_many(grid)
        inside = region(grid, pts)
        ends = np.array([e for iv in dwells.intervals for e in iv])
        tt = np.concatenate([grid[inside], ends])
        XX = np.vstack([pts[inside], traj.sample_many(ends)])
        L = float(np.max(np.abs(md.W.evaluate_many(tt, XX))))
        X_hat = float(np.max(np.linalg.norm(system.rhs_many(tt, XX), axis=1)))
        bound = 2 * L / xi
        lengths = np.array(dwells.lengths)
        entries = [a for a, _ in dwells.intervals]
        v_entry = V.evaluate_many(np.array(entries), traj.sample_many(entries))
        drops = -np.diff(v_entry)
        a_hat = float(np.min(drops)) if drops.size else None
        v0 = float(V.evaluate(traj.t0, traj.x0))
        if a_hat is None:
            count_cap = 1
        elif a_hat > 0:
            count_cap = math.ceil(v0 / a_hat)
        else:
            count_cap = None
        total = sum(i.value for i in dwells.integrals)
        rec.update(
            L=L, bound=bound, max_length=float(lengths.max()), X_hat=X_hat,
            a_hat=a_hat, a_formula=xi * md.r1 / (2 * X_hat * math.sqrt(system.n)) if X_hat > 0 else None,
            count_cap=count_cap, integral=total, integral_cap=N * 2 * L,
            ok_length=bool(np.all(lengths <= bound)),
            ok_count=count_cap is not None and N <= max(count_cap, 1),
            ok_integral=total <= N * 2 * L * (1 + 1e-9) + 1e-12,
        )
        if not rec["ok_length"]:
            k = int(np.argmax(lengths - bound))
            start = dwells.intervals[k][0]
            rec["witness"] = _witness(start, traj.sample(start), lengths[k], bound,
                                      "dwell length <= 2L/xi")
        return rec

    records = _map(one, list(trajectories), workers)
    notes = [
        "per-dwell integral bound uses the measured 2L in place of the class-K estimate",
        "entry decrement measured along trajectories; formula value reported with measured sup|f|",
    ]
    failed = [r for r in records if not (r["ok_length"] and r["ok_count"] and r["ok_integral"])]
    incomplete = [r for r in records if r["status"] != COMPLETED]
    witness = None
    if failed:
        status = FAIL
        bad = failed[0]
        witness = bad.get("witness") or _witness(bad["t0"], bad["x0"], bad["N"], bad.get("count_cap"),
                                                 "entry count / dwell integral bound")
    elif incomplete:
        status = INCONCLUSIVE
        notes.append("some trajectories left the domain before the horizon")
    else:
        status = PASS
    margins = [r["bound"] - r["max_length"] for r in records if r.get("bound") is not None]
    return Verdict(status, "dwell_bound", witness, min(margins) if margins else None,
                   float(np.mean(margins)) if margins else None, len(records),
                   notes + [RESOLUTION_NOTE],
                   {"xi": xi, "runs": records, "N_total": sum(r["N"] for r in records)})


def trajectory_bundle(system: SystemDef, starts, abs_tol=1e-10, rel_tol=1e-10, workers=1):
    """Integrate ``(t0, tf, x0)`` triples."""
    return _map(lambda s: integrate(system, s[2], s[0], s[1], abs_tol, rel_tol), list(starts), workers)

"""Adaptive Dormand-Prince 5(4) integration with dense output.

Also provides quadrature of scalar fields along a trajectory and location of
the time intervals a trajectory spends inside a region.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from . import quadrature
from .systems import SystemDef

COMPLETED = "completed"
BLOW_UP = "blow_up"
LEFT_DOMAIN = "left_domain"

BLOW_UP_FACTOR = 1e6
TIME_TOL = 1e-9

# Dormand-Prince 5(4) tableau.
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# fifth-order minus embedded fourth-order weights, 7 stages (FSAL)
E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# quartic continuous extension (Shampine 1986): y(t + s h) = y + h K^T P [s, s^2, s^3, s^4]
P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
PI_BETA = 0.04
PI_ALPHA = 0.2 - 0.75 * PI_BETA


class StepSizeError(ArithmeticError):
    def __init__(self, t, h, error_norm):
        self.t, self.h, self.error_norm = t, h, error_norm
        super().__init__(f"step size underflow at t={t!r} (h={h!r}, scaled local error {error_norm!r})")


class Trajectory:
    """Dense numerical solution. Immutable after construction.

    ``times`` holds the accepted step boundaries, ``states`` the state at each
    boundary, and ``coeffs[k]`` (shape (n, 4)) the quartic interpolant on
    step ``k`` scaled by ``steps[k]``.
    """

    def __init__(self, times, states, steps, coeffs, *, abs_tol, rel_tol, status,
                 n_steps, n_rejected, n_fev, error_estimate, domain_radius):
        self.times = _frozen(times)
        self.states = _frozen(states)
        self.steps = _frozen(steps)
        self.coeffs = _frozen(coeffs)
        self.abs_tol = abs_tol
        self.rel_tol = rel_tol
        self.status = status
        self.n_steps = n_steps
        self.n_rejected = n_rejected
        self.n_fev = n_fev
        self.error_estimate = error_estimate
        self.domain_radius = domain_radius

    t0 = property(lambda self: float(self.times[0]))
    tf = property(lambda self: float(self.times[-1]))
    x0 = property(lambda self: self.states[0].copy())
    xf = property(lambda self: self.states[-1].copy())
    n = property(lambda self: self.states.shape[1])

    def __repr__(self):
        return (f"Trajectory(t0={self.t0}, tf={self.tf}, steps={self.n_steps}, "
                f"rejected={self.n_rejected}, status={self.status!r})")

    def sample_many(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if t.size and (t.min() < self.times[0] or t.max() > self.times[-1]):
            raise ValueError(f"sample time outside [{self.t0}, {self.tf}]")
        if len(self.steps) == 0:
            return np.repeat(self.states[:1], t.size, axis=0)
        k = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.steps) - 1)
        h = self.steps[k]
        s = (t - self.times[k]) / h
        powers = np.stack([s, s * s, s ** 3, s ** 4], axis=1)           # (m, 4)
        out = self.states[k] + h[:, None] * np.einsum("mnj,mj->mn", self.coeffs[k], powers)
        out[t == self.times[-1]] = self.states[-1]
        return out

    def sample(self, t: float) -> np.ndarray:
        return self.sample_many([t])[0]

    def dense_grid(self, per_step: int = 8) -> np.ndarray:
        """Step boundaries plus ``per_step - 1`` interior points per step."""
        if len(self.steps) == 0:
            return self.times.copy()
        frac = np.arange(per_step) / per_step
        ends = self.times[1:]
        starts = self.times[:-1]
        grid = (starts[:, None] + (ends - starts)[:, None] * frac[None, :]).ravel()
        return np.append(grid, self.times[-1])

    def to_csv(self, path_or_file, times=None):
        """Write ``t,x1,...,xn`` rows at the given times (default: step boundaries)."""
        times = self.times if times is None else np.asarray(times, float)
        X = self.sample_many(times)
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, "w", newline="", encoding="utf-8") if own else path_or_file
        try:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t"] + [f"x{i}" for i in range(1, self.n + 1)])
            for t, x in zip(times, X):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in x])
        finally:
            if own:
                fh.close()


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _initial_step(system, t0, y0, f0, abs_tol, rel_tol, span):
    scale = abs_tol + np.abs(y0) * rel_tol
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    y1 = y0 + h0 * f0
    f1 = np.array(system.rhs(t0 + h0, y1.tolist()))
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, span)


def integrate(system: SystemDef, x0, t0: float, tf: float, abs_tol: float = 1e-10,
              rel_tol: float = 1e-10, *, exit_radius: Optional[float] = None,
              stop_on_exit: bool = True, blow_up_factor: float = BLOW_UP_FACTOR,
              time_tol: float = TIME_TOL, max_step: float = math.inf,
              max_steps: int = 1_000_000) -> Trajectory:
    """Integrate ``x' = f(t, x)`` from ``x(t0) = x0`` to ``tf``.

    Integration stops early with status ``left_domain`` when ``|x|`` first
    exceeds ``exit_radius`` (default: the domain radius); the exit time is
    located on the dense output to ``time_tol``. With ``stop_on_exit=False``
    it continues and only stops on blow-up (``|x| > blow_up_factor * R``).
    """
    if not tf > t0:
        raise ValueError(f"require tf > t0, got t0={t0}, tf={tf}")
    y = np.array(x0, dtype=float).reshape(-1)
    if y.size != system.n:
        raise ValueError(f"x0 has {y.size} components, system dimension is {system.n}")
    radius = system.domain_radius
    if np.linalg.norm(y) > radius:
        raise ValueError(f"|x0| = {np.linalg.norm(y)} exceeds domain radius {radius}")
    exit_r = radius if exit_radius is None else exit_radius
    blow_r = blow_up_factor * radius

    t = float(t0)
    f = np.array(system.rhs(t, y.tolist()))
    n_fev = 1
    span = tf - t0
    h = min(_initial_step(system, t, y, f, abs_tol, rel_tol, span), max_step)
    n_fev += 1

    times, states, steps, coeffs = [t], [y.copy()], [], []
    status = COMPLETED
    err_prev = 1e-4
    n_steps = n_rejected = 0
    error_estimate = 0.0
    exited = False
    K = np.empty((7, system.n))

    while t < tf:
        if n_steps >= max_steps:
            raise StepSizeError(t, h, float("nan"))
        h = min(h, tf - t, max_step)
        if t + h > tf - 1e-14 * max(1.0, abs(tf)):
            h = tf - t
        rejected_here = False
        while True:
            if h < 10 * np.spacing(max(abs(t), 1.0)):
                raise StepSizeError(t, h, err_prev)
            K[0] = f
            for s in range(1, 6):
                ys = y + h * (A[s] @ K[:s])
                K[s] = system.rhs(t + C[s] * h, ys.tolist())
            y_new = y + h * (B @ K[:6])
            t_new = t + h if t + h < tf else tf
            f_new = np.array(system.rhs(t_new, y_new.tolist()))
            K[6] = f_new
            n_fev += 6
            err_vec = h * (E @ K)
            scale = abs_tol + rel_tol * np.maximum(np.abs(y), np.abs(y_new))
            err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
            if not np.all(np.isfinite(y_new)) or not math.isfinite(err):
                if np.all(np.isfinite(y)) and h > 1e-300 and not rejected_here:
                    h *= MIN_FACTOR
                    rejected_here = True
                    n_rejected += 1
                    continue
                status = BLOW_UP
                break
            if err <= 1.0:
                break
            n_rejected += 1
            rejected_here = True
            h *= max(MIN_FACTOR, SAFETY * err ** -PI_ALPHA)
        if status == BLOW_UP:
            break

        Q = K.T @ P
        norm_new = float(np.linalg.norm(y_new))
        n_steps += 1
        error_estimate += float(np.max(np.abs(err_vec)))

        if stop_on_exit and not exited and _leaves(y, Q, h, exit_r, norm_new):
            t_exit, y_exit = _locate_exit(t, y, Q, h, exit_r, time_tol)
            times.append(t_exit)
            states.append(y_exit)
            steps.append(h)
            coeffs.append(Q)
            status = LEFT_DOMAIN
            break

        times.append(t_new)
        states.append(y_new.copy())
        steps.append(h)
        coeffs.append(Q)
        if not stop_on_exit and norm_new > exit_r:
            exited = True
            status = LEFT_DOMAIN
        if norm_new > blow_r:
            status = BLOW_UP
            break

        if err == 0.0:
            factor = MAX_FACTOR
        else:
            factor = SAFETY * err ** -PI_ALPHA * max(err_prev, 1e-4) ** PI_BETA
            factor = min(MAX_FACTOR, max(MIN_FACTOR, factor))
        if rejected_here:
            factor = min(1.0, factor)
        err_prev = max(err, 1e-4)
        t, y, f = t_new, y_new, f_new
        h *= factor

    if not steps:
        # blow-up on the first step: keep a degenerate single point
        return Trajectory([t0], [np.array(x0, float)], np.zeros(0), np.zeros((0, system.n, 4)),
                          abs_tol=abs_tol, rel_tol=rel_tol, status=status, n_steps=0,
                          n_rejected=n_rejected, n_fev=n_fev, error_estimate=math.inf,
                          domain_radius=radius)
    return Trajectory(times, states, steps, coeffs, abs_tol=abs_tol, rel_tol=rel_tol,
                      status=status, n_steps=n_steps, n_rejected=n_rejected, n_fev=n_fev,
                      error_estimate=error_estimate, domain_radius=radius)


_PROBE = np.linspace(0.0, 1.0, 17)[1:]


def _dense(y, Q, h, s):
    s = np.atleast_1d(s)
    powers = np.stack([s, s * s, s ** 3, s ** 4])
    return y[None, :] + h * (Q @ powers).T


def _leaves(y, Q, h, radius, norm_new):
    if norm_new > radius:
        return True
    return bool(np.any(np.linalg.norm(_dense(y, Q, h, _PROBE), axis=1) > radius))


def _locate_exit(t, y, Q, h, radius, time_tol):
    norms = np.linalg.norm(_dense(y, Q, h, _PROBE), axis=1)
    j = int(np.argmax(norms > radius))
    lo = 0.0 if j == 0 else _PROBE[j - 1]
    hi = _PROBE[j]
    while (hi - lo) * h > time_tol:
        mid = 0.5 * (lo + hi)
        if np.linalg.norm(_dense(y, Q, h, mid)[0]) > radius:
            hi = mid
        else:
            lo = mid
    return t + hi * h, _dense(y, Q, h, hi)[0]


def sample(traj: Trajectory, t: float) -> np.ndarray:
    return traj.sample(t)


# --- path quadrature ------------------------------------------------------


class Integral(NamedTuple):
    value: float
    error: float


def _field_along(traj: Trajectory, g):
    """``g`` is a field with ``evaluate_many`` or a plain vectorized ``g(t, X)``."""
    batch = g.evaluate_many if hasattr(g, "evaluate_many") else g

    def f(tt):
        X = traj.sample_many(tt)
        values = np.asarray(batch(tt, X), float)
        bad = ~np.isfinite(values)
        if np.any(bad):
            i = int(np.argmax(bad))
            if hasattr(g, "evaluate"):
                g.evaluate(float(tt[i]), X[i])  # raises with the offending subexpression
            raise quadrature.QuadratureError(
                f"integrand not finite at t={tt[i]!r}, x={X[i].tolist()!r}")
        return values

    return f


def path_integral(traj: Trajectory, g, t_start: Optional[float] = None,
                  t_end: Optional[float] = None, abs_tol: float = 1e-10,
                  rel_tol: float = 1e-10, limit: int = 20000) -> Integral:
    """Integral of ``g(t, x(t))`` along the trajectory with an error estimate.

    Quadrature panels start at the accepted step boundaries, so the smooth
    interpolant is integrated piecewise; panels are then bisected adaptively.
    """
    a = traj.t0 if t_start is None else max(float(t_start), traj.t0)
    b = traj.tf if t_end is None else min(float(t_end), traj.tf)
    if not b > a:
        return Integral(0.0, 0.0)
    inner = traj.times[(traj.times > a) & (traj.times < b)]
    edges = np.concatenate([[a], inner, [b]])
    value, err = quadrature.integrate_panels(_field_along(traj, g), edges, abs_tol, rel_tol, limit)
    return Integral(value, err)


# --- region dwell detection -----------------------------------------------


class Predicate:
    """Vectorized region test ``(t, X) -> bool array``; combine with & | ~."""

    def __init__(self, fn: Callable, label: str = "predicate"):
        self.fn = fn
        self.label = label

    def __call__(self, t, X):
        return np.asarray(self.fn(np.asarray(t, float), np.asarray(X, float)), bool)

    def __and__(self, other):
        return Predicate(lambda t, X: self(t, X) & other(t, X), f"({self.label} and {other.label})")

    def __or__(self, other):
        return Predicate(lambda t, X: self(t, X) | other(t, X), f"({self.label} or {other.label})")

    def __invert__(self):
        return Predicate(lambda t, X: ~self(t, X), f"not {self.label}")

    def __repr__(self):
        return f"Predicate({self.label})"

    @classmethod
    def norm_between(cls, lo: float, hi: float):
        return cls(lambda t, X: (np.linalg.norm(X, axis=1) > lo) & (np.linalg.norm(X, axis=1) < hi),
                   f"{lo} < |x| < {hi}")

    @classmethod
    def less(cls, g, bound: float):
        """``g(t, x) < bound``; ``g`` is an expression or a callable ``(t, X) -> array``."""
        fn = g.evaluate_many if hasattr(g, "evaluate_many") else g
        return cls(lambda t, X: np.asarray(fn(t, X)) < bound, f"{g} < {bound}")

    @classmethod
    def greater(cls, g, bound: float):
        fn = g.evaluate_many if hasattr(g, "evaluate_many") else g
        return cls(lambda t, X: np.asarray(fn(t, X)) > bound, f"{g} > {bound}")


@dataclass
class DwellIntervals:
    intervals: list = field(default_factory=list)      # [(t_enter, t_exit), ...]
    integrals: list = field(default_factory=list)      # [Integral, ...] when requested

    def __len__(self):
        return len(self.intervals)

    @property
    def lengths(self):
        return [b - a for a, b in self.intervals]


def detect_dwells(traj: Trajectory, predicate, integrand=None, time_tol: float = TIME_TOL,
                  per_step: int = 16) -> DwellIntervals:
    """Maximal intervals on which ``predicate`` holds along the trajectory.

    The predicate is scanned on ``per_step`` points per accepted step and each
    transition is refined by bisection on the dense output to ``time_tol``.
    Excursions shorter than the scan spacing can be missed.
    """
    grid = traj.dense_grid(per_step)
    inside = predicate(grid, traj.sample_many(grid))

    def inside_at(t):
        return bool(predicate(np.array([t]), traj.sample_many([t]))[0])

    def crossing(lo, hi, lo_inside):
        while hi - lo > time_tol:
            mid = 0.5 * (lo + hi)
            if inside_at(mid) == lo_inside:
                lo = mid
            else:
                hi = mid
        return hi if not lo_inside else lo

    result = DwellIntervals()
    start = grid[0] if inside[0] else None
    for i in range(1, len(grid)):
        if inside[i] == inside[i - 1]:
            continue
        if inside[i]:
            start = crossing(grid[i - 1], grid[i], False)
        else:
            result.intervals.append((float(start), float(crossing(grid[i - 1], grid[i], True))))
            start = None
    if start is not None:
        result.intervals.append((float(start), float(grid[-1])))
    if integrand is not None:
        result.integrals = [path_integral(traj, integrand, a, b) for a, b in result.intervals]
    return result

"""System and certificate definitions, config ingestion, built-in library."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import quadrature
from .expr import (BinOp, Expression, Num, Var, compile_vector, parse,
                   substitute)
from .sampling import ball_points

MODES = ("uniform", "uniform-asymptotic", "global")
BUILTINS = ("linear_decay", "unstable_linear", "example17", "matrosov_oscillator")

EQUILIBRIUM_TOL = 1e-10
EQUILIBRIUM_TIMES = np.linspace(0.0, 100.0, 101)


class ConfigError(ValueError):
    pass


class InvariantError(ConfigError):
    """A sampled invariant failed; ``witness`` holds the offending sample."""

    def __init__(self, message, witness=None):
        self.witness = witness
        super().__init__(message if witness is None else f"{message} (witness: {witness})")


@dataclass(frozen=True)
class SystemDef:
    n: int
    f: tuple
    domain_radius: float
    origin_is_equilibrium: bool = True
    label: str = ""
    _rhs: Callable = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"dimension must be >= 1, got {self.n}")
        if not self.domain_radius > 0:
            raise ConfigError(f"domain_radius must be > 0, got {self.domain_radius}")
        if len(self.f) != self.n:
            raise ConfigError(f"expected {self.n} right-hand side components, got {len(self.f)}")
        object.__setattr__(self, "f", tuple(self.f))
        object.__setattr__(self, "_rhs", compile_vector(self.f))

    def rhs(self, t: float, x) -> list:
        """f(t, x) at a single point; ``x`` is a list of floats."""
        return self._rhs(t, x)

    def rhs_many(self, t, X) -> np.ndarray:
        """f at a batch of points, shape (m, n)."""
        return np.column_stack([e.evaluate_many(t, X) for e in self.f])

    def check_equilibrium(self, times=EQUILIBRIUM_TIMES, tol=EQUILIBRIUM_TOL):
        X = np.zeros((len(times), self.n))
        norms = np.linalg.norm(self.rhs_many(times, X), axis=1)
        bad = ~(norms <= tol)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise InvariantError("origin is not an equilibrium: |f(t, 0)| > 1e-10",
                                 {"t": float(times[i]), "norm": float(norms[i])})


@dataclass(frozen=True)
class Certificate:
    """A (V, W*) pair with comparison functions and integral budget.

    ``M`` is an expression in ``x1..xn`` rebound to initial-state components.
    ``Wstar`` and ``V3`` may be any object exposing ``evaluate``,
    ``evaluate_many`` and ``uses_time`` (e.g. constructed fields).
    ``tail`` optionally bounds the budget integral beyond the horizon:
    ``tail(x0, t0, T_max) -> float``.
    """

    V: Expression
    Wstar: object
    V1: Expression
    V2: Expression
    V3: Optional[object] = None
    M: Optional[Expression] = None
    mode: str = "uniform"
    tail: Optional[Callable] = field(default=None, compare=False, repr=False)
    label: str = ""

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown certificate mode {self.mode!r}; expected one of {MODES}")
        for name in ("V1", "V2", "V3"):
            e = getattr(self, name)
            if e is not None and e.uses_time:
                raise ConfigError(f"comparison functions must be time-independent: {name} = {e}")

    def check_wstar_origin(self, n, times=EQUILIBRIUM_TIMES, tol=EQUILIBRIUM_TOL):
        values = np.abs(self.Wstar.evaluate_many(times, np.zeros((len(times), n))))
        bad = ~(values <= tol)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise InvariantError("W*(t, 0) must vanish",
                                 {"t": float(times[i]), "value": float(values[i])})

    def with_mode(self, mode: str) -> "Certificate":
        return Certificate(self.V, self.Wstar, self.V1, self.V2, self.V3, self.M,
                           mode, self.tail, self.label)


@dataclass(frozen=True)
class MatrosovData:
    """Auxiliary function W, bound V*, and the probe-set constants.

    ``distance(X)`` returns the distance of each row of ``X`` to the zero set
    of V*; when absent, the certify module approximates it numerically.
    """

    W: Expression
    Vstar: Expression
    alpha: float
    A: float
    r1: float = 0.01
    xi: Optional[float] = None
    L: Optional[float] = None
    distance: Optional[Callable] = field(default=None, compare=False, repr=False)

    def validate(self, domain_radius: float):
        if not 0 < self.alpha < self.A:
            raise ConfigError(f"require 0 < alpha < A, got alpha={self.alpha}, A={self.A}")
        if self.A > domain_radius:
            raise ConfigError(f"A={self.A} exceeds domain_radius={domain_radius}")
        if not self.r1 > 0:
            raise ConfigError(f"r1 must be > 0, got {self.r1}")
        if self.xi is not None and not self.xi > 0:
            raise ConfigError(f"xi must be > 0, got {self.xi}")
        if self.Vstar.uses_time:
            raise ConfigError("Vstar must be time-independent")

    def annulus_sup_W(self, n: int, t_max: float = 100.0, count: int = 4096, seed: int = 0):
        """Sampled sup of |W| over ``alpha <= |x| <= A`` and ``t in [0, t_max]``."""
        X = ball_points(n, count, self.A, self.alpha, seed=seed)
        t = np.linspace(0.0, t_max, count)
        return float(np.nanmax(np.abs(self.W.evaluate_many(t, X))))

    def with_L(self, n: int) -> "MatrosovData":
        if self.L is not None:
            return self
        return MatrosovData(self.W, self.Vstar, self.alpha, self.A, self.r1, self.xi,
                            self.annulus_sup_W(n), self.distance)


@dataclass(frozen=True)
class Example17Params:
    """x_i' = beta(t) x_i / (1 + h(x_i)); ``h`` is written in ``x1``."""

    n: int
    beta: Expression
    h: Expression
    M1: Optional[float] = None

    def __post_init__(self):
        if self.h.n != 1:
            raise ConfigError("h must be an expression in one variable (x1)")
        if self.M1 is None:
            object.__setattr__(self, "M1", beta_integral(self.beta, 0.0)[0])
        if not math.isfinite(self.M1):
            raise ConfigError(f"M1 must be finite, got {self.M1}")
        times = np.linspace(0.0, 100.0, 201)
        b = self.beta.evaluate_many(times, np.zeros((len(times), self.beta.n)))
        if not np.all(b > 0):
            i = int(np.argmax(~(b > 0)))
            raise InvariantError("beta(t) must be > 0", {"t": float(times[i]), "beta": float(b[i])})
        xs = np.linspace(-10.0, 10.0, 201).reshape(-1, 1)
        hv = self.h.evaluate_many(0.0, xs)
        if not np.all(hv >= 0):
            i = int(np.argmax(~(hv >= 0)))
            raise InvariantError("h(x) must be >= 0", {"x": float(xs[i, 0]), "h": float(hv[i])})


def beta_integral(beta: Expression, start: float):
    """``(value, error)`` of the integral of beta over ``[start, inf)``."""
    zeros = np.zeros((1, beta.n))

    def f(t):
        return beta.evaluate_many(t, np.repeat(zeros, len(t), axis=0))

    return quadrature.integrate_to_infinity(f, start)


# --- built-ins ------------------------------------------------------------


def _sum_squares(n: int) -> str:
    return " + ".join(f"x{i}^2" for i in range(1, n + 1))


def _certificate(n, V, Wstar, V1, V2, V3=None, M="0", mode="uniform", tail=None, label=""):
    p = lambda s: s if isinstance(s, Expression) else parse(s, n)  # noqa: E731
    return Certificate(p(V), p(Wstar), p(V1), p(V2), None if V3 is None else p(V3),
                       p(M), mode, tail, label)


def linear_decay(n: int = 1, domain_radius: float = 2.0):
    sys = SystemDef(n, tuple(parse(f"-x{i}", n) for i in range(1, n + 1)),
                    domain_radius, True, "linear_decay")
    half = f"0.5*({_sum_squares(n)})"
    cert = _certificate(n, half, "0", half, half, V3=_sum_squares(n), M="0",
                        mode="uniform-asymptotic", label="linear_decay")
    return sys, cert, None


def unstable_linear(n: int = 1, domain_radius: float = 2.0):
    sys = SystemDef(n, tuple(parse(f"x{i}", n) for i in range(1, n + 1)),
                    domain_radius, True, "unstable_linear")
    return sys, None, None


def candidate_certificate(sys: SystemDef, mode: str = "uniform") -> Certificate:
    """V = V1 = V2 = |x|^2 / 2, W* = 0, M = 0: the plain Lyapunov candidate."""
    half = f"0.5*({_sum_squares(sys.n)})"
    return _certificate(sys.n, half, "0", half, half, V3=_sum_squares(sys.n), M="0",
                        mode=mode, label=f"{sys.label or 'system'} candidate")


def example17(n: int = 2, beta="exp(-t)", h="x1^2", M1: Optional[float] = None,
              domain_radius: float = 3.0):
    params = example17_params(n, beta, h, M1)
    beta_e, h_e, M1 = params.beta, params.h, params.M1
    f, w_terms = [], []
    for i in range(1, n + 1):
        xi = Var(i)
        denom = BinOp("+", Num(1.0), substitute(h_e.root, {1: xi}))
        f.append(Expression(BinOp("/", BinOp("*", beta_e.root, xi), denom), n))
        w_terms.append(BinOp("/", BinOp("*", beta_e.root, BinOp("^", xi, Num(2.0))), denom))
    wstar = w_terms[0]
    for term in w_terms[1:]:
        wstar = BinOp("+", wstar, term)
    sys = SystemDef(n, tuple(f), domain_radius, True, "example17")
    half = f"0.5*({_sum_squares(n)})"
    growth = math.exp(2.0 * M1)
    M = f"{M1!r}*({_sum_squares(n)})*{growth!r}"

    def tail(x0, t0, T_max):
        rest, _ = beta_integral(beta_e, max(T_max, t0))
        return float(np.dot(x0, x0)) * growth * rest

    cert = _certificate(n, half, Expression(wstar, n), half, half, M=M, mode="uniform",
                        tail=tail, label="example17")
    return sys, cert, None


def example17_params(n: int = 2, beta="exp(-t)", h="x1^2", M1: Optional[float] = None):
    try:
        beta_e = beta if isinstance(beta, Expression) else parse(beta, n)
        if beta_e.n != n:
            beta_e = parse(str(beta_e), n)
        h_e = h if isinstance(h, Expression) else parse(h, 1)
    except ValueError as exc:
        raise ConfigError(f"example17: {exc} (beta is written in t, h in x1)") from exc
    return Example17Params(n, beta_e, h_e, None if M1 is None else float(M1))


def matrosov_oscillator(domain_radius: float = 2.0, alpha: float = 0.5, A: float = 1.0,
                        r1: float = 0.01):
    n = 2
    sys = SystemDef(n, (parse("x2", n), parse("-x1 - (2 + sin(t))*x2", n)),
                    domain_radius, True, "matrosov_oscillator")
    half = "0.5*(x1^2 + x2^2)"
    cert = _certificate(n, half, "0", half, half, M="0", mode="uniform",
                        label="matrosov_oscillator")
    md = MatrosovData(parse("x1*x2", n), parse("-(x2^2)", n), alpha, A, r1,
                      distance=lambda X: np.abs(np.asarray(X)[:, 1]))
    return sys, cert, md.with_L(n)


_BUILDERS = {
    "linear_decay": linear_decay,
    "unstable_linear": unstable_linear,
    "example17": example17,
    "matrosov_oscillator": matrosov_oscillator,
}


def builtin(name: str, **params):
    """Return ``(SystemDef, Certificate or None, MatrosovData or None)``."""
    try:
        build = _BUILDERS[name]
    except KeyError:
        raise ConfigError(f"unknown builtin {name!r}; expected one of {BUILTINS}") from None
    try:
        return build(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for builtin {name!r}: {exc}") from None


# --- config ---------------------------------------------------------------


def _expr(table, key, n, section, required=True):
    if key not in table:
        if required:
            raise ConfigError(f"[{section}] missing key {key!r}")
        return None
    try:
        return parse(str(table[key]), n)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from exc


def load_config(text: str):
    """Parse a TOML config into ``(SystemDef, Certificate or None, MatrosovData or None)``.

    All expressions are parsed against the declared dimension and the sampled
    invariants (equilibrium at the origin, W*(t, 0) = 0) are checked.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    if "system" not in doc:
        raise ConfigError("config needs a [system] section")
    s = dict(doc["system"])
    cert = md = None
    if "builtin" in s:
        name = s.pop("builtin")
        sys, cert, md = builtin(name, **s)
    else:
        try:
            n = int(s["n"])
            sources = list(s["f"])
        except KeyError as exc:
            raise ConfigError(f"[system] missing key {exc.args[0]!r}") from None
        f = []
        for i, src in enumerate(sources):
            try:
                f.append(parse(str(src), n))
            except ValueError as exc:
                raise ConfigError(f"[system] f[{i}]: {exc}") from exc
        sys = SystemDef(n, tuple(f), float(s.get("domain_radius", 1.0)),
                        bool(s.get("origin_is_equilibrium", True)), str(s.get("label", "")))
    n = sys.n
    if sys.origin_is_equilibrium:
        sys.check_equilibrium()
    if "certificate" in doc:
        c = doc["certificate"]
        V = _expr(c, "V", n, "certificate")
        cert = Certificate(
            V=V,
            Wstar=_expr(c, "Wstar", n, "certificate", required=False) or parse("0", n),
            V1=_expr(c, "V1", n, "certificate", required=False) or V,
            V2=_expr(c, "V2", n, "certificate", required=False) or V,
            V3=_expr(c, "V3", n, "certificate", required=False),
            M=_expr(c, "M", n, "certificate", required=False) or parse("0", n),
            mode=str(c.get("mode", "uniform")),
            label=str(c.get("label", sys.label)),
        )
    if cert is not None:
        cert.check_wstar_origin(n)
    if "matrosov" in doc:
        m = doc["matrosov"]
        try:
            md = MatrosovData(
                W=_expr(m, "W", n, "matrosov"),
                Vstar=_expr(m, "Vstar", n, "matrosov"),
                alpha=float(m["alpha"]),
                A=float(m["A"]),
                r1=float(m.get("r1", 0.01)),
                xi=None if "xi" not in m else float(m["xi"]),
                L=None if "L" not in m else float(m["L"]),
            )
        except KeyError as exc:
            raise ConfigError(f"[matrosov] missing key {exc.args[0]!r}") from None
        md.validate(sys.domain_radius)
        md = md.with_L(n)
    return sys, cert, md


def load_config_file(path) -> tuple:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return load_config(text)

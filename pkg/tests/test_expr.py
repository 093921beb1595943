import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lyapcert.expr import (BinOp, EvalPoint, ExprDomainError, ExprSyntaxError, Func, Neg,
                           NonFiniteWarning, Num, Time, Var, compile_vector, evaluate, gradient,
                           node_to_source, parse)


def test_parse_structure():
    e = parse("x1^2 + x2^2", 2)
    assert e.root == BinOp("+", BinOp("^", Var(1), Num(2.0)), BinOp("^", Var(2), Num(2.0)))
    assert parse("exp(-t)*x1/(1+x1^2)", 1).uses_time


@pytest.mark.parametrize("src, expected", [
    ("1 - 2 - 3", -4.0),
    ("2^3^2", 512.0),          # right associative
    ("-2^2", 4.0),             # unary minus binds tighter than ^
    ("-(2^2)", -4.0),
    ("8 / 4 / 2", 1.0),
    ("2 * 3 + 4 * 5", 26.0),
    ("  max( 1 ,2 )+min(1,2)", 3.0),
    ("1e-3 * 1000", 1.0),
    ("abs(-3) + sqrt(16) + ln(1) + cos(0) + sin(0) + tanh(0)", 8.0),
])
def test_precedence(src, expected):
    assert parse(src, 0).evaluate(0.0, []) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("src, n, fragment", [
    ("x3", 2, "out of range"),
    ("x0", 2, "out of range"),
    ("y1", 1, "unknown identifier"),
    ("foo(1)", 1, "unknown"),
    ("1 +", 1, ""),
    ("(x1", 1, ""),
    ("x1 x1", 1, ""),
    ("max(1)", 1, ""),
])
def test_parse_errors(src, n, fragment):
    with pytest.raises(ValueError, match=fragment or None):
        parse(src, n)


def test_syntax_error_offset():
    with pytest.raises(ExprSyntaxError) as info:
        parse("x1 + * 2", 1)
    assert info.value.offset == 5


def test_empty_source():
    with pytest.raises(ExprSyntaxError):
        parse("   ", 1)


def test_evaluate_examples():
    assert evaluate(parse("x1^2+x2^2", 2), EvalPoint(0.0, (3.0, 4.0))) == 25.0
    assert evaluate(parse("max(x1,0)", 1), EvalPoint(0.0, (-2.0,))) == 0.0
    assert evaluate(parse("exp(-t)", 0), EvalPoint(1.0, ())) == pytest.approx(0.36787944, abs=1e-8)
    assert parse("exp(-t)", 0).evaluate(1.0, []) == pytest.approx(math.exp(-1), abs=1e-12)


def test_eval_point_must_be_finite():
    with pytest.raises(ValueError):
        EvalPoint(math.nan, (1.0,))
    with pytest.raises(ValueError):
        EvalPoint(0.0, (math.inf,))


def test_gradient_examples():
    dt, dx = gradient(parse("x1^2+x2^2", 2), EvalPoint(0.0, (3.0, 4.0)))
    assert dt == 0.0 and list(dx) == [6.0, 8.0]
    dt, dx = gradient(parse("t*x1", 1), 2.0, (5.0,))
    assert dt == 5.0 and list(dx) == [2.0]


def test_integer_power_negative_base():
    assert parse("x1^3", 1).evaluate(0.0, [-2.0]) == -8.0
    assert parse("x1^(-2)", 1).evaluate(0.0, [-2.0]) == 0.25


def test_domain_errors_name_subexpression():
    e = parse("1 + ln(x1)", 1)
    with pytest.raises(ExprDomainError) as info:
        e.evaluate(0.0, [-1.0])
    assert "ln" in info.value.subexpression
    with pytest.raises(ExprDomainError):
        parse("x1^0.5", 1).evaluate(0.0, [-1.0])
    with pytest.raises(ExprDomainError):
        parse("1/x1", 1).evaluate(0.0, [0.0])


def test_batch_domain_errors_are_nan():
    v = parse("sqrt(x1)", 1).evaluate_many(0.0, np.array([[4.0], [-1.0]]))
    assert v[0] == 2.0 and math.isnan(v[1])


def test_overflow_is_flagged():
    with pytest.warns(NonFiniteWarning):
        assert parse("exp(x1)", 1).evaluate(0.0, [1000.0]) == math.inf


def test_kink_rules():
    assert gradient(parse("abs(x1)", 1), 0.0, [0.0])[1][0] == 1.0
    assert gradient(parse("abs(x1)", 1), 0.0, [-1.0])[1][0] == -1.0
    # ties in max/min follow the second argument
    assert list(gradient(parse("max(x1, x2)", 2), 0.0, [1.0, 1.0])[1]) == [0.0, 1.0]
    assert list(gradient(parse("min(x1, x2)", 2), 0.0, [1.0, 1.0])[1]) == [0.0, 1.0]


def test_expression_is_immutable_and_hashable():
    e = parse("x1 + t", 1)
    with pytest.raises(AttributeError):
        e.n = 3
    assert e == parse("x1+t", 1) and hash(e) == hash(parse("x1+t", 1))
    assert e != parse("x1 + t", 2)


def test_compile_vector():
    f = compile_vector([parse("x2", 2), parse("-x1", 2)])
    assert f(0.0, [1.0, 2.0]) == [2.0, -1.0]


def test_batch_matches_scalar():
    e = parse("exp(-t)*x1/(1+x1^2) + max(x2, 0)*sin(t)", 2)
    rng = np.random.default_rng(0)
    t = rng.uniform(0, 10, 50)
    X = rng.uniform(-2, 2, (50, 2))
    batch = e.evaluate_many(t, X)
    scalar = [e.evaluate(ti, xi) for ti, xi in zip(t, X)]
    np.testing.assert_allclose(batch, scalar, rtol=1e-14, atol=0)


# --- generated trees --------------------------------------------------------

N = 2
_leaf = st.one_of(
    st.floats(0.0, 1e6, allow_nan=False).map(Num),
    st.just(Time()),
    st.integers(1, N).map(Var),
)
_SMOOTH_UNARY = ("sin", "cos", "tanh")


def _extend(children):
    return st.one_of(
        children.map(Neg),
        st.tuples(st.sampled_from("+-*"), children, children).map(lambda a: BinOp(*a)),
        st.tuples(children, st.integers(0, 3)).map(lambda a: BinOp("^", a[0], Num(float(a[1])))),
        st.tuples(st.sampled_from(_SMOOTH_UNARY), children).map(lambda a: Func(a[0], (a[1],))),
    )


# small constants keep cancellation error in the difference quotients below 1e-5
_small_leaf = st.one_of(st.floats(0.0, 10.0).map(Num), st.just(Time()), st.integers(1, N).map(Var))
trees = st.recursive(_small_leaf, _extend, max_leaves=12)
any_trees = st.recursive(_leaf, lambda c: st.one_of(
    _extend(c),
    st.tuples(st.sampled_from(["min", "max"]), c, c).map(lambda a: Func(a[0], (a[1], a[2]))),
    st.tuples(st.sampled_from(["abs", "exp", "sqrt", "ln"]), c).map(lambda a: Func(a[0], (a[1],))),
    st.tuples(c, c).map(lambda a: BinOp("/", *a)),
), max_leaves=12)
points = st.tuples(st.floats(-3, 3), st.floats(-1, 1), st.floats(-1, 1))


@settings(max_examples=300, deadline=None)
@given(any_trees)
def test_round_trip(root):
    e = parse(node_to_source(root), N)
    assert e.root == root
    assert str(parse(str(e), N)) == str(e)


@settings(max_examples=200, deadline=None)
@given(any_trees, points)
def test_round_trip_bitwise_evaluation(root, p):
    t, *x = p
    a = parse(node_to_source(root), N).evaluate_many(t, np.array([x]))
    b = parse(str(parse(node_to_source(root), N)), N).evaluate_many(t, np.array([x]))
    assert np.array_equal(a, b, equal_nan=True)


@settings(max_examples=200, deadline=None)
@given(trees, points)
def test_dual_matches_central_differences(root, p):
    t, *x = p
    e = parse(node_to_source(root), N)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonFiniteWarning)
        if not abs(e.evaluate(t, x)) < 1e3:
            return
        dt, dx = e.gradient(t, x)
        h = 1e-6
        scale = 1 + abs(e.evaluate(t, x))
        fd_t = (e.evaluate(t + h, x) - e.evaluate(t - h, x)) / (2 * h)
        assert abs(dt - fd_t) <= 1e-5 * (scale + abs(dt))
        for i in range(N):
            xp, xm = list(x), list(x)
            xp[i] += h
            xm[i] -= h
            fd = (e.evaluate(t, xp) - e.evaluate(t, xm)) / (2 * h)
            assert abs(dx[i] - fd) <= 1e-5 * (scale + abs(dx[i]))


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_max_min_duality(a, b):
    mx = parse("max(x1, x2)", 2).evaluate(0.0, [a, b])
    mn = parse("-min(-x1, -x2)", 2).evaluate(0.0, [a, b])
    assert mx == mn


def test_gradient_many_shapes():
    v, dt, dX = parse("t*x1*x2", 2).gradient_many(np.arange(3.0), np.ones((3, 2)))
    assert v.shape == (3,) and dt.shape == (3,) and dX.shape == (3, 2)

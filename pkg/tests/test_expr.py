from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orbitkit.expr import (
    ZERO,
    ArityError,
    Binary,
    Const,
    DimensionError,
    DomainError,
    ExprSyntaxError,
    UnknownIdentifierError,
    Vanishing,
    compile_exprs,
    differentiate,
    evaluate,
    evaluate_many,
    parse,
    simplify,
    to_text,
    vanishing,
)

NAMES = ("x1", "x2", "x3")


def _leaf():
    return st.one_of(
        st.sampled_from(NAMES),
        st.floats(-2, 2, allow_nan=False).map(lambda v: f"({v:.3f})"),
    )


_UNARY = [
    "sin({a})",
    "cos({a})",
    "exp(sin({a}))",
    "sqrt(1 + ({a})^2)",
    "log(2 + cos({a}))",
    "bump(sin({a})/2)",
    "({a})^2",
    "-({a})",
]
_BINARY = ["({a} + {b})", "({a} - {b})", "({a} * {b})", "({a} / (1 + ({b})^2))"]


def expr_text(depth: int):
    if depth <= 1:
        return _leaf()
    sub = expr_text(depth - 1)
    return st.one_of(
        _leaf(),
        st.tuples(st.sampled_from(_UNARY), sub).map(lambda p: p[0].format(a=p[1])),
        st.tuples(st.sampled_from(_BINARY), sub, sub).map(lambda p: p[0].format(a=p[1], b=p[2])),
    )


points3 = st.lists(st.floats(-1, 1, allow_nan=False), min_size=3, max_size=3)


# --- parse ------------------------------------------------------------------


def test_parse_evaluates_sum_and_product():
    e = parse("x1 + x3*x2")
    assert isinstance(e, Binary) and e.op == "add"
    assert evaluate(e, [1, 3, 2]) == 7.0


def test_parse_bump_outside_support():
    assert evaluate(parse("bump(x1)"), [2.0]) == 0.0


def test_parse_declared_names():
    e = parse("-y", ("x", "y"))
    assert evaluate(e, [0, 5]) == -5.0


def test_parse_precedence_power_binds_tighter_than_unary_minus():
    assert evaluate(parse("-x1^2"), [3.0]) == -9.0
    assert evaluate(parse("2^3^2"), [0.0]) == 512.0
    assert evaluate(parse("x1 ** 2"), [3.0]) == 9.0


def test_parse_syntax_error_reports_offset():
    with pytest.raises(ExprSyntaxError) as info:
        parse("x1 + * x2")
    assert info.value.offset == 5


def test_parse_unknown_identifier():
    with pytest.raises(UnknownIdentifierError) as info:
        parse("x1 + foo", ("x1", "x2"))
    assert info.value.name == "foo" and info.value.offset == 5


def test_parse_positional_alias_beyond_dimension_rejected():
    with pytest.raises(UnknownIdentifierError):
        parse("x9", ("x", "y", "z"))


def test_parse_arity_mismatch():
    with pytest.raises(ArityError):
        parse("sin(x1, x2)")


def test_parse_unclosed_paren():
    with pytest.raises(ExprSyntaxError):
        parse("(x1 + 1")


# --- evaluate -----------------------------------------------------------------


def test_evaluate_examples():
    assert evaluate(parse("x1^2"), [3.0]) == 9.0
    assert evaluate(parse("bump(x1)"), [0.0]) == pytest.approx(0.367879441, abs=1e-9)


@pytest.mark.parametrize("text,point", [("1/x1", [0.0]), ("log(x1)", [-1.0]), ("sqrt(x1)", [-1.0]), ("log(x1)", [0.0])])
def test_evaluate_domain_errors(text, point):
    with pytest.raises(DomainError):
        evaluate(parse(text), point)


def test_evaluate_dimension_mismatch():
    with pytest.raises(DimensionError):
        evaluate(parse("x1 + x2"), [1.0], dim=3)


def test_bump_vanishes_identically_outside():
    e = parse("bump(x1)")
    for s in (-1.0, 1.0, 1.5, -7.0):
        assert evaluate(e, [s]) == 0.0
    assert evaluate(e, [0.5]) == pytest.approx(math.exp(-1 / 0.75))


# --- differentiate ------------------------------------------------------------


def test_differentiate_product():
    assert to_text(differentiate(parse("x1*x2"), 0)) == "x2"


def test_differentiate_sin_at_zero():
    assert evaluate(differentiate(parse("sin(x1)"), 0), [0.0]) == 1.0


def test_differentiate_bump_at_center_and_outside():
    d = differentiate(parse("bump(x1)"), 0)
    assert evaluate(d, [0.0]) == 0.0
    assert evaluate(d, [1.2]) == 0.0
    assert evaluate(d, [-1.0]) == 0.0


@pytest.mark.parametrize("order_text", ["bump(x1)", "bump(x1^2)", "bump(2*x1 - 0.3)"])
def test_bump_derivatives_match_finite_differences(order_text):
    e = parse(order_text)
    h = 1e-5
    for k in range(3):
        d = differentiate(e, 0)
        for s in np.linspace(-0.9, 0.9, 13):
            fd = (evaluate(e, [s + h]) - evaluate(e, [s - h])) / (2 * h)
            assert abs(evaluate(d, [s]) - fd) <= 1e-6 * (1 + abs(fd))
        e = d


@settings(max_examples=100, deadline=None)
@given(expr_text(6), points3, st.integers(0, 2))
def test_derivative_matches_central_difference(text, p, var):
    e = parse(text, NAMES)
    d = differentiate(e, var)
    h = 1e-5
    lo, hi = list(p), list(p)
    lo[var] -= h
    hi[var] += h
    fd = (evaluate(e, hi) - evaluate(e, lo)) / (2 * h)
    value = evaluate(d, p)
    assert abs(value - fd) <= 1e-6 * (1 + abs(value))


# --- simplify ------------------------------------------------------------------


def test_simplify_examples():
    assert to_text(simplify(parse("0*sin(x1) + x2"))) == "x2"
    assert simplify(parse("x1 - x1")) == ZERO
    assert to_text(simplify(parse("(1+1)*x1"))) == "(2 * x1)"


@settings(max_examples=100, deadline=None)
@given(expr_text(5))
def test_simplify_idempotent(text):
    s = simplify(parse(text, NAMES))
    assert simplify(s) == s


@settings(max_examples=50, deadline=None)
@given(expr_text(5))
def test_simplify_preserves_values(text):
    e = parse(text, NAMES)
    s = simplify(e)
    rng = np.random.default_rng(0)
    for p in rng.uniform(-1, 1, (32, 3)):
        a, b = evaluate(e, p), evaluate(s, p)
        assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


@settings(max_examples=100, deadline=None)
@given(expr_text(6))
def test_print_parse_round_trip(text):
    e = parse(text, NAMES)
    assert parse(to_text(e), NAMES) == e


def test_negative_constant_round_trip():
    e = Const(-3.0)
    assert to_text(e) == "(-3)"
    assert parse(to_text(e)) == e


# --- vanishing and compiled evaluation -----------------------------------------


def test_vanishing_levels():
    pts = np.random.default_rng(1).uniform(-1, 1, (32, 2))
    assert vanishing([ZERO, ZERO], pts) is Vanishing.SYMBOLIC
    identity = parse("sin(x1)^2 + cos(x1)^2 - 1")
    assert simplify(identity) != ZERO
    assert vanishing([identity], pts) is Vanishing.NUMERIC
    assert vanishing([parse("x1")], pts) is Vanishing.NONZERO


@settings(max_examples=50, deadline=None)
@given(st.lists(expr_text(5), min_size=1, max_size=4))
def test_compiled_programs_match_tree_walk(texts):
    exprs = [parse(t, NAMES) for t in texts]
    pts = np.random.default_rng(2).uniform(-1, 1, (16, 3))
    got = evaluate_many(exprs, pts)
    want = np.array([[evaluate(e, p) for e in exprs] for p in pts])
    np.testing.assert_allclose(got, want, rtol=1e-13, atol=1e-14)


def test_compiled_domain_error_is_nan_not_silent_value():
    prog = compile_exprs([parse("log(x1)")])
    assert prog.count == 1
    out = evaluate_many([parse("log(x1)")], np.array([[-1.0]]))
    assert np.isnan(out[0, 0])

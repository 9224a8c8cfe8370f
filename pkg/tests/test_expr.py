import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from toolphys import expr as ex
from toolphys.errors import DomainError, ParseError, UnboundSymbol

X, Y = ex.var("x"), ex.var("y")


def add(a, b):
    return ex.Binary("add", a, b)


def mul(a, b):
    return ex.Binary("mul", a, b)


X_PLUS_2Y = add(X, mul(ex.const(2), Y))


def test_evaluate_examples():
    assert ex.evaluate(X_PLUS_2Y, {"x": 1, "y": 3}) == 7
    assert ex.evaluate(ex.const(5), {}) == 5
    with pytest.raises(DomainError):
        ex.evaluate(ex.Binary("div", X, Y), {"x": 1, "y": 0})


def test_evaluate_errors():
    with pytest.raises(UnboundSymbol):
        ex.evaluate(X_PLUS_2Y, {"x": 1})
    with pytest.raises(DomainError):
        ex.evaluate(ex.Unary("sqrt", X), {"x": -1})
    with pytest.raises(DomainError):
        ex.evaluate(ex.Binary("pow", X, ex.const(0.5)), {"x": -2})
    with pytest.raises(DomainError):
        ex.evaluate(ex.Binary("pow", X, ex.const(-2)), {"x": 0.0})
    assert ex.evaluate(ex.Binary("pow", X, ex.const(3)), {"x": -2}) == -8


def test_complexity_examples():
    assert ex.complexity(ex.const(5)) == 1
    assert ex.complexity(X_PLUS_2Y) == 5
    assert ex.complexity(ex.Unary("neg", X)) == 2


def test_leaf_symbols_examples():
    assert ex.leaf_symbols(ex.const(5)) == set()
    assert ex.leaf_symbols(X_PLUS_2Y) == {"x", "y"}
    assert ex.leaf_symbols(add(mul(X, X), X)) == {"x"}


def test_simplify_examples():
    assert ex.simplify(add(X, ex.const(0))) == X
    assert ex.simplify(mul(ex.const(2), ex.const(3))) == ex.const(6)
    t = add(mul(X, ex.const(1)), mul(ex.const(0), Y))
    assert ex.simplify(t) == X


def test_simplify_keeps_failing_subtree():
    t = mul(ex.const(0), ex.Binary("div", X, Y))
    s = ex.simplify(t)
    with pytest.raises(DomainError):
        ex.evaluate(s, {"x": 1.0, "y": 0.0})


def test_text_round_trip_and_parse():
    assert ex.to_text(X_PLUS_2Y) == "(x + (2.0 * y))"
    assert ex.parse("x + 2*y") == X_PLUS_2Y
    assert ex.parse("(x + (2.0 * y))") == X_PLUS_2Y
    assert ex.parse("-x^2") == ex.Unary("neg", ex.Binary("pow", X, ex.const(2)))
    assert ex.parse("sqrt(x) / 1e-05") == ex.Binary("div", ex.Unary("sqrt", X), ex.const(1e-5))
    with pytest.raises(ParseError):
        ex.parse("x +")
    with pytest.raises(ParseError):
        ex.parse("sin(x)")


def test_evaluate_array_matches_scalar():
    t = ex.parse("sqrt(x) / (y - 1) + square(x) ^ -1")
    xs = np.array([4.0, -1.0, 2.0, 0.0])
    ys = np.array([3.0, 2.0, 1.0, 5.0])
    out = ex.evaluate_array(t, {"x": xs, "y": ys})
    for i in range(4):
        try:
            ref = ex.evaluate(t, {"x": xs[i], "y": ys[i]})
        except DomainError:
            assert math.isnan(out[i])
        else:
            assert out[i] == pytest.approx(ref, rel=1e-15)


# -- property tests -------------------------------------------------------------

SYMS = ("a", "b", "c")

leaves = st.one_of(
    st.sampled_from([0.0, 1.0, -1.0, 2.0, 0.5, 3.0]).map(ex.const),
    st.sampled_from(SYMS).map(ex.var),
)


def _extend(inner):
    return st.one_of(
        st.builds(ex.Unary, st.sampled_from(ex.UNARY_OPS), inner),
        st.builds(ex.Binary, st.sampled_from(ex.BINARY_OPS), inner, inner),
    )


trees = st.recursive(leaves, _extend, max_leaves=8)
bindings = st.fixed_dictionaries(
    {s: st.floats(-5, 5, allow_nan=False, allow_infinity=False) for s in SYMS}
)


def _eval_or_error(t, b):
    try:
        return ex.evaluate(t, b)
    except DomainError:
        return "error"


@settings(max_examples=300, deadline=None)
@given(trees, bindings)
def test_simplify_preserves_semantics(t, b):
    s = ex.simplify(t)
    assert _eval_or_error(s, b) == _eval_or_error(t, b)
    assert ex.complexity(s) <= ex.complexity(t)
    assert ex.leaf_symbols(s) <= ex.leaf_symbols(t)


@settings(max_examples=200, deadline=None)
@given(trees)
def test_complexity_additive_and_text_round_trip(t):
    assert ex.complexity(t) >= 1
    assert ex.complexity(t) == 1 + sum(ex.complexity(c) for c in ex.children(t))
    assert ex.parse(ex.to_text(t)) == t

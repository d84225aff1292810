import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from flatform import exprcore as ex
from flatform.forms import Chart

from oracles import sym

NAMES = ("x", "y", "z")


# --- random expression strategy (domain safe on [-1, 1]^3) -------------------

def _leaves():
    return st.one_of(
        st.sampled_from([ex.Var(v) for v in NAMES]),
        st.fractions(min_value=-3, max_value=3, max_denominator=7).map(ex.Const),
    )


def _extend(children):
    return st.one_of(
        st.tuples(children, children).map(lambda t: ex.add(*t)),
        st.tuples(children, children).map(lambda t: ex.mul(*t)),
        children.map(ex.neg),
        st.tuples(children, st.integers(0, 3)).map(lambda t: ex.power(*t)),
        children.map(ex.sin),
        children.map(ex.cos),
        children.map(lambda c: ex.exp(ex.mul(ex.Const(ex.Fraction(1, 4)), c))),
        children.map(lambda c: ex.div(c, ex.add(ex.Const(3), ex.sin(c)))),
        children.map(lambda c: ex.sqrt(ex.add(ex.Const(2), ex.cos(c)))),
        children.map(lambda c: ex.ln(ex.add(ex.Const(2), ex.sin(c)))),
    )


exprs = st.recursive(_leaves(), _extend, max_leaves=12)
points = st.lists(st.floats(-1, 1), min_size=3, max_size=3)


def _ev(e, p):
    return ex.evaluate(e, dict(zip(NAMES, p)))


# --- parse -----------------------------------------------------------------------

def test_parse_sum_of_squares_structure():
    e = ex.parse("x^2 + y^2", ["x", "y"])
    assert isinstance(e, ex.Add)
    assert set(e.terms) == {ex.Pow(ex.Var("x"), 2), ex.Pow(ex.Var("y"), 2)}


def test_parse_zero_is_constant_zero():
    e = ex.parse("0", ["x"])
    assert e.is_zero


def test_parse_function_node_evaluates():
    e = ex.parse("sin(x*y)", ["x", "y"])
    assert isinstance(e, ex.Func) and e.name == "sin"
    assert ex.evaluate(e, {"x": 1, "y": 2}) == pytest.approx(math.sin(2), abs=1e-15)


def test_parse_rationals_and_decimals():
    e = ex.parse("3/4 + 0.25*x", ["x"])
    assert ex.evaluate(e, {"x": 2}) == pytest.approx(1.25)


def test_parse_precedence_and_unary_minus():
    e = ex.parse("-x^2 + 2*-y", ["x", "y"])
    assert ex.evaluate(e, {"x": 3, "y": 1}) == -11


def test_parse_syntax_error_reports_offset():
    with pytest.raises(ex.ParseError) as info:
        ex.parse("x + * y", ["x", "y"])
    assert info.value.offset == 4


def test_parse_undeclared_variable():
    with pytest.raises(ex.UndeclaredVariableError):
        ex.parse("x + w", Chart(["x", "y"], [[0, 1], [0, 1]]))


def test_parse_rejects_fractional_power():
    with pytest.raises(ex.ParseError):
        ex.parse("x^0.5", ["x"])


# --- differentiate -----------------------------------------------------------

def test_derivative_of_sum_of_squares():
    d = ex.differentiate(ex.parse("x^2 + y^2", ["x", "y"]), "x")
    for xv in (-1.5, 0.0, 2.0):
        assert ex.evaluate(d, {"x": xv, "y": 7.0}) == pytest.approx(2 * xv)


def test_derivative_chain_rule():
    d = ex.differentiate(ex.parse("sin(x*y)", ["x", "y"]), "x")
    ref = ex.parse("y*cos(x*y)", ["x", "y"])
    for p in ({"x": 0.3, "y": -1.2}, {"x": 2.0, "y": 0.5}):
        assert ex.evaluate(d, p) == pytest.approx(ex.evaluate(ref, p), abs=1e-14)


def test_derivative_of_constant_is_zero():
    assert ex.differentiate(ex.parse("17/3", ["x"]), "x").is_zero


def test_random_polynomials_against_central_differences(rng):
    names = ["x", "y", "z"]
    h = 1e-5
    for _ in range(5):
        terms = []
        for _ in range(6):
            c = ex.Const(ex.Fraction(int(rng.integers(-9, 10)), int(rng.integers(1, 5))))
            mono = [ex.Var(names[k]) for k in rng.integers(0, 3, size=int(rng.integers(0, 5)))]
            terms.append(ex.mul(c, *mono))
        p = ex.add(*terms)
        f = ex.lambdify(p, names)
        df = ex.lambdify(ex.differentiate(p, "x"), names)
        Q = rng.uniform(-1, 1, size=(100, 3))
        E = np.array([h, 0, 0])
        fd = (f(Q + E) - f(Q - E)) / (2 * h)
        assert np.max(np.abs(df(Q) - fd)) <= 1e-6


@given(exprs, points)
def test_derivative_matches_sympy(e, p):
    ref, syms = sym(ex.to_string(e), list(NAMES))
    for k, v in enumerate(NAMES):
        got = _ev(ex.differentiate(e, v), p)
        want = float(sp.diff(ref, syms[k]).subs(dict(zip(syms, p))))
        assert got == pytest.approx(want, rel=1e-9, abs=1e-9)


@given(exprs, exprs, st.floats(-3, 3), st.floats(-3, 3), points)
def test_derivative_is_linear(e1, e2, a, b, p):
    ca, cb = ex.as_expr(a), ex.as_expr(b)
    lhs = ex.differentiate(ex.add(ex.mul(ca, e1), ex.mul(cb, e2)), "y")
    rhs_val = float(ca.value) * _ev(ex.differentiate(e1, "y"), p) + float(cb.value) * _ev(ex.differentiate(e2, "y"), p)
    assert _ev(lhs, p) == pytest.approx(rhs_val, rel=1e-9, abs=1e-9)


@given(exprs, points)
def test_mixed_partials_commute(e, p):
    dxy = ex.differentiate(ex.differentiate(e, "x"), "y")
    dyx = ex.differentiate(ex.differentiate(e, "y"), "x")
    assert _ev(dxy, p) == pytest.approx(_ev(dyx, p), rel=1e-9, abs=1e-9)


@given(exprs, points)
def test_print_parse_roundtrip(e, p):
    back = ex.parse(ex.to_string(e), list(NAMES))
    assert _ev(back, p) == pytest.approx(_ev(e, p), rel=1e-12, abs=1e-12)


@given(exprs)
def test_print_parse_is_structurally_stable(e):
    once = ex.parse(ex.to_string(e), list(NAMES))
    twice = ex.parse(ex.to_string(once), list(NAMES))
    assert once == twice


# --- evaluate / lambdify -----------------------------------------------------------

def test_evaluate_sum_of_squares():
    assert ex.evaluate(ex.parse("x^2+y^2", ["x", "y"]), {"x": 3, "y": 4}) == 25


def test_evaluate_division_by_zero_reports_path():
    e = ex.parse("1 + 1/x", ["x"])
    with pytest.raises(ex.DomainError) as info:
        ex.evaluate(e, {"x": 0.0})
    assert info.value.path.startswith("root/add[")
    assert "1/x" in str(info.value)


def test_evaluate_ln_of_nonpositive():
    with pytest.raises(ex.DomainError):
        ex.evaluate(ex.parse("ln(x)", ["x"]), {"x": -1.0})


def test_evaluate_h_of_two():
    assert ex.evaluate(ex.parse("1+x^2", ["x"]), {"x": 2}) == 5


def test_evaluate_at_point_object():
    ch = Chart(["x", "y"], [[0, 5], [0, 5]])
    assert ex.evaluate(ex.parse("x*y", ch), ch.point([2, 3])) == 6


@given(exprs, st.lists(points, min_size=1, max_size=5))
def test_lambdify_agrees_with_evaluate(e, pts):
    f = ex.lambdify([[e, ex.differentiate(e, "z")]], list(NAMES))
    out = f(np.array(pts))
    for row, p in zip(out, pts):
        assert row[0, 0] == pytest.approx(_ev(e, p), rel=1e-12, abs=1e-12)
        assert row[0, 1] == pytest.approx(_ev(ex.differentiate(e, "z"), p), rel=1e-12, abs=1e-12)


def test_lambdify_domain_error_located():
    f = ex.lambdify([ex.parse("x", ["x"]), ex.parse("1/x", ["x"])], ["x"])
    with pytest.raises(ex.DomainError):
        f(np.array([[1.0], [0.0]]))


def test_substitute_and_variables():
    e = ex.parse("x*y + z", list(NAMES))
    s = ex.substitute(e, {"y": ex.Const(2)})
    assert ex.variables(s) == {"x", "z"}
    assert ex.evaluate(s, {"x": 1.5, "z": 1}) == 4


def test_simplification_identities():
    x = ex.Var("x")
    assert ex.add(x, ex.neg(x)).is_zero
    assert ex.mul(ex.ONE, x) == x
    assert ex.mul(ex.ZERO, ex.sin(x)).is_zero
    assert ex.power(x, 0) == ex.ONE


def test_expressions_are_immutable_and_hashable():
    e = ex.parse("x + 1", ["x"])
    with pytest.raises(AttributeError):
        e.terms = ()
    assert hash(e) == hash(ex.parse("x + 1", ["x"]))

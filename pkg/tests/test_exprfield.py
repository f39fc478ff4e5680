from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kflows import fd
from kflows.exprfield import (
    Bin,
    Call,
    EvalError,
    Neg,
    Num,
    ParseError,
    Var,
    compile_expr,
    diff,
    evaluate,
    parse,
    to_string,
)

CORPUS = [
    line.strip()
    for line in (Path(__file__).parent / "data" / "expressions.txt").read_text().splitlines()
    if line.strip() and not line.startswith("#")
]


def test_corpus_size():
    assert len(CORPUS) == 50


def test_parse_examples():
    e = parse("x1^2 + 2*x3*x4", 2)
    assert e == Bin("+", Bin("^", Var(0), Num(2.0)), Bin("*", Bin("*", Num(2.0), Var(2)), Var(3)))
    assert parse("re(z1)^2 + im(z1)^2", 1) == parse("x1^2 + x2^2", 1)
    assert parse("  x1*x2 ", 1) == parse("x1*x2", 1)


def test_precedence_and_associativity():
    assert parse("2^3^2", 1) == Bin("^", Num(2.0), Bin("^", Num(3.0), Num(2.0)))
    assert evaluate(parse("2^3^2", 1), [0, 0]) == 512
    assert evaluate(parse("-2^2", 1), [0, 0]) == -4
    assert evaluate(parse("8/4/2", 1), [0, 0]) == 1
    assert evaluate(parse("1 - 2 - 3", 1), [0, 0]) == -4


def test_parse_error_points_at_offending_token():
    with pytest.raises(ParseError) as info:
        parse("x1 + * 2", 1)
    assert info.value.offset == 5
    assert "x1 + * 2" in info.value.excerpt


@pytest.mark.parametrize("bad", ["x3", "foo(x1)", "x1 +", "(x1", "x1 x2", "x1^x2", "", "re(z2)", "x0"])
def test_malformed_inputs(bad):
    with pytest.raises(ParseError) as info:
        parse(bad, 1)
    assert 0 <= info.value.offset <= len(bad) + 1


def test_evaluation_examples():
    assert evaluate(parse("x1*x2", 1), [3, 4]) == 12
    assert evaluate(parse("exp(0)", 1), [0, 0]) == 1
    with pytest.raises(EvalError):
        evaluate(parse("ln(x1)", 1), [-1, 0])
    with pytest.raises(EvalError):
        evaluate(parse("1/x1", 1), [0, 0])
    with pytest.raises(EvalError):
        compile_expr(parse("sqrt(x1)", 1))([-1.0, 0.0])


def test_diff_examples():
    assert to_string(diff(parse("x1^2", 1), 0)) == "2*x1"
    assert to_string(diff(parse("x1", 1), 1)) == "0"
    d = diff(parse("sin(x1*x2)", 1), 0)
    assert evaluate(d, [1.0, 2.0]) == pytest.approx(2 * np.cos(2.0), abs=1e-10)


@pytest.mark.parametrize("src", CORPUS)
def test_corpus_round_trip(src):
    e = parse(src, 2)
    assert parse(to_string(e), 2) == e
    assert to_string(parse(to_string(e), 2)) == to_string(e)


@pytest.mark.parametrize("src", CORPUS)
def test_corpus_derivatives(src):
    e = parse(src, 2)
    f = compile_expr(e)
    grads = [compile_expr(diff(e, j)) for j in range(4)]
    rng = np.random.default_rng(7)
    for _ in range(100):
        x = rng.uniform(0.2, 1.5, 4)
        num = fd.gradient(f, x)
        sym = np.array([g(x) for g in grads])
        assert np.max(np.abs(sym - num)) <= 1e-6 * max(1.0, np.max(np.abs(num)))
        assert f(x) == pytest.approx(evaluate(e, x), rel=1e-15, abs=1e-300)


# random trees for round-trip properties
_leaf = st.one_of(
    st.builds(Var, st.integers(0, 3)),
    st.builds(Num, st.floats(0, 1e6, allow_nan=False).map(lambda v: float(round(v, 3)))),
)


def _extend(children):
    return st.one_of(
        st.builds(Neg, children),
        st.builds(Bin, st.sampled_from("+-*/"), children, children),
        st.builds(lambda a, c: Bin("^", a, Num(c)), children, st.sampled_from([2.0, 3.0, 0.5])),
        st.builds(Call, st.sampled_from(["exp", "ln", "sin", "sqrt", "abs"]), children),
    )


@settings(max_examples=300, deadline=None)
@given(st.recursive(_leaf, _extend, max_leaves=12))
def test_random_tree_print_parse(tree):
    text = to_string(tree)
    again = parse(text, 2)
    assert to_string(again) == text
    assert parse(to_string(again), 2) == again

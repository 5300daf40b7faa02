import pytest
from hypothesis import given, strategies as st

from qhenum.terms import (
    ArraySort,
    BOOL,
    ConstArray,
    Cmp,
    Exists,
    Forall,
    INT,
    IntLit,
    PLAIN,
    RankMismatch,
    Select,
    Signature,
    Store,
    UnboundVariable,
    Var,
    Add,
    And,
    check_sorts,
    demangle,
    free_vars,
    indexed,
    mangle,
    retag_free,
    substitute,
    term_from_text,
    term_to_text,
)

ARR = ArraySort(INT, INT)


def test_mangle_demangle():
    assert mangle("x", (None, False)) == "x"
    assert mangle("x", (None, True)) == "x!"
    assert mangle("x", (2, False)) == "x$2"
    assert mangle("x", (2, True)) == "x$2!"
    for text in ("x", "x!", "x$2", "x$2!", "pm"):
        base, tag = demangle(text)
        assert mangle(base, tag) == text


def test_parse_and_print_round_trip():
    env = {"x": INT, "y$1": INT, "a": ARR, "b": BOOL}
    for text in (
        "(+ x 1)",
        "(- x y$1)",
        "(- x)",
        "(ite b (select a x) 0)",
        "(store a x (+ x 1))",
        "(forall ((j Int)) (=> (<= 0 j) (= (select a j) 0)))",
        "(exists ((j Int)) (= j x))",
        "(distinct x y$1)",
        "(store (const-arr 0) 1 1)",
    ):
        term = term_from_text(text, env)
        again = term_from_text(term_to_text(term), env)
        assert term == again


def test_unknown_atom_rejected():
    with pytest.raises(UnboundVariable):
        term_from_text("(+ x 1)", {})


def test_sort_checking():
    x = Var("x", INT)
    assert check_sorts(Add((x, IntLit(1)))) == INT
    with pytest.raises(RankMismatch):
        check_sorts(Add((Var("b", BOOL), IntLit(1))))
    with pytest.raises(RankMismatch):
        check_sorts(Select(x, IntLit(0)))
    with pytest.raises(RankMismatch):
        check_sorts(Cmp("<", Var("b", BOOL), Var("c", BOOL)))
    assert check_sorts(Store(Var("a", ARR), x, x)) == ARR
    assert check_sorts(ConstArray(IntLit(0))) == ARR
    with pytest.raises(RankMismatch):
        check_sorts(ConstArray(Var("b", BOOL)))


def test_free_vars_respect_binders():
    env = {"x": INT, "a": ARR}
    term = term_from_text("(forall ((j Int)) (= (select a j) x))", env)
    names = {v.mangled for v in free_vars(term)}
    assert names == {"a", "x"}


def test_substitute_simple():
    x, y = Var("x", INT), Var("y", INT)
    term = Add((x, IntLit(1)))
    assert substitute(term, {x: y}) == Add((y, IntLit(1)))


def test_substitute_is_capture_avoiding():
    env = {"x": INT}
    term = term_from_text("(exists ((j Int)) (= j (+ x 1)))", env)
    j = Var("j", INT)
    out = substitute(term, {Var("x", INT): j})
    assert isinstance(out, Exists)
    (bound_name, _), = out.bound
    assert bound_name != "j"
    assert j in free_vars(out)


def test_retag_free():
    env = {"x$1": INT, "y": INT}
    term = term_from_text("(+ x$1 y)", env)
    out = retag_free(term, {indexed(1): PLAIN})
    names = {v.mangled for v in free_vars(out)}
    assert names == {"x", "y"}


def test_quantifier_shadowing_blocks_substitution():
    x = Var("x", INT)
    term = Forall((("x", INT),), Cmp("=", x, IntLit(0)))
    assert substitute(term, {x: IntLit(5)}) == term


names = st.sampled_from(["x", "y", "z", "acc"])


@st.composite
def int_terms(draw, depth=0):
    if depth > 2 or draw(st.booleans()):
        if draw(st.booleans()):
            return IntLit(draw(st.integers(min_value=-9, max_value=9)))
        return Var(draw(names), INT)
    return Add((draw(int_terms(depth + 1)), draw(int_terms(depth + 1))))


@given(int_terms())
def test_text_round_trip_any(term):
    env = {n: INT for n in ("x", "y", "z", "acc")}
    assert term_from_text(term_to_text(term), env) == term


@given(int_terms(), st.integers(min_value=-9, max_value=9))
def test_substitution_eliminates_variable(term, k):
    x = Var("x", INT)
    out = substitute(term, {x: IntLit(k)})
    assert x not in free_vars(out)

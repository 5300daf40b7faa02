import pytest
from hypothesis import given, strategies as st

from qhenum.sexpr import SexprError, parse_all, parse_one, to_text


def test_atoms():
    assert parse_one("42") == 42
    assert parse_one("-7") == -7
    assert parse_one("foo") == "foo"
    assert parse_one("-") == "-"


def test_nested_lists():
    assert parse_one("(a (b 1) ())") == ["a", ["b", 1], []]


def test_comments_and_whitespace():
    text = """
    ; leading comment
    (and x ; inline comment
         y)
    """
    assert parse_one(text) == ["and", "x", "y"]


def test_parse_all_multiple_forms():
    assert parse_all("(a) (b 2)") == [["a"], ["b", 2]]


def test_quoted_symbols():
    assert parse_one("(|odd name| 1)") == ["|odd name|", 1]


@pytest.mark.parametrize("bad", ["(a", ")", "(a))", ""])
def test_malformed_input(bad):
    with pytest.raises(SexprError):
        parse_one(bad)


def test_to_text_round_trip():
    expr = ["store", ["as", "const"], -3, "x$1!"]
    assert parse_one(to_text(expr)) == expr


atoms = st.one_of(
    st.integers(min_value=-999, max_value=999),
    st.from_regex(r"[a-z][a-z0-9\.\$!]{0,6}", fullmatch=True),
)
sexprs = st.recursive(atoms, lambda inner: st.lists(inner, max_size=4), max_leaves=20)


@given(sexprs)
def test_round_trip_any(expr):
    assert parse_one(to_text(expr)) == expr

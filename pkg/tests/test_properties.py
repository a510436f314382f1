"""Property-based checks for the scalar value semantics."""

import pytest
from hypothesis import given, strategies as st

from dbnet.errors import RuntimeFault, TypeMismatch
from dbnet.values import (
    ValueKind,
    arith,
    coerce,
    compare,
    logic_and,
    logic_not,
    logic_or,
)

tri = st.sampled_from([True, False, None])
numbers = st.one_of(
    st.integers(min_value=-10**9, max_value=10**9),
    st.floats(allow_nan=False, allow_infinity=False, width=32))
maybe_numbers = st.one_of(st.none(), numbers)


@given(tri, tri)
def test_logic_de_morgan(a, b):
    assert logic_not(logic_and(a, b)) == logic_or(logic_not(a), logic_not(b))
    assert logic_not(logic_or(a, b)) == logic_and(logic_not(a), logic_not(b))


@given(tri, tri)
def test_logic_commutative(a, b):
    assert logic_and(a, b) == logic_and(b, a)
    assert logic_or(a, b) == logic_or(b, a)


@given(maybe_numbers, maybe_numbers)
def test_comparison_trichotomy_or_unknown(a, b):
    results = [compare(op, a, b) for op in ("<", "=", ">")]
    if a is None or b is None:
        assert results == [None, None, None]
    else:
        assert results.count(True) == 1
        assert compare("!=", a, b) == (not compare("=", a, b))
        assert compare("<=", a, b) == (compare("<", a, b) or compare("=", a, b))


@given(maybe_numbers, maybe_numbers)
def test_arith_null_propagation_and_symmetry(a, b):
    if a is None or b is None:
        for op in ("+", "-", "*", "/"):
            assert arith(op, a, b) is None
    else:
        assert arith("+", a, b) == arith("+", b, a)
        assert arith("*", a, b) == arith("*", b, a)
        assert arith("-", a, b) == -arith("-", b, a)


@given(numbers)
def test_division_semantics(a):
    if a != 0:
        assert isinstance(arith("/", a, a), float)  # always float division
        assert arith("/", a, a) == pytest.approx(1.0)
    with pytest.raises(RuntimeFault):
        arith("/", a, 0)


@given(st.integers(min_value=-10**12, max_value=10**12))
def test_coerce_widens_ints_into_float(v):
    assert coerce(ValueKind.FLOAT, v) == float(v)
    assert coerce(ValueKind.INT, v) == v
    assert coerce(ValueKind.TS, v) == v


@given(st.sampled_from(list(ValueKind)))
def test_coerce_null_passthrough_and_bool_exclusion(kind):
    assert coerce(kind, None) is None
    if kind is not ValueKind.BOOL:
        with pytest.raises(TypeMismatch):
            coerce(kind, True)


@given(st.one_of(numbers, st.text(max_size=5), st.booleans()),
       st.one_of(numbers, st.text(max_size=5), st.booleans()))
def test_compare_requires_compatible_kinds(a, b):
    def bucket(v):
        if isinstance(v, bool):
            return "bool"
        return "num" if isinstance(v, (int, float)) else "text"

    if bucket(a) != bucket(b):
        with pytest.raises(TypeMismatch):
            compare("=", a, b)
    else:
        assert compare("=", a, b) in (True, False)

"""Value domain: construction, equality, canonical text round-trips."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sendkernel.sexpr import ParseError, atom, dumps, equal, is_atom, is_pair, pair, parse


def sexprs(max_leaves=40):
    return st.recursive(
        st.integers(min_value=0, max_value=10**30),
        lambda inner: st.tuples(inner, inner),
        max_leaves=max_leaves,
    )


def random_sexpr(rng, depth):
    if depth <= 0 or rng.random() < 0.4:
        return rng.randrange(0, 1 << rng.randrange(1, 64))
    return (random_sexpr(rng, depth - 1), random_sexpr(rng, depth - 1))


class TestConstruction:
    def test_atom_validates(self):
        assert atom(0) == 0
        assert atom(12345678901234567890) == 12345678901234567890
        with pytest.raises(ValueError):
            atom(-1)
        with pytest.raises(TypeError):
            atom(True)
        with pytest.raises(TypeError):
            atom("5")

    def test_predicates(self):
        assert is_atom(7) and not is_pair(7)
        assert is_pair((1, 2)) and not is_atom((1, 2))

    def test_pair_builds_tuple(self):
        assert pair(1, pair(2, 0)) == (1, (2, 0))


class TestEqual:
    def test_basic(self):
        assert equal(5, 5)
        assert not equal(5, 6)
        assert not equal(5, (5, 5))
        assert equal((1, (2, 0)), (1, (2, 0)))
        assert not equal((1, (2, 0)), (1, (2, 1)))

    @given(sexprs())
    def test_reflexive(self, x):
        assert equal(x, x)

    @given(sexprs(), sexprs())
    def test_symmetric_and_matches_tuple_eq(self, x, y):
        assert equal(x, y) == equal(y, x) == (x == y)

    def test_deep_chain_no_recursion(self):
        # 200k-deep right-nested chain; a recursive walk would blow the stack.
        a = 0
        b = 0
        for i in range(200_000):
            a = (i, a)
            b = (i, b)
        assert equal(a, b)
        assert not equal(a, (0, a))


class TestCanonicalText:
    def test_frozen_examples(self):
        assert dumps(5) == "5"
        assert dumps((1, (2, 0))) == "[1,[2,0]]"
        assert dumps((16, (42, 200))) == "[16,[42,200]]"
        assert parse("5") == 5
        assert parse("[1,[2,0]]") == (1, (2, 0))

    def test_whitespace_tolerated_on_input_only(self):
        assert parse(" [ 1 , [ 2 , 0 ] ] ") == (1, (2, 0))
        assert "," in dumps((1, 2)) and " " not in dumps((1, 2))

    @given(sexprs())
    def test_round_trip(self, x):
        assert parse(dumps(x)) == x

    @given(sexprs(), sexprs())
    def test_injective(self, x, y):
        if x != y:
            assert dumps(x) != dumps(y)

    def test_round_trip_randomized_deep(self):
        rng = random.Random(0xC0FFEE)
        for _ in range(300):
            x = random_sexpr(rng, 8)
            assert parse(dumps(x)) == x

    def test_deep_chain_round_trip(self):
        # == on tuples recurses inside CPython and raises RecursionError at
        # this depth, which is exactly why equal() walks iteratively.
        x = 0
        for i in range(100_000):
            x = (i % 1000, x)
        assert equal(parse(dumps(x)), x)

    @pytest.mark.parametrize(
        "bad",
        ["", "[", "[1", "[1,", "[1,2", "]", "01", "[01,2]", "1 2", "[1,2]]", "[1;2]", "-3", "[,1]"],
    )
    def test_rejects_malformed(self, bad):
        with pytest.raises(ParseError):
            parse(bad)

    def test_error_offset(self):
        err = None
        try:
            parse("[1,[02,3]]")
        except ParseError as e:
            err = e
        assert err is not None and err.offset == 4

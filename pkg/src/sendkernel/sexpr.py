"""S-expression values over unbounded naturals.

A value is either an atom (a non-negative Python int, arbitrary precision)
or an ordered pair of two values (a 2-tuple).  The canonical text form is

    sexpr := NAT | "[" sexpr "," sexpr "]"

with no whitespace emitted and no leading zeros ("0" is the only natural
starting with a zero digit).  Whitespace between tokens is tolerated on
input only.

equal/dumps/parse must not rely on host recursion: values nest to depths
far beyond any recursion limit (logs are right-nested pair chains), so all
three walk with explicit stacks.
"""

from __future__ import annotations

from typing import Union

SExpr = Union[int, tuple]

__all__ = [
    "SExpr",
    "ParseError",
    "atom",
    "pair",
    "is_atom",
    "is_pair",
    "equal",
    "dumps",
    "parse",
    "chain",
    "unchain",
]


class ParseError(ValueError):
    """Raised on malformed canonical text; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


def is_atom(x: SExpr) -> bool:
    return isinstance(x, int)


def is_pair(x: SExpr) -> bool:
    return isinstance(x, tuple)


def atom(n: int) -> int:
    """Validated atom constructor for values arriving from outside the kernel."""
    if isinstance(n, bool) or not isinstance(n, int):
        raise TypeError(f"atom requires an int, got {type(n).__name__}")
    if n < 0:
        raise ValueError(f"atom requires a natural number, got {n}")
    return n


def pair(head: SExpr, tail: SExpr) -> tuple:
    return (head, tail)


def equal(a: SExpr, b: SExpr) -> bool:
    """Structural equality, worklist-based."""
    stack = [(a, b)]
    while stack:
        x, y = stack.pop()
        if x is y:
            continue
        if isinstance(x, int):
            if not isinstance(y, int) or x != y:
                return False
        else:
            if isinstance(y, int):
                return False
            stack.append((x[0], y[0]))
            stack.append((x[1], y[1]))
    return True


_CLOSE = object()
_COMMA = object()


def dumps(x: SExpr) -> str:
    """Canonical text of a value: injective, whitespace-free."""
    out: list[str] = []
    stack: list = [x]
    while stack:
        v = stack.pop()
        if v is _COMMA:
            out.append(",")
        elif v is _CLOSE:
            out.append("]")
        elif isinstance(v, int):
            out.append(str(v))
        else:
            out.append("[")
            stack.append(_CLOSE)
            stack.append(v[1])
            stack.append(_COMMA)
            stack.append(v[0])
    return "".join(out)


_WS = " \t\r\n"


def parse(text: str) -> SExpr:
    """Parse canonical text back to a value.  parse(dumps(x)) == x.

    Input may contain whitespace between tokens.  Rejects leading zeros,
    trailing garbage and unterminated pairs, reporting the offense offset.
    """
    n = len(text)
    i = 0
    # Each open pair waits first for its head ([] marker None), then, once
    # the comma is consumed, for its tail (marker holds the head).
    stack: list = []
    value: SExpr = 0
    have_value = False

    while True:
        while i < n and text[i] in _WS:
            i += 1
        if not have_value:
            if i >= n:
                raise ParseError("unexpected end of input, expected a value", i)
            ch = text[i]
            if ch == "[":
                stack.append(None)
                i += 1
                continue
            if not ch.isdigit():
                raise ParseError(f"unexpected character {ch!r}", i)
            start = i
            while i < n and text[i].isdigit():
                i += 1
            digits = text[start:i]
            if len(digits) > 1 and digits[0] == "0":
                raise ParseError("leading zeros are not canonical", start)
            value = int(digits)
            have_value = True
            continue
        # A complete value in hand: either we are done, or it fills a slot
        # in the innermost open pair.
        if not stack:
            if i < n:
                raise ParseError("trailing input after value", i)
            return value
        if stack[-1] is None:
            if i >= n or text[i] != ",":
                raise ParseError("expected ','", i)
            stack[-1] = (value,)
            have_value = False
            i += 1
        else:
            if i >= n or text[i] != "]":
                raise ParseError("expected ']'", i)
            (head,) = stack.pop()
            value = (head, value)
            i += 1


def chain(items) -> SExpr:
    """Encode a Python sequence as the right-nested list [x0,[x1,[...,0]]]."""
    out: SExpr = 0
    for item in reversed(items):
        out = (item, out)
    return out


def unchain(x: SExpr) -> list:
    """Decode a right-nested list back to a Python list.

    The chain must terminate in the atom 0; anything else is malformed.
    """
    items = []
    while isinstance(x, tuple):
        items.append(x[0])
        x = x[1]
    if x != 0:
        raise ValueError(f"chain ends in atom {x}, expected 0")
    return items

"""Program construction toolkit.

Raw programs are right-nested instruction chains and quickly become
unreadable; this builder tracks the static context depth so values can be
re-pushed by absolute position, and papers over two traps:

  * pushing atoms 2/3/5 raw would collide with the send/recall/quote
    instruction heads, so they are emitted as quotes (same meaning);
  * a program whose first instruction pushes 6 or 7 raw would classify as
    a pair former or an outward address when used as a send target, so
    finished programs get the head rewritten to an equivalent quote.

Branching has no dedicated instruction.  The BRANCH operator picks one of
two quoted subprograms by the atom/pair shape of a condition value, and
the chosen subprogram is then sent one packed argument: it runs in the
sender's own context (positions 2/3/4 inherited) but with a fresh value
stack, so everything an arm needs beyond self/log/caller must travel in
that argument.  Arms loop by receiving their own code in the argument and
re-sending to it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

from .dispatch import (
    B_BRANCH,
    B_EQUAL,
    B_HEAD,
    B_INCREMENT,
    B_PAIR,
    B_TAIL,
    EXTERNAL_TAG,
    OP_FAIL,
    OP_QUOTE,
    OP_RECALL,
    OP_SEND,
    PAIR_TAG,
)
from .sexpr import SExpr, is_atom, is_pair

__all__ = [
    "Const",
    "Slot",
    "ProgramBuilder",
    "runnable",
    "ABORT_PROGRAM",
    "SEED_PROGRAM",
    "SEED_MESSAGE",
    "SEED_SELF",
    "SEED_LOG",
    "SEED_CALLER",
]

SEED_PROGRAM = 0
SEED_MESSAGE = 1
SEED_SELF = 2
SEED_LOG = 3
SEED_CALLER = 4

# Push a throwaway value, then hit the abort instruction.
ABORT_PROGRAM: SExpr = (0, OP_FAIL)


@dataclass(frozen=True)
class Const:
    value: SExpr


@dataclass(frozen=True)
class Slot:
    index: int


Source = Union[Const, Slot]


def runnable(program: SExpr) -> SExpr:
    """Make a program safe to use as a send target.

    Pair formers and outward addresses outrank ephemeral dispatch, so a
    head of 6 or 7 is re-spelled as the equivalent quote instruction.
    """
    if is_atom(program):
        raise ValueError("a send-target program must be a pair")
    if program[0] == PAIR_TAG or program[0] == EXTERNAL_TAG:
        return (OP_QUOTE, program)
    return program


class ProgramBuilder:
    """Single-use builder; finish with halt()/halt_with()/fail()."""

    def __init__(self) -> None:
        self._ops: list[tuple] = []
        self.depth = 5  # program, message, self, log, caller
        self._finished = False

    # instruction-level emitters -------------------------------------------

    def _slot(self) -> Slot:
        s = Slot(self.depth)
        self.depth += 1
        return s

    def push(self, value: SExpr) -> Slot:
        if is_atom(value) and value in (OP_SEND, OP_RECALL, OP_QUOTE):
            return self.quote(value)
        self._ops.append(("push", value))
        return self._slot()

    def quote(self, value: SExpr) -> Slot:
        self._ops.append(("quote", value))
        return self._slot()

    def recall(self, index: int) -> Slot:
        if not 0 <= index < self.depth:
            raise ValueError(f"recall of slot {index} at depth {self.depth}")
        self._ops.append(("recall", index))
        return self._slot()

    def send(self) -> Slot:
        if self.depth < 2:
            raise ValueError("send needs a target and a message on the stack")
        self._ops.append(("send",))
        return self._slot()

    # value plumbing --------------------------------------------------------

    def value(self, src: Source) -> Slot:
        """Materialize a source on top of the stack."""
        if isinstance(src, Const):
            return self.push(src.value)
        if isinstance(src, Slot):
            return self.recall(src.index)
        raise TypeError(f"expected Const or Slot, got {type(src).__name__}")

    def call(self, target: Source, message: Source) -> Slot:
        """Send message to target; the send instruction wants the target on top."""
        self.value(message)
        self.value(target)
        return self.send()

    def cons(self, head: Source, tail: Source) -> Slot:
        """Build the pair [head, tail] out of two sources."""
        if isinstance(head, Const):
            return self.call(Const((PAIR_TAG, head.value)), tail)
        former = self.call(Const(B_PAIR), head)
        return self.call(former, tail)

    def head(self, src: Source) -> Slot:
        return self.call(Const(B_HEAD), src)

    def tail(self, src: Source) -> Slot:
        return self.call(Const(B_TAIL), src)

    def increment(self, src: Source) -> Slot:
        return self.call(Const(B_INCREMENT), src)

    def eq(self, a: Source, b: Source) -> Slot:
        """Atom 0 when equal, the [a,b] pair itself when not."""
        probe = self.cons(a, b)
        return self.call(Const(B_EQUAL), probe)

    def branch(self, cond: Source, when_atom: SExpr, when_pair: SExpr, arg: Source) -> Slot:
        """Run one of two subprograms on arg, picked by cond's shape."""
        arms = (runnable(when_atom), (runnable(when_pair), 0))
        selector = self.cons(cond, Const(arms))
        chosen = self.call(Const(B_BRANCH), selector)
        return self.call(chosen, arg)

    # terminators ------------------------------------------------------------

    def _finalize(self, end: SExpr) -> SExpr:
        if self._finished:
            raise RuntimeError("builder already finished")
        self._finished = True
        out = end
        for op in reversed(self._ops):
            kind = op[0]
            if kind == "push":
                out = (op[1], out)
            elif kind == "quote":
                out = (OP_QUOTE, (op[1], out))
            elif kind == "recall":
                out = (OP_RECALL, (op[1], out))
            else:
                out = (OP_SEND, out)
        if is_pair(out) and (out[0] == PAIR_TAG or out[0] == EXTERNAL_TAG):
            out = (OP_QUOTE, out)
        return out

    def halt(self) -> SExpr:
        """Finish: the value on top of the stack is the result."""
        return self._finalize(0)

    def halt_with(self, src: Source) -> SExpr:
        self.value(src)
        return self.halt()

    def fail(self) -> SExpr:
        """Finish with the abort instruction."""
        return self._finalize(OP_FAIL)

"""Kernel state: an append-only sequence of log entries, plus projections.

An entry (receiver, caller, message) says: `receiver` was sent `message`
by `caller`.  An object's log is the subsequence addressed to it; its
first entry is the birth record, whose message is the object's program.
Object 0 is the kernel itself: every creation appends a creation record
(0, creator, new_id) to its log, which doubles as the identity registry.

During a transaction, lookups see the committed prefix plus the
transaction's own pending entries (read-your-writes); nothing is visible
to other transactions until commit.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Optional, Union

from .sexpr import SExpr, dumps, is_atom

KERNEL_IDENTITY = 0
EXTERNAL_IDENTITY = 1

__all__ = [
    "ABORT",
    "Abort",
    "LogEntry",
    "ExternalSend",
    "Effects",
    "TxRecord",
    "TxResult",
    "KernelState",
    "StateView",
    "UndefinedObjectError",
    "encode_log",
]


class Abort:
    """Distinguished non-value marking a failed transaction.

    Not an s-expression: it cannot appear inside any message or log.
    """

    _instance: Optional["Abort"] = None

    def __new__(cls) -> "Abort":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "ABORT"


ABORT = Abort()

TxResult = Union[SExpr, Abort]


class LogEntry(NamedTuple):
    receiver: int
    caller: int
    message: SExpr


class ExternalSend(NamedTuple):
    sender: int
    target: SExpr  # the full outward-form pair the program addressed
    message: SExpr


@dataclass
class Effects:
    """A transaction's pending state: log appends and outbound sends.

    Discarded wholesale on abort; applied wholesale on commit.
    """

    entries: list[LogEntry] = field(default_factory=list)
    externals: list[ExternalSend] = field(default_factory=list)


@dataclass(frozen=True)
class TxRecord:
    """One admitted transaction's permanent outcome.

    `externals` is empty whenever `result` is ABORT: an aborted
    transaction releases nothing to the outside world.
    """

    tx: SExpr
    result: TxResult
    externals: tuple[ExternalSend, ...] = ()

    @property
    def committed(self) -> bool:
        return not isinstance(self.result, Abort)


class UndefinedObjectError(KeyError):
    """Projection of a program from an identity with no birth record."""


class KernelState:
    """Committed entries plus derived per-receiver indexes.

    The indexes are caches only: they are rebuilt from the entry list and
    never persisted.  Entries are appended by commits and never mutated,
    which is what makes prefix views (snapshots) free.
    """

    __slots__ = ("entries", "_positions", "_created")

    def __init__(self) -> None:
        self.entries: list[LogEntry] = []
        self._positions: dict[int, list[int]] = {}
        self._created: dict[int, int] = {}

    @classmethod
    def from_entries(cls, entries: Iterable[LogEntry]) -> "KernelState":
        st = cls()
        st.append_all(entries)
        return st

    @property
    def size(self) -> int:
        return len(self.entries)

    def append_all(self, entries: Iterable[LogEntry]) -> None:
        for e in entries:
            if not isinstance(e, LogEntry):
                e = LogEntry(*e)
            pos = len(self.entries)
            self.entries.append(e)
            self._positions.setdefault(e.receiver, []).append(pos)
            if e.receiver == KERNEL_IDENTITY and is_atom(e.message):
                self._created.setdefault(e.message, pos)

    def created_at(self, ident: int) -> Optional[int]:
        """Position of the creation record for ident, if any."""
        return self._created.get(ident)

    def positions_of(self, receiver: int) -> list[int]:
        return self._positions.get(receiver, ())  # type: ignore[return-value]

    def canonical_lines(self) -> list[str]:
        """One line per entry; bit-exact state comparison format."""
        return [f"{e.receiver} {e.caller} {dumps(e.message)}" for e in self.entries]


class StateView:
    """Lookups over a committed prefix extended by pending entries.

    `k_len` pins the committed prefix so concurrent appends beyond it are
    invisible; `pending` is the live (growing) entry list of the
    transaction being executed.  An optional tracer observes every
    projection for the read-confinement checks.
    """

    __slots__ = ("kstate", "k_len", "pending", "tracer")

    def __init__(
        self,
        kstate: KernelState,
        k_len: Optional[int] = None,
        pending: Optional[list[LogEntry]] = None,
        tracer: Optional["object"] = None,
    ) -> None:
        self.kstate = kstate
        self.k_len = kstate.size if k_len is None else k_len
        self.pending = pending if pending is not None else []
        self.tracer = tracer

    def _prefix_positions(self, receiver: int) -> list[int]:
        positions = self.kstate.positions_of(receiver)
        cut = bisect_left(positions, self.k_len)
        return positions[:cut]

    def log_of(self, receiver: int) -> list[tuple[int, SExpr]]:
        """The (caller, message) rows addressed to receiver, oldest first."""
        if self.tracer is not None:
            self.tracer.on_projection("log", receiver)
        entries = self.kstate.entries
        rows = [
            (entries[p].caller, entries[p].message)
            for p in self._prefix_positions(receiver)
        ]
        for e in self.pending:
            if e.receiver == receiver:
                rows.append((e.caller, e.message))
        return rows

    def exists(self, ident: SExpr) -> bool:
        """True iff ident is a created identity (has a creation record)."""
        if self.tracer is not None:
            self.tracer.on_projection("exists", ident)
        if not is_atom(ident) or ident == KERNEL_IDENTITY:
            return False
        pos = self.kstate.created_at(ident)
        if pos is not None and pos < self.k_len:
            return True
        for e in self.pending:
            if e.receiver == KERNEL_IDENTITY and e.message == ident:
                return True
        return False

    def program_of(self, ident: int) -> SExpr:
        """The birth-record message: immutable for the object's lifetime."""
        if self.tracer is not None:
            self.tracer.on_projection("program", ident)
        positions = self._prefix_positions(ident)
        if positions:
            return self.kstate.entries[positions[0]].message
        for e in self.pending:
            if e.receiver == ident:
                return e.message
        raise UndefinedObjectError(ident)

    def registry_len(self) -> int:
        """Number of creation records, i.e. |log(0)|; feeds the allocators."""
        if self.tracer is not None:
            self.tracer.on_projection("registry", KERNEL_IDENTITY)
        n = len(self._prefix_positions(KERNEL_IDENTITY))
        for e in self.pending:
            if e.receiver == KERNEL_IDENTITY:
                n += 1
        return n


def encode_log(rows: Iterable[tuple[int, SExpr]]) -> SExpr:
    """Encode (caller, message) rows as a pair chain, oldest entry outermost.

    [] -> 0;  [e0, e1, e2] -> [e0,[e1,[e2,0]]] with each row as [caller,msg].
    Injective: distinct logs encode to distinct values.
    """
    chain: SExpr = 0
    rows = list(rows)
    for caller, message in reversed(rows):
        chain = ((caller, message), chain)
    return chain

"""Multiple coordination instances wired together by their outward sends.

Instances share nothing: each owns a kernel, a committed log, and a record
list.  The only traffic between them is the outward send, whose target
[7, [instanceKey, destination]] names a peer instance and something in it.
The router drains each instance's undelivered sends in admission order and
turns every one into a fresh transaction on the destination instance, so a
cross-instance message arrives exactly the way outside input does: as a
new top-level submission whose frames see caller 1.  Anything unroutable
(atom destination, non-atom key, unknown key) is kept as a dead letter
rather than dropped.

A destination abort therefore cannot disturb the origin: the origin's
transaction committed before routing even saw the send, and the failed
delivery is just an aborted record on the destination.

replicate() is the replication check: several independently built replicas
re-execute a store's transaction stream, and each outcome is compared
against the recorded one.  Zero divergence across replicas is the
determinism claim made operational; a replica with a perturbed kernel
makes the detector itself testable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from .assembler import SEED_MESSAGE, Const, ProgramBuilder, Slot
from .durability import Store
from .sexpr import SExpr, equal, is_atom, is_pair
from .state import ExternalSend, TxRecord
from .txn import Kernel, KernelConfig, SystemState

__all__ = [
    "Instance",
    "DeadLetter",
    "PumpReport",
    "RoutingLimit",
    "Router",
    "forwarding_tx",
    "ReplicaDivergence",
    "replicate",
]


class RoutingLimit(RuntimeError):
    """pump() exceeded its delivery budget without quiescing."""


@dataclass
class DeadLetter:
    origin: int
    tag: tuple
    send: ExternalSend
    reason: str


@dataclass
class PumpReport:
    deliveries: int
    dead: int  # dead letters added by this pump


class Instance:
    """One named coordination instance plus its delivery cursor.

    With a durable backing, submissions go through the store and the
    delivery cursor starts past recovered records: replaying old outward
    sends is redelivery policy, not routing policy.
    """

    def __init__(self, key: int, kernel: Kernel, durable=None):
        self.key = key
        self.kernel = kernel
        self.durable = durable
        self.system = durable.system if durable is not None else SystemState.fresh()
        self._seq = len(self.system.records)
        self._index = 0

    def submit(self, tx: SExpr) -> TxRecord:
        if self.durable is not None:
            return self.durable.submit(tx)
        return self.kernel.submit(self.system, tx)

    def take_external(self) -> Optional[tuple[tuple[int, int], ExternalSend]]:
        """Next undelivered outward send, tagged (record seq, index)."""
        records = self.system.records
        while self._seq < len(records):
            sends = records[self._seq].externals
            if self._index < len(sends):
                tag = (self._seq, self._index)
                send = sends[self._index]
                self._index += 1
                return tag, send
            self._seq += 1
            self._index = 0
        return None

    def canonical_lines(self) -> list[str]:
        return self.system.kernel.canonical_lines()


def forwarding_tx(send: ExternalSend, destination: SExpr) -> SExpr:
    """Default translation: deliver the payload to the named destination.

    The submitted program re-sends the routed message inside the target
    instance, so the receiving object sees it from caller 1.
    """
    b = ProgramBuilder()
    b.call(Const(destination), Slot(SEED_MESSAGE))
    return (b.halt(), send.message)


Proxy = Callable[[ExternalSend, SExpr], SExpr]


class Router:
    """Key-addressed instances plus the delivery loop between them."""

    def __init__(self) -> None:
        self.instances: dict[int, Instance] = {}
        self.proxies: dict[int, Proxy] = {}
        self.dead_letters: list[DeadLetter] = []

    def add_instance(
        self,
        key: int,
        config: Optional[KernelConfig] = None,
        kernel: Optional[Kernel] = None,
        proxy: Optional[Proxy] = None,
        durable=None,
    ) -> Instance:
        if not is_atom(key):
            raise ValueError("instance key must be an atom")
        if key in self.instances:
            raise ValueError(f"instance {key} already exists")
        if durable is not None:
            instance = Instance(key, durable.kernel, durable)
        else:
            instance = Instance(key, kernel or Kernel(config))
        self.instances[key] = instance
        if proxy is not None:
            self.proxies[key] = proxy
        return instance

    def submit(self, key: int, tx: SExpr) -> TxRecord:
        return self.instances[key].submit(tx)

    def _deliver(self, origin: int, tag: tuple, send: ExternalSend) -> None:
        addressed = send.target[1]  # target is the [7, x] pair itself
        if not is_pair(addressed):
            self.dead_letters.append(DeadLetter(origin, tag, send, "destination is not a pair"))
            return
        key, destination = addressed
        if not is_atom(key):
            self.dead_letters.append(DeadLetter(origin, tag, send, "instance key is not an atom"))
            return
        instance = self.instances.get(key)
        if instance is None:
            self.dead_letters.append(DeadLetter(origin, tag, send, f"no instance {key}"))
            return
        proxy = self.proxies.get(key, forwarding_tx)
        instance.submit(proxy(send, destination))

    def pump(self, max_hops: int = 10_000) -> PumpReport:
        """Deliver until every instance is drained.

        Each delivery may commit new outward sends anywhere, including the
        origin, so draining loops until a full pass moves nothing.  The
        hop budget turns a ping-pong loop into an error instead of a hang.
        """
        delivered = 0
        dead_before = len(self.dead_letters)
        progress = True
        while progress:
            progress = False
            for instance in list(self.instances.values()):
                while True:
                    item = instance.take_external()
                    if item is None:
                        break
                    delivered += 1
                    if delivered > max_hops:
                        raise RoutingLimit(f"exceeded {max_hops} deliveries")
                    self._deliver(instance.key, *item)
                    progress = True
        return PumpReport(delivered, len(self.dead_letters) - dead_before)


# replication ----------------------------------------------------------------


@dataclass
class ReplicaDivergence:
    replica: int
    seq: int
    field: str

    def __str__(self) -> str:
        return f"replica {self.replica} diverges from record {self.seq} on {self.field}"


def _row_mismatch(recorded, replayed, fields) -> bool:
    if len(recorded) != len(replayed):
        return True
    for a, b in zip(recorded, replayed):
        for f in fields:
            if not equal(getattr(a, f), getattr(b, f)):
                return True
    return False


def replicate(
    store: Store,
    n: int = 3,
    kernel_factory: Optional[Callable[[int], Kernel]] = None,
) -> tuple[list[SystemState], Optional[ReplicaDivergence]]:
    """Rebuild a store's history on n independent replicas.

    Every replica re-executes the recorded transaction stream from empty
    and must reproduce each record exactly.  On the first disagreement the
    recorded delta is authoritative: the divergence is reported and the
    partial replicas are returned as built so far.
    """
    replicas = []
    for r in range(n):
        kernel = kernel_factory(r) if kernel_factory else Kernel(store.config)
        system = SystemState.fresh()
        for record in store.records:
            outcome = kernel.execute(system.kernel, system.k_len, record.tx)
            if outcome.committed != record.committed:
                return replicas, ReplicaDivergence(r, record.seq, "result")
            if record.committed and not equal(outcome.result, record.result):
                return replicas, ReplicaDivergence(r, record.seq, "result")
            if _row_mismatch(
                record.entries, outcome.entries, ("receiver", "caller", "message")
            ):
                return replicas, ReplicaDivergence(r, record.seq, "delta")
            if _row_mismatch(
                record.externals, outcome.externals, ("sender", "target", "message")
            ):
                return replicas, ReplicaDivergence(r, record.seq, "externals")
            kernel.apply(system, record.tx, outcome)
        replicas.append(system)
    return replicas, None

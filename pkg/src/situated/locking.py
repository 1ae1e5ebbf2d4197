"""Distributed mutual exclusion over path-projection segments.

Decentralized, Ricart-Agrawala style: a node claims the segments of a
projection (projection plus hull) by broadcasting the claim to every alive
node and granting it only once every one of them has acknowledged. A node
withholds its acknowledgement while it holds a conflicting granted claim or
a conflicting outstanding claim with precedence, so two conflicting claims
can never both be granted. Precedence is the total order (priority desc,
projection id asc, claim tick asc) and applies only among waiting claims:
a granted claim is never revoked.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .environment import SyncUpdate, VirtualEnvironment


class LockError(Exception):
    pass


@dataclass(frozen=True)
class Claim:
    projection_id: int
    priority: int
    segments: frozenset[int]
    requester: str
    claim_tick: int

    def __post_init__(self):
        if not self.segments:
            raise LockError("claim needs at least one segment")


def claim_order(claim: Claim) -> tuple[int, int, int]:
    return (-claim.priority, claim.projection_id, claim.claim_tick)


def conflicts(a: Claim, b: Claim) -> bool:
    return bool(a.segments & b.segments)


@dataclass
class ClaimRecord:
    claim: Claim
    remaining: frozenset[int]
    acks: set[str] = field(default_factory=set)
    granted: bool = False
    submit_tick: int = 0
    grant_tick: int | None = None


class ClaimTable:
    def __init__(self):
        self.records: dict[int, ClaimRecord] = {}

    def add(self, claim: Claim, submit_tick: int = 0) -> ClaimRecord:
        if claim.projection_id in self.records:
            raise LockError(f"duplicate projection id {claim.projection_id}")
        record = ClaimRecord(claim, claim.segments, submit_tick=submit_tick)
        self.records[claim.projection_id] = record
        return record

    def get(self, projection_id: int) -> ClaimRecord | None:
        return self.records.get(projection_id)

    def remove(self, projection_id: int) -> None:
        self.records.pop(projection_id, None)

    def granted_records(self) -> list[ClaimRecord]:
        return [r for r in self.records.values() if r.granted and r.remaining]


def resolve(table: ClaimTable, alive: list[str], self_node: str) -> list[int]:
    """Greedy grant pass in claim order; returns newly granted projection ids.

    Only this node's own ready claims (acknowledged by every alive node) are
    actually granted. Foreign and not-yet-ready claims reserve their segments
    when unblocked, because their owners may grant them at any moment; claims
    blocked by a reserved segment do not themselves block anything.
    """
    reserved: set[int] = set()
    for record in table.granted_records():
        reserved.update(record.remaining)
    waiting = sorted((r for r in table.records.values()
                      if not r.granted and r.remaining),
                     key=lambda r: claim_order(r.claim))
    others = set(alive) - {self_node}
    newly: list[int] = []
    for record in waiting:
        if record.remaining & reserved:
            continue
        own = record.claim.requester == self_node
        if own and others <= record.acks:
            record.granted = True
            newly.append(record.claim.projection_id)
        reserved.update(record.remaining)
    return newly


def claim_to_wire(claim: Claim) -> dict:
    return {"projectionId": claim.projection_id, "priority": claim.priority,
            "segments": sorted(claim.segments), "requester": claim.requester,
            "claimTick": claim.claim_tick}


def claim_from_wire(data: dict) -> Claim:
    return Claim(data["projectionId"], data["priority"],
                 frozenset(data["segments"]), data["requester"],
                 data["claimTick"])


class LockCoordinator:
    """Per-node claim handling, wired into the synchronization component."""

    def __init__(self, ve: VirtualEnvironment):
        self.ve = ve
        self.table = ClaimTable()
        self._deferred_acks: list[Claim] = []
        self._on_granted: dict[int, Callable[[int], None]] = {}
        ve.register_sync_handler("claimBroadcast", self._on_claim_broadcast)
        ve.register_sync_handler("claimRelease", self._on_claim_release)
        ve.register_sync_routine(self.run_resolve)

    # -- agent-facing API -----------------------------------------------------

    def submit_claim(self, claim: Claim,
                     on_granted: Callable[[int], None] | None = None) -> None:
        if claim.requester != self.ve.node_id:
            raise LockError("claims are submitted on the requester's node")
        record = self.table.add(claim, submit_tick=self.ve.kernel.now)
        if on_granted is not None:
            self._on_granted[claim.projection_id] = on_granted
        self._broadcast_claim(record.claim)
        self.run_resolve(self.ve)

    def withdraw_claim(self, projection_id: int) -> None:
        """Drop an own claim entirely, granted or not, releasing its segments."""
        record = self.table.get(projection_id)
        if record is None:
            return
        if record.claim.requester != self.ve.node_id:
            raise LockError("only the requester withdraws a claim")
        remaining = record.remaining
        self.table.remove(projection_id)
        self._on_granted.pop(projection_id, None)
        if remaining:
            self.ve.emit_sync(SyncUpdate("claimRelease", self.ve.node_id, {
                "projectionId": projection_id,
                "segments": sorted(remaining),
            }))
        self._flush_deferred_acks()
        self.run_resolve(self.ve)

    def clear_segments(self, projection_id: int, segments: frozenset[int]) -> None:
        record = self.table.get(projection_id)
        if record is None or not record.granted:
            raise LockError(f"projection {projection_id} is not locked here")
        if not segments <= record.claim.segments:
            raise LockError("clearing segments outside the claim")
        if not segments:
            return
        record.remaining = record.remaining - segments
        if not record.remaining:
            self.table.remove(projection_id)
            self._on_granted.pop(projection_id, None)
        self.ve.emit_sync(SyncUpdate("claimRelease", self.ve.node_id, {
            "projectionId": projection_id,
            "segments": sorted(segments),
        }))
        self._flush_deferred_acks()
        self.run_resolve(self.ve)

    def locked_segments(self) -> set[int]:
        out: set[int] = set()
        for record in self.table.granted_records():
            if record.claim.requester == self.ve.node_id:
                out.update(record.remaining)
        return out

    # -- membership -----------------------------------------------------------

    def on_membership(self, event: str, node_id: str) -> None:
        if node_id == self.ve.node_id:
            return
        if event == "leave":
            gone = [pid for pid, rec in self.table.records.items()
                    if rec.claim.requester == node_id]
            for pid in gone:
                self.table.remove(pid)
            self._deferred_acks = [c for c in self._deferred_acks
                                   if c.requester != node_id]
            self._flush_deferred_acks()
            self.run_resolve(self.ve)
        elif event == "join":
            for record in self.table.records.values():
                if record.claim.requester == self.ve.node_id and not record.granted:
                    self._broadcast_claim(record.claim, targets=[node_id])

    # -- synchronization ----------------------------------------------------

    def run_resolve(self, ve: VirtualEnvironment) -> None:
        newly = resolve(self.table, ve.kernel.alive_nodes(), ve.node_id)
        for pid in newly:
            record = self.table.get(pid)
            record.grant_tick = ve.kernel.now
            ve.state_write({f"projection:{pid}": "locked"})
            ve.kernel.emit(ve.node_id, "claim-granted", {
                "projectionId": pid,
                "waitTicks": record.grant_tick - record.submit_tick,
            })
            callback = self._on_granted.get(pid)
            if callback is not None:
                callback(pid)

    def _broadcast_claim(self, claim: Claim,
                         targets: list[str] | None = None) -> None:
        self.ve.emit_sync(SyncUpdate("claimBroadcast", self.ve.node_id, {
            "phase": "claim", "claim": claim_to_wire(claim),
        }), targets)

    def _on_claim_broadcast(self, ve: VirtualEnvironment,
                            update: SyncUpdate) -> None:
        payload = update.payload
        if payload["phase"] == "ack":
            record = self.table.get(payload["projectionId"])
            if record is not None and record.claim.requester == ve.node_id:
                record.acks.add(payload["acker"])
                self.run_resolve(ve)
            return
        claim = claim_from_wire(payload["claim"])
        if self.table.get(claim.projection_id) is None:
            self.table.add(claim, submit_tick=ve.kernel.now)
            ve.state_write({f"projection:{claim.projection_id}": "requested"})
        if self._must_defer(claim):
            self._deferred_acks.append(claim)
        else:
            self._send_ack(claim)

    def _on_claim_release(self, ve: VirtualEnvironment,
                          update: SyncUpdate) -> None:
        record = self.table.get(update.payload["projectionId"])
        if record is not None:
            released = frozenset(update.payload["segments"])
            record.remaining = record.remaining - released
            if not record.remaining:
                self.table.remove(record.claim.projection_id)
        self._flush_deferred_acks()
        self.run_resolve(ve)

    def _must_defer(self, claim: Claim) -> bool:
        for record in self.table.records.values():
            if record.claim.requester != self.ve.node_id:
                continue
            if not record.remaining & claim.segments:
                continue
            if record.granted or claim_order(record.claim) < claim_order(claim):
                return True
        return False

    def _send_ack(self, claim: Claim) -> None:
        self.ve.emit_sync(SyncUpdate("claimBroadcast", self.ve.node_id, {
            "phase": "ack", "projectionId": claim.projection_id,
            "acker": self.ve.node_id,
        }), targets=[claim.requester])

    def _flush_deferred_acks(self) -> None:
        still_deferred = []
        for claim in self._deferred_acks:
            if self.table.get(claim.projection_id) is None:
                continue  # claim fully released meanwhile: ack is moot
            if self._must_defer(claim):
                still_deferred.append(claim)
            else:
                self._send_ack(claim)
        self._deferred_acks = still_deferred

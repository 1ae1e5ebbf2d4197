"""Deterministic discrete-event kernel with a simulated network.

One logical event queue totally ordered by (tick, seq); seq is assigned at
scheduling time from a single monotone counter, so identical inputs replay to
identical traces. Nodes join and leave during a run; inter-node traffic goes
through :meth:`Kernel.transmit`, which applies per-channel seeded loss and a
fixed latency. Everything inside one node happens synchronously within a
single event dispatch.
"""
from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable

from .trace import format_record, trace_hash

Tick = int


class KernelError(Exception):
    """Kernel API misuse: bad schedule, dead/unknown node lifecycle calls."""


@dataclass(frozen=True)
class EventRecord:
    tick: int
    seq: int
    node: str
    kind: str
    payload: Any


@dataclass(frozen=True)
class NetworkConfig:
    latency_ticks: int = 0
    drop_probability: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.latency_ticks < 0:
            raise KernelError("latency_ticks must be non-negative")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise KernelError("drop_probability must be in [0, 1]")


@dataclass
class SimNode:
    node_id: str
    alive: bool = True
    hosted_agents: set[str] = field(default_factory=set)
    local_ve: Any = None


def channel_seed(seed: int, src: str, dst: str) -> int:
    """Stable 64-bit seed for one directed (src, dst) channel.

    Derived by hashing, not by draw order, so adding a channel never perturbs
    the streams of existing channels.
    """
    key = f"{seed}|{src}|{dst}".encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big")


class Kernel:
    """Event queue, node registry, and network transport for one run."""

    def __init__(self, network: NetworkConfig | None = None):
        self.network = network or NetworkConfig()
        self.now: Tick = 0
        self.nodes: dict[str, SimNode] = {}
        self.trace: list[EventRecord] = []
        self.finalized = False
        self._queue: list[tuple[int, int, EventRecord]] = []
        self._seq = 0
        self._send_count = 0
        self._handlers: dict[str, list[Callable[[Kernel, EventRecord], None]]] = {}
        self._channel_rngs: dict[tuple[str, str], random.Random] = {}

    # -- handlers ----------------------------------------------------------

    def on(self, kind: str, handler: Callable[[Kernel, EventRecord], None]) -> None:
        self._handlers.setdefault(kind, []).append(handler)

    # -- scheduling --------------------------------------------------------

    def schedule(self, node: str, kind: str, payload: Any, delay: Tick = 0) -> EventRecord:
        """Enqueue an event at now + delay with the next free seq."""
        if self.finalized:
            raise KernelError("cannot schedule on a finalized kernel")
        if delay < 0:
            raise KernelError("delay must be non-negative")
        record = EventRecord(self.now + delay, self._next_seq(), node, kind, payload)
        heapq.heappush(self._queue, (record.tick, record.seq, record))
        return record

    def emit(self, node: str, kind: str, payload: Any) -> EventRecord:
        """Dispatch an event immediately at the current tick (trace + handlers)."""
        record = EventRecord(self.now, self._next_seq(), node, kind, payload)
        self._dispatch(record)
        return record

    def _next_seq(self) -> int:
        seq = self._seq
        self._seq += 1
        return seq

    def step(self) -> list[EventRecord]:
        """Advance to the next non-empty tick and dispatch all its events.

        Zero-delay events scheduled during dispatch join the current tick.
        An empty queue returns [] without advancing time.
        """
        if not self._queue:
            return []
        self.now = self._queue[0][0]
        dispatched: list[EventRecord] = []
        while self._queue and self._queue[0][0] == self.now:
            _, _, record = heapq.heappop(self._queue)
            node = self.nodes.get(record.node)
            if node is not None and not node.alive:
                continue
            self._dispatch(record)
            dispatched.append(record)
        return dispatched

    def run(self, until_tick: Tick) -> None:
        while self._queue and self._queue[0][0] <= until_tick:
            self.step()

    def advance_to(self, tick: Tick) -> None:
        """Dispatch everything up to tick, then move the clock there."""
        if tick < self.now:
            raise KernelError("cannot advance backwards")
        self.run(tick)
        self.now = max(self.now, tick)

    def _dispatch(self, record: EventRecord) -> None:
        self.trace.append(record)
        for handler in self._handlers.get(record.kind, ()):
            handler(self, record)

    def finalize(self) -> None:
        self.finalized = True

    # -- node lifecycle ----------------------------------------------------

    def join_node(self, node_id: str, hosted_agents: set[str] | None = None,
                  local_ve: Any = None) -> SimNode:
        existing = self.nodes.get(node_id)
        if existing is not None and existing.alive:
            raise KernelError(f"node {node_id!r} already joined")
        node = SimNode(node_id, True, set(hosted_agents or ()), local_ve)
        self.nodes[node_id] = node
        self.emit(node_id, "membership", {"event": "join", "node": node_id})
        return node

    def leave_node(self, node_id: str) -> None:
        node = self.nodes.get(node_id)
        if node is None or not node.alive:
            raise KernelError(f"node {node_id!r} is not alive")
        node.alive = False
        self._discard_events_for(node_id)
        self.emit(node_id, "membership", {"event": "leave", "node": node_id})

    def _discard_events_for(self, node_id: str) -> None:
        kept: list[tuple[int, int, EventRecord]] = []
        for entry in self._queue:
            record = entry[2]
            if record.node != node_id:
                kept.append(entry)
                continue
            if record.kind == "deliver":
                self.emit(record.payload["src"], "transmission-lost", {
                    "src": record.payload["src"],
                    "dst": node_id,
                    "reason": "destination-left",
                })
        heapq.heapify(kept)
        self._queue = kept

    def alive_nodes(self) -> list[str]:
        return sorted(n.node_id for n in self.nodes.values() if n.alive)

    def is_alive(self, node_id: str) -> bool:
        node = self.nodes.get(node_id)
        return node is not None and node.alive

    # -- network -----------------------------------------------------------

    def transmit(self, src: str, dst: str, payload: Any) -> None:
        """Send payload src -> dst: seeded loss, fixed latency, FIFO per channel."""
        if not self.is_alive(src):
            raise KernelError(f"transmit from dead or unknown node {src!r}")
        self._send_count += 1
        uid = f"{src}#{self._send_count}"
        if dst not in self.nodes:
            self.emit(src, "transmission-lost",
                      {"src": src, "dst": dst, "reason": "unknown-destination"})
            return
        if not self.nodes[dst].alive:
            self.emit(src, "transmission-lost",
                      {"src": src, "dst": dst, "reason": "destination-dead"})
            return
        if self.network.drop_probability > 0:
            draw = self._channel_rng(src, dst).random()
            if draw < self.network.drop_probability:
                return  # silently dropped
        self.schedule(dst, "deliver",
                      {"src": src, "dst": dst, "uid": uid, "data": payload},
                      delay=self.network.latency_ticks)

    def _channel_rng(self, src: str, dst: str) -> random.Random:
        rng = self._channel_rngs.get((src, dst))
        if rng is None:
            rng = random.Random(channel_seed(self.network.seed, src, dst))
            self._channel_rngs[(src, dst)] = rng
        return rng

    # -- trace -------------------------------------------------------------

    def trace_text(self) -> str:
        lines = [format_record(r.tick, r.seq, r.node, r.kind, r.payload)
                 for r in self.trace]
        return "\n".join(lines) + ("\n" if lines else "")

    def trace_hash(self) -> str:
        return trace_hash(self.trace_text())

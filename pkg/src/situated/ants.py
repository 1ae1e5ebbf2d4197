"""Delegate ants: exploration and intention ants, bookings, congestion.

Ants are ordinary messages under dedicated protocols, routed like any other
agent communication. An exploration ant fans out across infrastructure
agents discovering simple paths within a distance bound; an intention ant
walks the entries of a booking, reserving a time window on each road segment
and returning to the vehicle once the last entry is acknowledged. Unrefreshed
reservations evaporate after a time-to-live, like digital pheromones.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Callable

from .agent import Conversation, ProtocolHandler, SituatedAgent
from .codec import (Identifier, IntRange, Item, Keyword, MessageData,
                    NonNegNumber, PerformativeSpec, ProtocolSchema, Struct)
from .environment import SyncUpdate, VirtualEnvironment
from .freeflow import refine_action
from .worldgraph import GraphPath, SegmentGraph

EXPLORE_PROTOCOL = "ExplorePaths"
INTENTION_PROTOCOL = "PropagateIntention"

FREE_FLOW = "freeFlow"
BUSY = "busy"
JAMMED = "jammed"
TRAFFIC_STATUSES = (FREE_FLOW, BUSY, JAMMED)


@dataclass(frozen=True)
class BookingEntry:
    infrastructure_agent: str
    edge_id: int
    window: tuple[int, int]
    acked: bool = False


@dataclass(frozen=True)
class Booking:
    booking_id: int
    vehicle_id: str
    entries: tuple[BookingEntry, ...]
    last_refresh_tick: int

    def __post_init__(self):
        previous_end = None
        for entry in self.entries:
            start, end = entry.window
            if end <= start:
                raise ValueError("booking windows must be non-empty")
            if previous_end is not None and start < previous_end:
                raise ValueError("booking windows must be increasing")
            previous_end = end

    def next_unacked(self) -> BookingEntry | None:
        for entry in self.entries:
            if not entry.acked:
                return entry
        return None

    def ack(self, edge_id: int) -> Booking:
        entries = tuple(replace(e, acked=True) if e.edge_id == edge_id else e
                        for e in self.entries)
        return replace(self, entries=entries)

    def acked_prefix(self) -> tuple[BookingEntry, ...]:
        prefix = []
        for entry in self.entries:
            if not entry.acked:
                break
            prefix.append(entry)
        return tuple(prefix)


def booking_to_json(booking: Booking) -> dict:
    return {
        "bookingId": booking.booking_id,
        "vehicleId": booking.vehicle_id,
        "lastRefreshTick": booking.last_refresh_tick,
        "entries": [
            {"agent": e.infrastructure_agent, "edgeId": e.edge_id,
             "window": [e.window[0], e.window[1]], "acked": e.acked}
            for e in booking.entries
        ],
    }


def booking_from_json(data: dict) -> Booking:
    entries = tuple(
        BookingEntry(e["agent"], int(e["edgeId"]),
                     (int(e["window"][0]), int(e["window"][1])), bool(e["acked"]))
        for e in data["entries"]
    )
    return Booking(int(data["bookingId"]), data["vehicleId"], entries,
                   int(data["lastRefreshTick"]))


def path_to_json(path: GraphPath) -> list[str]:
    return list(path.nodes)


def path_from_json(data: Any) -> GraphPath:
    if not isinstance(data, list) or not all(isinstance(n, str) for n in data):
        raise ValueError("path must be a list of node ids")
    return GraphPath(tuple(data))


def explore_schema() -> ProtocolSchema:
    performatives = {
        "explore": PerformativeSpec("explore", (
            ("origin", Identifier()),
            ("destination", Identifier()),
            ("maxDist", NonNegNumber()),
            ("budget", IntRange(0, 10_000)),
            ("visited", Struct(path_from_json, path_to_json)),
        ), initial=True),
        "pathFound": PerformativeSpec("pathFound", (
            ("path", Struct(path_from_json, path_to_json)),
        ), final=True),
    }
    transitions = {
        "explore": frozenset({"explore", "pathFound"}),
        "pathFound": frozenset({"explore", "pathFound"}),
    }
    return ProtocolSchema(EXPLORE_PROTOCOL, performatives, transitions=transitions)


def intention_schema() -> ProtocolSchema:
    booking_domain = Struct(booking_from_json, booking_to_json)
    performatives = {
        "booking": PerformativeSpec("booking", (("booking", booking_domain),),
                                    initial=True),
        "bookingAck": PerformativeSpec("bookingAck",
                                       (("booking", booking_domain),), final=True),
        "bookingReject": PerformativeSpec("bookingReject", (
            ("reason", Keyword("window-conflict")),
            ("prefix", booking_domain),
        ), final=True),
    }
    transitions = {
        "booking": frozenset({"booking", "bookingAck", "bookingReject"}),
        "bookingAck": frozenset(),
        "bookingReject": frozenset(),
    }
    return ProtocolSchema(INTENTION_PROTOCOL, performatives,
                          transitions=transitions)


def edge_owner(edge) -> str:
    """The node whose infrastructure agent manages this segment's bookings."""
    return min(edge.src, edge.dst)


def build_booking(graph: SegmentGraph, path: GraphPath, vehicle_id: str,
                  booking_id: int, start_tick: int, ticks_per_segment: int,
                  ia_name: Callable[[str], str]) -> Booking:
    """Booking entries along a path: one window per segment, in travel order.

    Each entry is addressed to the managing agent of its segment, so the
    intention ant visits the infrastructure agents in path order.
    """
    entries = []
    t = start_tick
    for a, b in zip(path.nodes, path.nodes[1:]):
        edge = graph.edge_between(a, b)
        entries.append(BookingEntry(ia_name(edge_owner(edge)), edge.id,
                                    (t, t + ticks_per_segment)))
        t += ticks_per_segment
    return Booking(booking_id, vehicle_id, tuple(entries), start_tick)


# -- traffic state -------------------------------------------------------------

@dataclass(frozen=True)
class TrafficObservation:
    density: float        # vehicles per length unit
    intensity: float      # vehicles per time unit
    average_speed: float

    def __post_init__(self):
        if min(self.density, self.intensity, self.average_speed) < 0:
            raise ValueError("traffic observation variables must be non-negative")


@dataclass(frozen=True)
class TrafficState:
    path: GraphPath
    status: str

    def __post_init__(self):
        if self.status not in TRAFFIC_STATUSES:
            raise ValueError(f"unknown traffic status {self.status!r}")


@dataclass(frozen=True)
class CongestionThresholds:
    busy_at: int = 2
    jammed_at: int = 4

    def classify(self, count: int) -> str:
        if count >= self.jammed_at:
            return JAMMED
        if count >= self.busy_at:
            return BUSY
        return FREE_FLOW


def congestion_multiplier(status: str, multipliers: dict[str, float]) -> float:
    return multipliers[status]


DEFAULT_MULTIPLIERS = {FREE_FLOW: 1.0, BUSY: 1.8, JAMMED: 3.0}


# -- infrastructure agent ------------------------------------------------------

class InfrastructureHandler(ProtocolHandler):
    """One road node's agent: reservations, ant forwarding, congestion."""

    def __init__(self, agent: SituatedAgent, node: str, graph: SegmentGraph,
                 ttl_ticks: int, capacity: int,
                 thresholds: CongestionThresholds,
                 ia_name: Callable[[str], str], horizon_ticks: int = 50,
                 mirror_period_ticks: int = 20):
        self.agent = agent
        self.node = node
        self.graph = graph
        self.ttl_ticks = ttl_ticks
        self.capacity = capacity
        self.thresholds = thresholds
        self.ia_name = ia_name
        self.horizon_ticks = horizon_ticks
        self.mirror_period_ticks = mirror_period_ticks
        # edge -> vehicle -> (window, last refresh tick; None never evaporates)
        self.reservations: dict[int, dict[str, tuple[tuple[int, int], int | None]]] = {}
        self._pending: list[MessageData] = []
        self._mirrored_status: dict[int, str] = {}
        agent.ve.register_sync_routine(self.sync_traffic)

    # -- bookings -----------------------------------------------------------

    def _handle_booking(self, data: MessageData) -> None:
        booking: Booking = data.value("booking")
        entry = booking.next_unacked()
        if entry is None or entry.infrastructure_agent != self.agent.agent_id:
            self.agent.ve.kernel.emit(self.agent.ve.node_id, "protocol-violation",
                                      {"agent": self.agent.agent_id,
                                       "reason": "misrouted-intention-ant"})
            return
        if self._window_conflict(entry, booking.vehicle_id):
            reject = Booking(booking.booking_id, booking.vehicle_id,
                             booking.acked_prefix(), booking.last_refresh_tick)
            self._pending.append(MessageData(
                data.id, self.agent.agent_id, booking.vehicle_id,
                INTENTION_PROTOCOL, "bookingReject",
                (Item("reason", "window-conflict"), Item("prefix", reject))))
            return
        now = self.agent.ve.kernel.now
        self.reservations.setdefault(entry.edge_id, {})[booking.vehicle_id] = \
            (entry.window, now)
        acked = booking.ack(entry.edge_id)
        nxt = acked.next_unacked()
        if nxt is None:
            performative, receiver = "bookingAck", booking.vehicle_id
        else:
            performative, receiver = "booking", nxt.infrastructure_agent
        self._pending.append(MessageData(
            data.id, self.agent.agent_id, receiver, INTENTION_PROTOCOL,
            performative, (Item("booking", acked),)))

    def _window_conflict(self, entry: BookingEntry, vehicle_id: str) -> bool:
        start, end = entry.window
        others = 0
        for vehicle, (window, _) in self.reservations.get(entry.edge_id, {}).items():
            if vehicle == vehicle_id:
                continue
            if window[0] < end and start < window[1]:
                others += 1
        return others >= self.capacity

    def seed_reservation(self, edge_id: int, vehicle: str,
                         window: tuple[int, int]) -> None:
        """Pre-seed a reservation that never evaporates (scenario fixtures)."""
        self.reservations.setdefault(edge_id, {})[vehicle] = (window, None)

    def evaporate_bookings(self, now: int) -> None:
        """Drop reservations not refreshed within the time-to-live (strict)."""
        for edge_id in sorted(self.reservations):
            per_edge = self.reservations[edge_id]
            stale = [v for v, (_, refreshed) in per_edge.items()
                     if refreshed is not None and now - refreshed > self.ttl_ticks]
            for vehicle in stale:
                del per_edge[vehicle]
            if not per_edge:
                del self.reservations[edge_id]

    # -- exploration -----------------------------------------------------------

    def _handle_explore(self, data: MessageData) -> None:
        visited: GraphPath = data.value("visited")
        if visited.nodes[-1] != self.node:
            return  # misrouted ant dies silently
        destination = data.value("destination")
        if self.node == destination:
            self._pending.append(MessageData(
                data.id, self.agent.agent_id, data.value("origin"),
                EXPLORE_PROTOCOL, "pathFound", (Item("path", visited),)))
            return
        budget = data.value("budget")
        if budget <= 0:
            return  # budget exhausted: ant dies silently
        max_dist = data.value("maxDist")
        walked = visited.length(self.graph)
        for neighbor, edge in self.graph.neighbors(self.node):
            if neighbor in visited.nodes:
                continue
            if walked + edge.length > max_dist:
                continue
            branch = GraphPath(visited.nodes + (neighbor,))
            self._pending.append(MessageData(
                data.id, self.agent.agent_id, self.ia_name(neighbor),
                EXPLORE_PROTOCOL, "explore", (
                    Item("origin", data.value("origin")),
                    Item("destination", destination),
                    Item("maxDist", max_dist),
                    Item("budget", budget - 1),
                    Item("visited", branch),
                )))

    # -- congestion -----------------------------------------------------------

    def predict_congestion(self, edge_id: int) -> TrafficState:
        now = self.agent.ve.kernel.now
        horizon = now + self.horizon_ticks
        count = 0
        for window, _ in self.reservations.get(edge_id, {}).values():
            if window[0] < horizon and now < window[1]:
                count += 1
        edge = self.graph.edges[edge_id]
        return TrafficState(GraphPath((edge.src, edge.dst)),
                            self.thresholds.classify(count))

    def sync_traffic(self, ve: VirtualEnvironment) -> None:
        """Evaporate, then mirror per-edge congestion to all nodes.

        Changed statuses go out immediately; everything is re-sent on a fixed
        period so a lost mirror update heals itself.
        """
        self.evaporate_bookings(ve.kernel.now)
        local_edges = sorted({e.id for _, e in self.graph.neighbors(self.node)
                              if edge_owner(e) == self.node})
        periodic = self.mirror_period_ticks > 0 and \
            ve.kernel.now % self.mirror_period_ticks == 0
        changed: dict[str, str] = {}
        for edge_id in local_edges:
            status = self.predict_congestion(edge_id).status
            if periodic or self._mirrored_status.get(edge_id) != status:
                self._mirrored_status[edge_id] = status
                changed[str(edge_id)] = status
        if changed:
            ve.state_write({f"traffic:{eid}": status
                            for eid, status in changed.items()})
            ve.emit_sync(SyncUpdate("resourceMirror", ve.node_id,
                                    {"traffic": changed}))

    # -- protocol handler plumbing ----------------------------------------------

    def on_message(self, agent: SituatedAgent, data: MessageData) -> None:
        if data.protocol == INTENTION_PROTOCOL and data.performative == "booking":
            self._handle_booking(data)
        elif data.protocol == EXPLORE_PROTOCOL and data.performative == "explore":
            self._handle_explore(data)

    def next_step(self, agent: SituatedAgent) -> MessageData | None:
        if self._pending:
            return self._pending.pop(0)
        return None

    def conversation_finished(self, agent: SituatedAgent,
                              conversation: Conversation) -> bool:
        return not self._pending


def traffic_mirror_handler(ve: VirtualEnvironment, update: SyncUpdate) -> None:
    traffic = update.payload.get("traffic", {})
    if traffic:
        ve.state_write({f"traffic:{eid}": status
                        for eid, status in traffic.items()})


# -- vehicle agent ------------------------------------------------------------

class VehicleHandler(ProtocolHandler):
    """Vehicle-agent decision loop plus its two ant cadences."""

    def __init__(self, agent: SituatedAgent, graph: SegmentGraph,
                 destination: str, max_dist: float, revision_threshold: float,
                 ticks_per_segment: int, multipliers: dict[str, float],
                 ia_name: Callable[[str], str], reject_backoff_ticks: int = 50):
        self.agent = agent
        self.graph = graph
        self.destination = destination
        self.max_dist = max_dist
        self.revision_threshold = revision_threshold
        self.ticks_per_segment = ticks_per_segment
        self.multipliers = multipliers
        self.ia_name = ia_name
        self.reject_backoff_ticks = reject_backoff_ticks
        self.known_routes: dict[tuple[str, ...], GraphPath] = {}
        self.rejected_until: dict[tuple[str, ...], int] = {}
        self.reject_count = 0
        self._pending: list[MessageData] = []

    def position(self) -> str | None:
        return self.agent.knowledge.get("position")

    def current_intention(self) -> GraphPath | None:
        return self.agent.knowledge.get("current-intention")

    # -- incoming ant results ------------------------------------------------

    def on_message(self, agent: SituatedAgent, data: MessageData) -> None:
        if data.protocol == EXPLORE_PROTOCOL and data.performative == "pathFound":
            path: GraphPath = data.value("path")
            self.known_routes[path.nodes] = path
        elif data.protocol == INTENTION_PROTOCOL:
            if data.performative == "bookingReject":
                self.reject_count += 1
                intention = self.current_intention()
                if intention is not None:
                    self.rejected_until[intention.nodes] = \
                        agent.ve.kernel.now + self.reject_backoff_ticks
                agent.knowledge.remove(["current-intention"])

    # -- ant emission ------------------------------------------------------

    def send_exploration_ant(self) -> None:
        position = self.position()
        if position is None or position == self.destination:
            return
        conversation = self.agent.ve.directory.next_message_id(self.agent.agent_id)
        budget = len(self.graph.nodes)
        self._pending.append(MessageData(
            conversation, self.agent.agent_id, self.ia_name(position),
            EXPLORE_PROTOCOL, "explore", (
                Item("origin", self.agent.agent_id),
                Item("destination", self.destination),
                Item("maxDist", self.max_dist),
                Item("budget", budget),
                Item("visited", GraphPath((position,))),
            )))

    def propagate_intention(self, intention: GraphPath) -> None:
        if len(intention.nodes) < 2:
            return
        conversation = self.agent.ve.directory.next_message_id(self.agent.agent_id)
        booking = build_booking(self.graph, intention, self.agent.agent_id,
                                conversation, self.agent.ve.kernel.now,
                                self.ticks_per_segment, self.ia_name)
        first = booking.entries[0].infrastructure_agent
        self._pending.append(MessageData(
            conversation, self.agent.agent_id, first, INTENTION_PROTOCOL,
            "booking", (Item("booking", booking),)))

    # -- decision loop ------------------------------------------------------

    def adjusted_cost(self, path: GraphPath) -> float:
        total = 0.0
        for a, b in zip(path.nodes, path.nodes[1:]):
            edge = self.graph.edge_between(a, b)
            status = self.agent.ve.state.get(f"traffic:{edge.id}", FREE_FLOW)
            total += edge.length * congestion_multiplier(status, self.multipliers)
        return total

    def feasible_paths(self, position: str) -> list[GraphPath]:
        now = self.agent.ve.kernel.now
        out = []
        for nodes, path in sorted(self.known_routes.items()):
            if self.rejected_until.get(nodes, 0) > now:
                continue
            if position not in path.nodes:
                continue
            index = path.nodes.index(position)
            remainder = GraphPath(path.nodes[index:])
            if len(remainder.nodes) >= 2 or position == self.destination:
                out.append(remainder)
        return out

    def run_cycle(self) -> None:
        """One pass of the vehicle loop: refresh, choose, revise, propagate,
        instruct."""
        position = self.position()
        if position is None or position == self.destination:
            return
        paths = self.feasible_paths(position)
        intention = self.current_intention()
        if not paths:
            self.agent.ve.kernel.emit(self.agent.ve.node_id, "no-feasible-path",
                                      {"agent": self.agent.agent_id})
        else:
            best = min(paths, key=lambda p: (self.adjusted_cost(p), p.nodes))
            if intention is None or position not in intention.nodes:
                intention = best
            else:
                tail = GraphPath(intention.nodes[intention.nodes.index(position):])
                current_cost = self.adjusted_cost(tail)
                improvement = current_cost - self.adjusted_cost(best)
                if improvement >= self.revision_threshold * current_cost and \
                        best.nodes != tail.nodes:
                    intention = best
                else:
                    intention = tail
            self.agent.knowledge_write({"current-intention": intention})
        intention = self.current_intention()
        if intention is not None:
            self.propagate_intention(intention)
            action = refine_action("instructDriver", self.agent.agent_id,
                                   self.agent.knowledge.snapshot())
            if action is not None:
                self.agent.ve.act(action)

    def next_step(self, agent: SituatedAgent) -> MessageData | None:
        if self._pending:
            return self._pending.pop(0)
        return None

    def conversation_finished(self, agent: SituatedAgent,
                              conversation: Conversation) -> bool:
        last = conversation.history[-1].performative
        return last in ("pathFound", "bookingAck", "bookingReject")

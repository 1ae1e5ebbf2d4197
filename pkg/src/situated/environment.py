"""Per-node virtual environment: state, perception, action, communication, sync.

One VirtualEnvironment instance lives on each simulation node. It mediates
everything its hosted agents do: template-based reads and writes of shared
state, focus-driven sensing, virtual/external action dispatch, message
delivery (local and via the simulated network), and state synchronization
with the virtual environments of neighboring nodes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

from .codec import ContentLanguage, MalformedMessage, Message
from .kernel import Kernel
from .trace import canonicalize
from .worldgraph import SegmentGraph, distance_meters


class EnvironmentFault(Exception):
    """Unknown focus/action, rejected action, or broken mediation contract."""


class ActionRejected(EnvironmentFault):
    pass


ANY = object()  # template value wildcard: match by name only


class ItemStore:
    """Named-value repository: template reads, upsert writes, both atomic.

    Atomicity here means one read or write completes entirely within a single
    event dispatch; there is no partial visibility between dispatches.
    """

    def __init__(self, items: dict[str, Any] | None = None):
        self._items: dict[str, Any] = dict(items or {})

    def read(self, template: dict[str, Any]) -> dict[str, Any]:
        if any(not name for name in template):
            raise EnvironmentFault("template names must be non-empty")
        out = {}
        for name, constraint in template.items():
            if name not in self._items:
                continue
            value = self._items[name]
            if constraint is ANY or constraint == value:
                out[name] = value
        return out

    def write(self, items: dict[str, Any]) -> None:
        if any(not name for name in items):
            raise EnvironmentFault("item names must be non-empty")
        self._items.update(items)

    def remove(self, names: list[str]) -> None:
        for name in names:
            self._items.pop(name, None)

    def get(self, name: str, default: Any = None) -> Any:
        return self._items.get(name, default)

    def snapshot(self) -> dict[str, Any]:
        return dict(self._items)


@dataclass(frozen=True)
class Focus:
    name: str
    params: dict[str, Any]


@dataclass(frozen=True)
class Sense:
    agent_id: str
    focus: Focus


@dataclass(frozen=True)
class Action:
    agent_id: str
    name: str
    params: dict[str, Any]


SYNC_KINDS = ("fieldSpread", "fieldRemove", "claimBroadcast", "claimRelease",
              "membership", "resourceMirror")


@dataclass(frozen=True)
class SyncUpdate:
    kind: str
    origin: str
    payload: dict[str, Any]


@dataclass
class AgentAddress:
    agent_id: str
    agent_type: str
    node_id: str
    index: int


class Directory:
    """Build-time address table: who exists, of what type, hosted where."""

    def __init__(self):
        self.agents: dict[str, AgentAddress] = {}
        self._counters: dict[str, int] = {}

    def register(self, agent_id: str, agent_type: str, node_id: str) -> AgentAddress:
        if agent_id in self.agents:
            raise EnvironmentFault(f"agent {agent_id!r} already registered")
        address = AgentAddress(agent_id, agent_type, node_id, len(self.agents))
        self.agents[agent_id] = address
        return address

    def node_of(self, agent_id: str) -> str:
        return self.agents[agent_id].node_id

    def of_type(self, agent_type: str) -> list[AgentAddress]:
        return sorted((a for a in self.agents.values() if a.agent_type == agent_type),
                      key=lambda a: a.agent_id)

    def next_message_id(self, agent_id: str) -> int:
        # namespaced so concurrently allocating agents never collide
        count = self._counters.get(agent_id, 0) + 1
        self._counters[agent_id] = count
        return self.agents[agent_id].index * 1_000_000 + count


class ExternalEnvironment:
    """Stub boundary to the world outside the software: sensors and actuators."""

    def observe(self, observation: Any) -> Any:
        raise EnvironmentFault("no external observation support")

    def operate(self, operation: dict[str, Any], ve: "VirtualEnvironment") -> None:
        raise EnvironmentFault("no external operation support")


def position_key(agent_id: str) -> str:
    return f"pos:{agent_id}"


class VirtualEnvironment:
    def __init__(self, node_id: str, kernel: Kernel, directory: Directory,
                 language: ContentLanguage, external: ExternalEnvironment,
                 graph: SegmentGraph | None = None):
        self.node_id = node_id
        self.kernel = kernel
        self.directory = directory
        self.language = language
        self.external = external
        self.graph = graph
        self.state = ItemStore()
        self.agents: dict[str, Any] = {}
        self.perception_types: dict[str, Callable[[VirtualEnvironment, Sense], Any]] = {}
        self.external_foci: dict[str, tuple[Callable, Callable]] = {}
        self.action_types: dict[str, tuple[str, Callable]] = {}
        self.sync_routines: list[Callable[[VirtualEnvironment], None]] = []
        self.sync_handlers: dict[str, Callable[[VirtualEnvironment, SyncUpdate], None]] = {}
        self._seen_transmissions: set[str] = set()

    # -- hosting -------------------------------------------------------------

    def host(self, agent: Any) -> None:
        self.agents[agent.agent_id] = agent
        node = self.kernel.nodes.get(self.node_id)
        if node is not None:
            node.hosted_agents.add(agent.agent_id)

    # -- state repository ------------------------------------------------------

    def state_read(self, template: dict[str, Any]) -> dict[str, Any]:
        return self.state.read(template)

    def state_write(self, items: dict[str, Any]) -> None:
        self.state.write(items)

    # -- registration tables ---------------------------------------------------

    def register_virtual_focus(self, name: str,
                               fn: Callable[[VirtualEnvironment, Sense], Any]) -> None:
        self._register_once(name, self.perception_types, self.external_foci)
        self.perception_types[name] = fn

    def register_external_focus(self, name: str, build_observation: Callable,
                                convert_observed: Callable) -> None:
        self._register_once(name, self.perception_types, self.external_foci)
        self.external_foci[name] = (build_observation, convert_observed)

    def register_virtual_action(self, name: str,
                                fn: Callable[[VirtualEnvironment, Action], None]) -> None:
        self._register_action(name, "virtual", fn)

    def register_external_action(self, name: str,
                                 op_builder: Callable[[VirtualEnvironment, Action], dict]) -> None:
        self._register_action(name, "external", op_builder)

    def _register_once(self, name: str, *tables: dict) -> None:
        if any(name in table for table in tables):
            raise EnvironmentFault(f"focus {name!r} already classified")

    def _register_action(self, name: str, kind: str, fn: Callable) -> None:
        if name in self.action_types:
            raise EnvironmentFault(f"action {name!r} already classified")
        self.action_types[name] = (kind, fn)

    def register_sync_routine(self, fn: Callable[[VirtualEnvironment], None]) -> None:
        self.sync_routines.append(fn)

    def register_sync_handler(self, kind: str,
                              fn: Callable[[VirtualEnvironment, SyncUpdate], None]) -> None:
        if kind not in SYNC_KINDS:
            raise EnvironmentFault(f"unknown sync kind {kind!r}")
        self.sync_handlers[kind] = fn

    # -- perception service ------------------------------------------------------

    def sense(self, request: Sense) -> Any:
        name = request.focus.name
        if name in self.perception_types:
            return self.perception_types[name](self, request)
        if name in self.external_foci:
            build, convert = self.external_foci[name]
            observed = self.external.observe(build(self, request))
            return convert(self, request, observed)
        raise EnvironmentFault(f"unknown focus {name!r}")

    # -- action service ------------------------------------------------------

    def act(self, action: Action) -> None:
        entry = self.action_types.get(action.name)
        if entry is None:
            raise EnvironmentFault(f"unknown action {action.name!r}")
        kind, fn = entry
        if kind == "virtual":
            try:
                fn(self, action)
            except ActionRejected as exc:
                self.kernel.emit(self.node_id, "action-rejected",
                                 {"agent": action.agent_id, "action": action.name,
                                  "reason": str(exc)})
                raise
        else:
            operation = fn(self, action)
            self.kernel.emit(self.node_id, "operation",
                             {"agent": action.agent_id, "action": action.name,
                              "operation": canonicalize(operation)})
            self.external.operate(operation, self)

    # -- communication service ------------------------------------------------------

    def send_message(self, msg: Message) -> None:
        self.language.validate(msg)  # malformed -> raises before any delivery
        for receiver in self.resolve_receivers(msg):
            address = self.directory.agents.get(receiver)
            if address is None:
                self.kernel.emit(self.node_id, "delivery-dropped",
                                 {"id": msg.id, "to": receiver,
                                  "reason": "unknown-agent"})
                continue
            if address.node_id == self.node_id:
                self._deliver_local(receiver, msg)
            else:
                self.kernel.transmit(self.node_id, address.node_id,
                                     {"type": "message", "to": receiver,
                                      "message": message_to_wire(msg)})

    def resolve_receivers(self, msg: Message) -> list[str]:
        """Scope grammar: plain id = unicast; 'all' = protocol's registered
        type; '<number>m' = that type within path distance of the sender."""
        receiver = msg.receiver
        schema = self.language.protocols[msg.protocol]
        if receiver == "all":
            return [a.agent_id for a in self._scope_candidates(schema, msg.sender)]
        if receiver.endswith("m") and receiver[:-1].replace(".", "", 1).isdigit():
            radius = float(receiver[:-1])
            center = self.state.get(position_key(msg.sender))
            if center is None or self.graph is None:
                return []
            out = []
            for address in self._scope_candidates(schema, msg.sender):
                pos = self.state.get(position_key(address.agent_id))
                if pos is None:
                    continue
                if distance_meters(self.graph, center, pos) <= radius:
                    out.append(address.agent_id)
            return out
        return [receiver]

    def _scope_candidates(self, schema, sender: str) -> list[AgentAddress]:
        if schema.scope_type is None:
            raise EnvironmentFault(
                f"protocol {schema.name!r} has no scope type for broadcast")
        return [a for a in self.directory.of_type(schema.scope_type)
                if a.agent_id != sender and self.kernel.is_alive(a.node_id)]

    def _deliver_local(self, receiver: str, msg: Message) -> None:
        agent = self.agents.get(receiver)
        if agent is None:
            self.kernel.emit(self.node_id, "delivery-dropped",
                             {"id": msg.id, "to": receiver, "reason": "departed"})
            return
        agent.inbox.append(msg)
        self.kernel.emit(self.node_id, "msg-delivered",
                         {"id": msg.id, "to": receiver, "from": msg.sender,
                          "protocol": msg.protocol,
                          "performative": msg.performative})

    def deliver_transmission(self, src: str, uid: str, data: dict[str, Any]) -> None:
        """Entry point for kernel 'deliver' events addressed to this node."""
        if uid in self._seen_transmissions:
            self.kernel.emit(self.node_id, "duplicate-suppressed", {"uid": uid})
            return
        self._seen_transmissions.add(uid)
        if data.get("type") == "sync":
            try:
                update = SyncUpdate(**data["update"])
            except (KeyError, TypeError):
                self.kernel.emit(self.node_id, "undecodable-transmission",
                                 {"uid": uid, "reason": "bad-sync"})
                return
            self.apply_sync_update(update)
            return
        if data.get("type") != "message":
            self.kernel.emit(self.node_id, "undecodable-transmission",
                             {"uid": uid, "reason": "unknown-payload"})
            return
        try:
            msg = wire_to_message(data["message"])
            self.language.validate(msg)
        except (MalformedMessage, KeyError, TypeError) as exc:
            self.kernel.emit(self.node_id, "undecodable-transmission",
                             {"uid": uid, "reason": str(exc)})
            return
        self._deliver_local(data["to"], msg)

    # -- synchronization ------------------------------------------------------

    def synchronize_local(self) -> None:
        if not self.kernel.is_alive(self.node_id):
            return
        for routine in self.sync_routines:
            routine(self)

    def apply_sync_update(self, update: SyncUpdate) -> None:
        handler = self.sync_handlers.get(update.kind)
        if handler is None:
            self.kernel.emit(self.node_id, "sync-unknown-kind",
                             {"kind": update.kind, "origin": update.origin})
            return
        handler(self, update)

    def emit_sync(self, update: SyncUpdate, targets: list[str] | None = None) -> None:
        if targets is None:
            targets = [n for n in self.kernel.alive_nodes() if n != self.node_id]
        wire = {"kind": update.kind, "origin": update.origin,
                "payload": canonicalize(update.payload)}
        for dst in targets:
            if dst == self.node_id:
                continue
            self.kernel.transmit(self.node_id, dst, {"type": "sync", "update": wire})


def message_to_wire(msg: Message) -> dict[str, Any]:
    return {"id": msg.id, "sender": msg.sender, "receiver": msg.receiver,
            "protocol": msg.protocol, "performative": msg.performative,
            "content": list(msg.content)}


def wire_to_message(data: dict[str, Any]) -> Message:
    return Message(int(data["id"]), data["sender"], data["receiver"],
                   data["protocol"], data["performative"],
                   tuple(str(c) for c in data["content"]))

"""Scenario configuration: a structured text format with section headers.

Sections hold `key = value` entries; repeated keys build lists. `[role X]`
and `[commitment X]` sections define free-flow trees in the documented
grammar (nodes, weighted edges, stimuli bound to cataloged functions).
Cross-references (task nodes, agent homes, booking edges) are validated
against the referenced graph file at load time.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

from .worldgraph import SegmentGraph


class ConfigError(Exception):
    pass


MODES = ("dyncnet", "fields", "traffic")

DEFAULT_CONSTANTS: dict[str, float] = {
    "switch_margin_meters": 100.0,    # DynCNET hysteresis (delta)
    "revision_threshold": 0.10,       # intention revision fraction (rho)
    "booking_ttl_ticks": 50,
    "refresh_period_ticks": 20,
    "age_window_ticks": 100,
    "range_unit_meters": 50.0,
    "scope_unit_meters": 20.0,
    "timer_period_ticks": 10,
    "ticks_per_segment": 2,
    "explore_period_ticks": 20,
    "vehicle_period_ticks": 10,
    "drive_period_ticks": 4,
    "explore_max_dist_meters": 1500.0,
    "edge_capacity": 4,
    "congestion_busy_at": 2,
    "congestion_jammed_at": 4,
    "congestion_busy_multiplier": 1.8,
    "congestion_jammed_multiplier": 3.0,
    "congestion_horizon_ticks": 50,
    "arrival_jitter_ticks": 0,
    "path_focus_max_dist_meters": 2000.0,
    "root_activity": 1.0,
}

INT_CONSTANTS = {
    "booking_ttl_ticks", "refresh_period_ticks", "age_window_ticks",
    "timer_period_ticks", "ticks_per_segment", "explore_period_ticks",
    "vehicle_period_ticks", "drive_period_ticks", "edge_capacity",
    "congestion_busy_at", "congestion_jammed_at", "congestion_horizon_ticks",
    "arrival_jitter_ticks",
}


@dataclass(frozen=True)
class TaskLine:
    task_id: str
    arrival_tick: int
    pickup: str
    dropoff: str
    task_type: str
    priority: int


@dataclass(frozen=True)
class AgvLine:
    agent_id: str
    home: str


@dataclass(frozen=True)
class VehicleLine:
    agent_id: str
    origin: str
    destination: str


@dataclass(frozen=True)
class BookingLine:
    edge_id: int
    vehicle: str
    start: int
    end: int


@dataclass(frozen=True)
class MembershipEvent:
    tick: int
    action: str  # join | leave
    node: str


@dataclass(frozen=True)
class StimulusLine:
    catalog_name: str
    target: int
    magnitude: float


@dataclass(frozen=True)
class RoleSpec:
    name: str
    root_weight: float
    nodes: tuple[tuple[int, str, str], ...]      # id, kind, label
    edges: tuple[tuple[int, int, float], ...]    # parent, child, weight
    stimuli: tuple[StimulusLine, ...]


@dataclass(frozen=True)
class CommitmentSpec:
    name: str
    sources: tuple[str, ...]
    target: str
    condition: str


@dataclass
class ScenarioConfig:
    name: str
    mode: str
    graph_file: str
    run_ticks: int
    seed: int
    latency_ticks: int = 0
    drop_probability: float = 0.0
    constants: dict[str, float] = field(default_factory=dict)
    agvs: list[AgvLine] = field(default_factory=list)
    transport_base: tuple[str, str] | None = None   # node id, station node
    vehicles: list[VehicleLine] = field(default_factory=list)
    infrastructure: str | None = None               # node id hosting the agents
    tasks: list[TaskLine] = field(default_factory=list)
    bookings: list[BookingLine] = field(default_factory=list)
    events: list[MembershipEvent] = field(default_factory=list)
    roles: list[RoleSpec] = field(default_factory=list)
    commitments: list[CommitmentSpec] = field(default_factory=list)
    graph: SegmentGraph | None = None

    def constant(self, key: str) -> float:
        return self.constants[key]


def _parse_sections(text: str) -> list[tuple[str, list[tuple[str, str]]]]:
    sections: list[tuple[str, list[tuple[str, str]]]] = []
    current: list[tuple[str, str]] | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = []
            sections.append((line[1:-1].strip(), current))
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        if current is None:
            raise ConfigError(f"line {lineno}: entry before any section")
        key, value = line.split("=", 1)
        current.append((key.strip(), value.strip()))
    return sections


def _as_map(entries: list[tuple[str, str]], section: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for key, value in entries:
        if key in out:
            raise ConfigError(f"[{section}] repeats key {key!r}")
        out[key] = value
    return out


def _int(value: str, where: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{where}: {value!r} is not an integer") from None


def _float(value: str, where: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{where}: {value!r} is not a number") from None


def _parse_role(name: str, entries: list[tuple[str, str]]) -> RoleSpec:
    root_weight = 1.0
    nodes: list[tuple[int, str, str]] = []
    edges: list[tuple[int, int, float]] = []
    stimuli: list[StimulusLine] = []
    for key, value in entries:
        parts = value.split()
        if key == "root_weight":
            root_weight = _float(value, f"role {name}")
        elif key == "node":
            if len(parts) != 3 or parts[1] not in ("internal", "action"):
                raise ConfigError(f"role {name}: bad node line {value!r}")
            nodes.append((_int(parts[0], "node id"), parts[1], parts[2]))
        elif key == "edge":
            if len(parts) not in (2, 3):
                raise ConfigError(f"role {name}: bad edge line {value!r}")
            weight = _float(parts[2], "edge weight") if len(parts) == 3 else 1.0
            edges.append((_int(parts[0], "edge parent"),
                          _int(parts[1], "edge child"), weight))
        elif key == "stimulus":
            if len(parts) != 3:
                raise ConfigError(f"role {name}: bad stimulus line {value!r}")
            stimuli.append(StimulusLine(parts[0], _int(parts[1], "stimulus target"),
                                        _float(parts[2], "stimulus magnitude")))
        else:
            raise ConfigError(f"role {name}: unknown key {key!r}")
    return RoleSpec(name, root_weight, tuple(nodes), tuple(edges), tuple(stimuli))


def _parse_commitment(name: str, entries: list[tuple[str, str]]) -> CommitmentSpec:
    mapping = _as_map(entries, f"commitment {name}")
    mandatory = {"sources", "target", "condition"}
    missing = mandatory - set(mapping)
    if missing:
        raise ConfigError(f"commitment {name}: missing {sorted(missing)}")
    return CommitmentSpec(name, tuple(mapping["sources"].split()),
                          mapping["target"], mapping["condition"])


def load_config(path: str) -> ScenarioConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    config = parse_config(text)
    graph_path = os.path.join(os.path.dirname(os.path.abspath(path)),
                              config.graph_file)
    try:
        with open(graph_path, "r", encoding="utf-8") as fh:
            graph_text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read graph file: {exc}") from exc
    try:
        config.graph = SegmentGraph.parse(graph_text)
    except Exception as exc:
        raise ConfigError(f"bad graph file {config.graph_file}: {exc}") from exc
    validate_config(config)
    return config


def parse_config(text: str) -> ScenarioConfig:
    sections = _parse_sections(text)
    by_name = {name: entries for name, entries in sections}
    if "scenario" not in by_name:
        raise ConfigError("missing [scenario] section")
    scenario = _as_map(by_name["scenario"], "scenario")
    for key in ("name", "mode", "graph", "run_ticks", "seed"):
        if key not in scenario:
            raise ConfigError(f"[scenario] missing {key!r}")
    if scenario["mode"] not in MODES:
        raise ConfigError(f"unknown mode {scenario['mode']!r}")
    config = ScenarioConfig(
        name=scenario["name"],
        mode=scenario["mode"],
        graph_file=scenario["graph"],
        run_ticks=_int(scenario["run_ticks"], "run_ticks"),
        seed=_int(scenario["seed"], "seed"),
        constants=dict(DEFAULT_CONSTANTS),
    )
    if "network" in by_name:
        network = _as_map(by_name["network"], "network")
        if "latency_ticks" in network:
            config.latency_ticks = _int(network["latency_ticks"], "latency_ticks")
        if "drop_probability" in network:
            config.drop_probability = _float(network["drop_probability"],
                                             "drop_probability")
    if "constants" in by_name:
        for key, value in by_name["constants"]:
            if key not in DEFAULT_CONSTANTS:
                raise ConfigError(f"unknown constant {key!r}")
            config.constants[key] = (_int(value, key) if key in INT_CONSTANTS
                                     else _float(value, key))
    for key, value in by_name.get("agents", []):
        parts = value.split()
        if key == "agv" and len(parts) == 2:
            config.agvs.append(AgvLine(parts[0], parts[1]))
        elif key == "transport_base" and len(parts) == 2:
            config.transport_base = (parts[0], parts[1])
        elif key == "vehicle" and len(parts) == 3:
            config.vehicles.append(VehicleLine(parts[0], parts[1], parts[2]))
        elif key == "infrastructure" and len(parts) == 1:
            config.infrastructure = parts[0]
        else:
            raise ConfigError(f"[agents] bad line: {key} = {value}")
    for key, value in by_name.get("tasks", []):
        parts = value.split()
        if key != "task" or len(parts) != 6:
            raise ConfigError(f"[tasks] bad line: {key} = {value}")
        config.tasks.append(TaskLine(parts[0], _int(parts[1], "arrival"),
                                     parts[2], parts[3], parts[4],
                                     _int(parts[5], "priority")))
    for key, value in by_name.get("bookings", []):
        parts = value.split()
        if key != "booking" or len(parts) != 4:
            raise ConfigError(f"[bookings] bad line: {key} = {value}")
        config.bookings.append(BookingLine(_int(parts[0], "edge"), parts[1],
                                           _int(parts[2], "start"),
                                           _int(parts[3], "end")))
    for key, value in by_name.get("events", []):
        parts = value.split()
        if key not in ("join", "leave") or len(parts) != 2:
            raise ConfigError(f"[events] bad line: {key} = {value}")
        config.events.append(MembershipEvent(_int(parts[0], "event tick"),
                                             key, parts[1]))
    for name, entries in sections:
        if name.startswith("role "):
            config.roles.append(_parse_role(name.split(None, 1)[1], entries))
        elif name.startswith("commitment "):
            config.commitments.append(
                _parse_commitment(name.split(None, 1)[1], entries))
        elif name not in ("scenario", "network", "constants", "agents",
                          "tasks", "bookings", "events"):
            raise ConfigError(f"unknown section [{name}]")
    return config


def validate_config(config: ScenarioConfig) -> None:
    graph = config.graph
    if graph is None:
        raise ConfigError("config has no graph attached")
    if config.run_ticks <= 0:
        raise ConfigError("run_ticks must be positive")
    if not 0.0 <= config.drop_probability <= 1.0:
        raise ConfigError("drop_probability must be in [0, 1]")
    if config.constants["refresh_period_ticks"] >= \
            config.constants["booking_ttl_ticks"]:
        raise ConfigError("refresh period must be below the booking TTL")

    def check_node(node: str, where: str) -> None:
        if node not in graph.nodes:
            raise ConfigError(f"{where} references unknown node {node!r}")

    for agv in config.agvs:
        check_node(agv.home, f"agv {agv.agent_id}")
    if config.transport_base is not None:
        check_node(config.transport_base[1],
                   f"transport base {config.transport_base[0]}")
    for vehicle in config.vehicles:
        check_node(vehicle.origin, f"vehicle {vehicle.agent_id}")
        check_node(vehicle.destination, f"vehicle {vehicle.agent_id}")
    for task in config.tasks:
        check_node(task.pickup, f"task {task.task_id}")
        check_node(task.dropoff, f"task {task.task_id}")
        if task.task_type not in ("regular", "urgent"):
            raise ConfigError(f"task {task.task_id} has unknown type "
                              f"{task.task_type!r}")
        if not 1 <= task.priority <= 5:
            raise ConfigError(f"task {task.task_id} priority outside 1..5")
    for booking in config.bookings:
        if booking.edge_id not in graph.edges:
            raise ConfigError(f"booking references unknown edge {booking.edge_id}")
        if booking.end <= booking.start:
            raise ConfigError(f"booking on edge {booking.edge_id} has an "
                              f"empty window")
    if config.mode in ("dyncnet", "fields"):
        if not config.agvs:
            raise ConfigError(f"mode {config.mode} needs at least one agv")
        if config.transport_base is None:
            raise ConfigError(f"mode {config.mode} needs a transport_base")
        if config.vehicles or config.infrastructure:
            raise ConfigError("vehicle entries belong to traffic mode")
    else:
        if not config.vehicles or config.infrastructure is None:
            raise ConfigError("traffic mode needs vehicles and infrastructure")
        if config.agvs or config.tasks:
            raise ConfigError("agv/task entries belong to the warehouse modes")
    ids = [a.agent_id for a in config.agvs] + \
        [v.agent_id for v in config.vehicles] + \
        [t.task_id for t in config.tasks]
    if len(set(ids)) != len(ids):
        raise ConfigError("agent and task ids must be unique")


def serialize_config(config: ScenarioConfig) -> str:
    """Canonical text: fixed section order, sorted entries, defaults omitted."""
    lines: list[str] = []

    def section(name: str, entries: list[str]) -> None:
        if not entries:
            return
        lines.append(f"[{name}]")
        lines.extend(entries)
        lines.append("")

    def fmt(value: float) -> str:
        return str(int(value)) if float(value).is_integer() else repr(float(value))

    section("scenario", [
        f"name = {config.name}",
        f"mode = {config.mode}",
        f"graph = {config.graph_file}",
        f"run_ticks = {config.run_ticks}",
        f"seed = {config.seed}",
    ])
    network = []
    if config.latency_ticks:
        network.append(f"latency_ticks = {config.latency_ticks}")
    if config.drop_probability:
        network.append(f"drop_probability = {fmt(config.drop_probability)}")
    section("network", network)
    overridden = [f"{key} = {fmt(config.constants[key])}"
                  for key in sorted(config.constants)
                  if config.constants[key] != DEFAULT_CONSTANTS[key]]
    section("constants", overridden)
    agents = [f"agv = {a.agent_id} {a.home}" for a in sorted(
        config.agvs, key=lambda a: a.agent_id)]
    if config.transport_base:
        agents.append(f"transport_base = {config.transport_base[0]} "
                      f"{config.transport_base[1]}")
    agents.extend(f"vehicle = {v.agent_id} {v.origin} {v.destination}"
                  for v in sorted(config.vehicles, key=lambda v: v.agent_id))
    if config.infrastructure:
        agents.append(f"infrastructure = {config.infrastructure}")
    section("agents", agents)
    section("tasks", [
        f"task = {t.task_id} {t.arrival_tick} {t.pickup} {t.dropoff} "
        f"{t.task_type} {t.priority}"
        for t in sorted(config.tasks, key=lambda t: (t.arrival_tick, t.task_id))])
    section("bookings", [
        f"booking = {b.edge_id} {b.vehicle} {b.start} {b.end}"
        for b in sorted(config.bookings,
                        key=lambda b: (b.edge_id, b.vehicle, b.start))])
    section("events", [
        f"{e.action} = {e.tick} {e.node}"
        for e in sorted(config.events, key=lambda e: (e.tick, e.node))])
    for role in sorted(config.roles, key=lambda r: r.name):
        entries = []
        if role.root_weight != 1.0:
            entries.append(f"root_weight = {fmt(role.root_weight)}")
        entries.extend(f"node = {nid} {kind} {label}"
                       for nid, kind, label in sorted(role.nodes))
        entries.extend(f"edge = {p} {c} {fmt(w)}"
                       for p, c, w in sorted(role.edges))
        entries.extend(f"stimulus = {s.catalog_name} {s.target} {fmt(s.magnitude)}"
                       for s in sorted(role.stimuli,
                                       key=lambda s: (s.target, s.catalog_name)))
        section(f"role {role.name}", entries)
    for commitment in sorted(config.commitments, key=lambda c: c.name):
        section(f"commitment {commitment.name}", [
            f"sources = {' '.join(commitment.sources)}",
            f"target = {commitment.target}",
            f"condition = {commitment.condition}",
        ])
    return "\n".join(lines).rstrip("\n") + "\n"

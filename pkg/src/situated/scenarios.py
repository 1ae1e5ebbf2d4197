"""Scenario assembly and execution: warehouse transport and vehicle routing.

Builds the node/agent topology from a scenario config, registers every focus,
action, protocol schema, and synchronization routine the scenario uses, runs
the kernel for the configured number of ticks, and collects the trace plus
run metrics. The global mutual-exclusion invariant is checked after every
dispatched tick; a violation aborts the run.
"""
from __future__ import annotations

import random
from dataclasses import dataclass

from .agent import Filter, PerceptionRequest, SituatedAgent
from .ants import (BUSY, JAMMED, CongestionThresholds, InfrastructureHandler,
                   VehicleHandler, edge_owner, explore_schema,
                   intention_schema)
from .codec import ContentLanguage
from .config import ScenarioConfig
from .dyncnet import (BOUND, COMPLETED, EXECUTING, INTENTIONAL, VOTING,
                      InitiatorHandler, ParticipantHandler, dyncnet_schema)
from .environment import (Action, ActionRejected, Directory,
                          EnvironmentFault, ExternalEnvironment, Focus,
                          SyncUpdate, VirtualEnvironment, position_key)
from .fields import (FieldCoordinator, FieldData, TaskField, combine,
                     gradient_step)
from .freeflow import (ACTION, INTERNAL, FreeFlowTree, SituatedCommitment,
                       Stimulus, TreeEdge, TreeNode, propagate, refine_action,
                       select_action)
from .kernel import Kernel, NetworkConfig
from .locking import Claim, LockCoordinator
from .percepts import (fields_description, graph_paths_description,
                       position_description, register_standard_foci,
                       register_standard_filters)
from .worldgraph import (GraphError, GraphPath, Hull, OperatingSpace,
                         PathProjection, distance_meters)


class InvariantViolation(Exception):
    """The harness observed two locked projections sharing a segment."""


@dataclass
class RunMetrics:
    tasks_completed: int = 0
    mean_assignment_latency_ticks: float = 0.0
    switch_count: int = 0
    lock_conflict_wait_ticks: int = 0
    booking_reject_count: int = 0
    trace_hash: str = ""

    def as_lines(self) -> list[str]:
        return [
            f"tasksCompleted {self.tasks_completed}",
            f"meanAssignmentLatencyTicks {self.mean_assignment_latency_ticks:.3f}",
            f"switchCount {self.switch_count}",
            f"lockConflictWaitTicks {self.lock_conflict_wait_ticks}",
            f"bookingRejectCount {self.booking_reject_count}",
            f"traceHash {self.trace_hash}",
        ]


def emit_metrics(metrics: RunMetrics, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(metrics.as_lines()) + "\n")


class World(ExternalEnvironment):
    """Ground truth behind the virtual environments: positions, loads, routes.

    Operations take effect at a later tick via kernel events; observations
    answer immediately from current truth.
    """

    def __init__(self, kernel: Kernel, graph, move_ticks: int):
        self.kernel = kernel
        self.graph = graph
        self.move_ticks = move_ticks
        self.positions: dict[str, str] = {}
        self.loads: dict[str, str] = {}          # task -> waiting pickup node
        self.dropoffs: dict[str, str] = {}
        self.carrying: dict[str, str] = {}       # agent -> task
        self.driver_routes: dict[str, GraphPath] = {}
        self.busy_until: dict[str, int] = {}
        self.delivered: list[tuple[str, str, int]] = []
        self.picked: dict[str, tuple[str, int]] = {}   # task -> agv, tick
        self.on_effect = []                      # scenario hooks fn(op)

    def is_busy(self, agent_id: str) -> bool:
        return self.kernel.now < self.busy_until.get(agent_id, 0)

    def operate(self, operation: dict, ve: VirtualEnvironment) -> None:
        op = operation["op"]
        if op == "instructDriver":
            self.driver_routes[operation["agent"]] = operation["path"]
            return
        delay = self.move_ticks if op == "move" else 1
        self.busy_until[operation["agent"]] = self.kernel.now + delay
        self.kernel.schedule(ve.node_id, "world-effect", operation, delay=delay)

    def observe(self, observation: dict) -> dict:
        if observation.get("what") == "positions":
            return dict(sorted(self.positions.items()))
        raise EnvironmentFault(f"unknown observation {observation!r}")

    def apply_effect(self, operation: dict) -> None:
        op, agent = operation["op"], operation["agent"]
        if op == "move":
            if self.positions.get(agent) == operation["from"]:
                self.positions[agent] = operation["to"]
        elif op == "pick":
            task = operation["task"]
            if self.loads.get(task) == self.positions.get(agent) and \
                    agent not in self.carrying:
                del self.loads[task]
                self.carrying[agent] = task
                self.picked[task] = (agent, self.kernel.now)
        elif op == "drop":
            task = self.carrying.get(agent)
            if task is not None and \
                    self.positions.get(agent) == self.dropoffs.get(task):
                del self.carrying[agent]
                self.delivered.append((task, agent, self.kernel.now))
        for hook in self.on_effect:
            hook(operation)

    def advance_driver(self, vehicle: str) -> None:
        route = self.driver_routes.get(vehicle)
        position = self.positions.get(vehicle)
        if route is None or position not in route.nodes:
            return
        index = route.nodes.index(position)
        if index + 1 < len(route.nodes):
            self.positions[vehicle] = route.nodes[index + 1]


# -- stimulus and condition catalogs (bound by name from config trees) ---------

STIMULUS_CATALOG = {
    "always": lambda k: 1.0,
    "moveNeeded": lambda k: 1.0 if k.get("move-needed") else 0.0,
    "nearJob": lambda k: 1.0 if k.get("near-job") else 0.0,
    "canPick": lambda k: 1.0 if k.get("can-pick") else 0.0,
    "canDrop": lambda k: 1.0 if k.get("can-drop") else 0.0,
    "idle": lambda k: 1.0 if not k.get("have-task") and not k.get("carrying")
            else 0.0,
}

CONDITION_CATALOG = {
    "always": lambda k: True,
    "haveTask": lambda k: bool(k.get("have-task") or k.get("carrying")),
    "carrying": lambda k: bool(k.get("carrying")),
}


def default_agv_roles() -> list:
    working = FreeFlowTree("working", [
        TreeNode(1, INTERNAL, "work"),
        TreeNode(2, ACTION, "move"),
        TreeNode(3, INTERNAL, "job"),
        TreeNode(4, ACTION, "pick"),
        TreeNode(5, ACTION, "drop"),
        TreeNode(6, ACTION, "skip"),
    ], [
        TreeEdge(1, 2), TreeEdge(1, 3), TreeEdge(3, 4), TreeEdge(3, 5),
        TreeEdge(1, 6),
    ], [
        Stimulus("moveNeeded", 2,
                 lambda k, f=STIMULUS_CATALOG["moveNeeded"]: 8.0 * f(k)),
        Stimulus("nearJob", 3, lambda k, f=STIMULUS_CATALOG["nearJob"]: 2.0 * f(k)),
        Stimulus("canPick", 4, lambda k, f=STIMULUS_CATALOG["canPick"]: 30.0 * f(k)),
        Stimulus("canDrop", 5, lambda k, f=STIMULUS_CATALOG["canDrop"]: 30.0 * f(k)),
        Stimulus("always", 6, lambda k, f=STIMULUS_CATALOG["always"]: 0.2 * f(k)),
    ], root_weight=1.0)
    parking = FreeFlowTree("parking", [
        TreeNode(10, INTERNAL, "parked"),
        TreeNode(11, ACTION, "park"),
    ], [TreeEdge(10, 11)], [
        Stimulus("idle", 11, lambda k, f=STIMULUS_CATALOG["idle"]: 1.0 * f(k)),
    ], root_weight=2.0)
    return [working, parking]


def default_agv_commitments() -> list:
    return [SituatedCommitment("work", frozenset({"parking"}), "working",
                               CONDITION_CATALOG["haveTask"])]


def roles_from_config(config: ScenarioConfig):
    if not config.roles:
        return default_agv_roles(), default_agv_commitments()
    roles = []
    for spec in config.roles:
        nodes = [TreeNode(nid, kind, label) for nid, kind, label in spec.nodes]
        edges = [TreeEdge(p, c, w) for p, c, w in spec.edges]
        stimuli = []
        for line in spec.stimuli:
            indicator = STIMULUS_CATALOG.get(line.catalog_name)
            if indicator is None:
                raise EnvironmentFault(
                    f"unknown stimulus {line.catalog_name!r} in role {spec.name}")
            stimuli.append(Stimulus(line.catalog_name, line.target,
                                    lambda k, f=indicator, m=line.magnitude:
                                    m * f(k)))
        roles.append(FreeFlowTree(spec.name, nodes, edges, stimuli,
                                  root_weight=spec.root_weight))
    commitments = []
    for spec in config.commitments:
        condition = CONDITION_CATALOG.get(spec.condition)
        if condition is None:
            raise EnvironmentFault(f"unknown condition {spec.condition!r}")
        commitments.append(SituatedCommitment(
            spec.name, frozenset(spec.sources), spec.target, condition))
    return roles, commitments


EXTERNAL_AGV_ACTIONS = frozenset({"move", "pick", "drop"})


# -- virtual/external action registrations ------------------------------------

def register_agv_actions(ve: VirtualEnvironment, coordinator: LockCoordinator,
                         fields: FieldCoordinator) -> None:
    def project(ve: VirtualEnvironment, action: Action) -> None:
        params = action.params
        path: GraphPath = params["path"]
        try:
            path_edges = path.edge_ids(ve.graph)
        except GraphError as exc:
            raise ActionRejected(f"projection over nonexistent edges: {exc}")
        hull_ids = frozenset(params.get("hull", ()))
        unknown = sorted(e for e in hull_ids if e not in ve.graph.edges)
        if unknown:
            raise ActionRejected(f"projection hull over unknown edges {unknown}")
        projection = PathProjection(params["id"], params["priority"],
                                    Hull(hull_ids), path_edges)
        ve.state_write({f"projection:{projection.id}": projection.status})
        claim = Claim(projection.id, max(1, min(5, projection.priority or 1)),
                      projection.segment_set(), ve.node_id, ve.kernel.now)
        coordinator.submit_claim(claim, on_granted=params.get("on_granted"))

    def emit(ve: VirtualEnvironment, action: Action) -> None:
        fields.emit_field(action.params["field"])

    def remove_field(ve: VirtualEnvironment, action: Action) -> None:
        fields.remove_field(action.params["task"])

    ve.register_virtual_action("project", project)
    ve.register_virtual_action("emit", emit)
    ve.register_virtual_action("removeField", remove_field)
    ve.register_external_action("move", lambda ve, a: {
        "op": "move", "agent": a.agent_id, "from": a.params["from"],
        "to": a.params["to"]})
    ve.register_external_action("pick", lambda ve, a: {
        "op": "pick", "agent": a.agent_id, "node": a.params["node"],
        "task": a.params["task"]})
    ve.register_external_action("drop", lambda ve, a: {
        "op": "drop", "agent": a.agent_id, "node": a.params["node"],
        "task": a.params["task"]})


def register_vehicle_actions(ve: VirtualEnvironment) -> None:
    ve.register_external_action("instructDriver", lambda ve, a: {
        "op": "instructDriver", "agent": a.agent_id, "path": a.params["path"]})


# -- position mirroring ------------------------------------------------------

class PositionMirror:
    """Locally initiated sync: own agents' sensor positions into state, then
    changed positions mirrored to the other nodes."""

    def __init__(self, world: World, agent_ids: list[str],
                 station: str | None = None):
        self.world = world
        self.agent_ids = sorted(agent_ids)
        self.station = station
        self._last: dict[str, str] = {}

    def reset(self) -> None:
        self._last = {}

    def __call__(self, ve: VirtualEnvironment) -> None:
        changed = {}
        for agent_id in self.agent_ids:
            pos = self.world.positions.get(agent_id)
            if pos is not None and self._last.get(agent_id) != pos:
                self._last[agent_id] = pos
                changed[agent_id] = pos
        node_pos = self.station
        if self.agent_ids and self.station is None:
            node_pos = self.world.positions.get(self.agent_ids[0])
        if node_pos is not None:
            ve.state_write({"node-position": node_pos})
        if changed:
            ve.state_write({position_key(a): p for a, p in changed.items()})
            ve.emit_sync(SyncUpdate("resourceMirror", ve.node_id,
                                    {"positions": changed}))


def resource_mirror_handler(ve: VirtualEnvironment, update: SyncUpdate) -> None:
    payload = update.payload
    if "positions" in payload:
        ve.state_write({position_key(a): p
                        for a, p in sorted(payload["positions"].items())})
    if "traffic" in payload:
        ve.state_write({f"traffic:{eid}": status
                        for eid, status in sorted(payload["traffic"].items())})
    if "tasks" in payload:
        ve.state_write({f"task:{tid}": info
                        for tid, info in sorted(payload["tasks"].items())})
    for tid in payload.get("tasksRemoved", ()):
        ve.state.remove([f"task:{tid}"])


# -- AGV controller ------------------------------------------------------------

class AgvController:
    """Per-tick behavior of one AGV: perceive, select, refine, communicate."""

    def __init__(self, runtime: "ScenarioRuntime", agent: SituatedAgent,
                 coordinator: LockCoordinator, mode: str):
        self.runtime = runtime
        self.agent = agent
        self.coordinator = coordinator
        self.mode = mode
        self.world = runtime.world
        self.graph = runtime.graph
        self.cfg = runtime.config
        self.roles, self.commitments = roles_from_config(runtime.config)
        self.participant: ParticipantHandler | None = None
        self.space = OperatingSpace()
        self.plan_route: GraphPath | None = None
        self.plan_target: str | None = None
        self.projection_id: int | None = None
        self.lock_state = "none"
        self._projection_counter = 0
        self._started = False
        self._near_meters = self._mean_segment_length()

    def _mean_segment_length(self) -> float:
        edges = self.graph.edges.values()
        return sum(e.length for e in edges) / max(1, len(edges))

    # -- knowledge upkeep ---------------------------------------------------

    def _refresh_knowledge(self) -> None:
        agent = self.agent
        agent.perceive(PerceptionRequest(
            f"pos@{self.world.kernel.now}", Focus("own-position",
                                                  {"agent": agent.agent_id}),
            Filter("identity", {})))
        position = agent.knowledge.get("position")
        carrying = self.world.carrying.get(agent.agent_id)
        task_id, pickup, dropoff = None, None, None
        if carrying is not None:
            task_id = carrying
            dropoff = self._task_info(task_id).get("dropoff")
        elif self.mode == "dyncnet" and self.participant is not None and \
                self.participant.state.state in (INTENTIONAL, BOUND):
            task_id = self.participant.state.provisional_task
            pickup = self.participant.task_location()
        elif self.mode == "fields":
            task_id, pickup = self._field_target(position)
        target = dropoff if carrying else pickup
        near = (position is not None and pickup is not None and
                distance_meters(self.graph, position, pickup)
                <= self._near_meters)
        agent.knowledge_write({
            "carrying": carrying,
            "have-task": task_id is not None and carrying is None,
            "task-id": task_id,
            "task-pickup": pickup,
            "task-dropoff": dropoff,
            "near-job": near,
            "can-pick": (carrying is None and pickup is not None
                         and position == pickup
                         and self._load_waiting(task_id, pickup)),
            "can-drop": carrying is not None and position == dropoff,
            "move-needed": (target is not None and position != target),
            "target": target,
            "operating-space": self.space,
        })

    def _task_info(self, task_id: str) -> dict:
        return self.agent.ve.state.get(f"task:{task_id}", {})

    def _load_waiting(self, task_id: str | None, pickup: str) -> bool:
        if task_id is None:
            return False
        info = self.agent.ve.state.get(f"task:{task_id}")
        return (info is not None and info.get("pickup") == pickup
                and not info.get("assigned"))

    def _field_target(self, position: str | None):
        """Fields mode: the strongest-field task source reachable by gradient."""
        if position is None:
            return None, None
        agent = self.agent
        agent.perceive(PerceptionRequest(
            f"fields@{self.world.kernel.now}", Focus("task-fields", {}),
            Filter("identity", {})))
        fields: tuple[TaskField, ...] = agent.knowledge.get("task-fields", ())
        if not fields:
            return None, None
        unit = self.cfg.constant("range_unit_meters")
        if combine(fields, position, self.graph, unit) <= 0:
            return None, None
        for f in sorted(fields, key=lambda f: f.task_id):
            if f.data.source == position:
                return f.task_id, f.data.source
        step = gradient_step(position, fields, self.graph, unit)
        if step == position:
            return None, None
        # head one segment toward the gradient; task binding happens at source
        return None, step

    # -- movement pipeline ---------------------------------------------------

    def _ensure_plan(self, position: str, target: str) -> None:
        if self.plan_target != target or self.plan_route is None or \
                position not in self.plan_route.nodes:
            self._abandon_plan()
            route = self._perceive_route(position, target)
            if route is None:
                return
            self.plan_route = route
            self.plan_target = target
            self._project_route(route)

    def _perceive_route(self, position: str, target: str) -> GraphPath | None:
        agent = self.agent
        stale = [k for k in agent.knowledge.snapshot() if k.startswith("route:")]
        agent.knowledge.remove(stale)
        agent.perceive(PerceptionRequest(
            f"route@{self.world.kernel.now}",
            Focus("paths", {"from": position, "to": target,
                            "maxDist": self.cfg.constant(
                                "path_focus_max_dist_meters")}),
            Filter("shortestPath", {})))
        routes = [v for k, v in agent.knowledge.snapshot().items()
                  if k.startswith("route:")]
        return routes[0] if routes else None

    def _project_route(self, route: GraphPath) -> None:
        self._projection_counter += 1
        index = self.agent.ve.directory.agents[self.agent.agent_id].index
        pid = index * 1000 + self._projection_counter
        self.projection_id = pid
        self.lock_state = "requested"
        self.space.requested_path = route
        priority = self._priority_for_claim()
        self.agent.ve.act(Action(self.agent.agent_id, "project", {
            "id": pid, "priority": priority, "path": route, "hull": (),
            "on_granted": self._on_lock_granted,
        }))

    def _priority_for_claim(self) -> int:
        task_id = self.agent.knowledge.get("task-id")
        if task_id:
            info = self._task_info(task_id)
            return int(info.get("priority", 1))
        return 1

    def _on_lock_granted(self, pid: int) -> None:
        if pid == self.projection_id and self.plan_route is not None:
            self.lock_state = "locked"
            self.space.locked(self.plan_route)

    def _abandon_plan(self) -> None:
        if self.projection_id is not None:
            self.coordinator.withdraw_claim(self.projection_id)
        self.projection_id = None
        self.plan_route = None
        self.plan_target = None
        self.lock_state = "none"
        self.space.requested_path = None
        self.space.release(None)

    def on_moved(self, from_node: str, to_node: str) -> None:
        edge = self.graph.edge_between(from_node, to_node)
        if self.projection_id is not None and self.lock_state == "locked":
            record = self.coordinator.table.get(self.projection_id)
            if record is not None and edge.id in record.remaining:
                self.coordinator.clear_segments(self.projection_id,
                                                frozenset({edge.id}))
        if self.space.locked_path is not None and \
                to_node in self.space.locked_path.nodes:
            tail = self.space.locked_path.nodes[
                self.space.locked_path.nodes.index(to_node):]
            self.space.release(GraphPath(tail))
        if self.plan_target == to_node:
            self.plan_route = None
            self.plan_target = None
            self.projection_id = None
            self.lock_state = "none"
            self.space.release(None)

    # -- per-tick step ------------------------------------------------------

    def step(self) -> None:
        agent = self.agent
        if self.participant is not None and \
                self.participant.state.state == VOTING:
            self._started = False
        self._refresh_knowledge()
        position = agent.knowledge.get("position")
        target = agent.knowledge.get("target")
        if target is None and self.plan_target is not None:
            self._abandon_plan()  # assignment was aborted or task finished
        elif position is not None and target is not None and position != target:
            self._ensure_plan(position, target)
        if position is not None and not self.world.is_busy(agent.agent_id):
            self._select_and_act()
        agent.communicate_step()

    def _select_and_act(self) -> None:
        agent = self.agent
        knowledge = agent.knowledge.snapshot()
        assignment = propagate(self.roles, self.commitments,
                               self.cfg.constant("root_activity"), knowledge)
        name, external = select_action(assignment, self.roles,
                                       EXTERNAL_AGV_ACTIONS)
        if not external:
            return
        action = refine_action(name, agent.agent_id, knowledge)
        if action is None:
            return
        if name in ("pick", "drop"):
            task_id = knowledge.get("task-id") or \
                self.world.carrying.get(agent.agent_id)
            if task_id is None:
                return
            action = Action(agent.agent_id, name,
                            dict(action.params, task=task_id))
        try:
            agent.ve.act(action)
        except (ActionRejected, EnvironmentFault):
            return
        if self.mode == "dyncnet" and not self._started and \
                self.participant is not None and \
                self.participant.state.state == INTENTIONAL and \
                name in ("move", "pick"):
            self._started = True
            self.participant.task_started()

    def on_task_closed(self) -> None:
        """After a drop or an abort: back to voting, plans dropped."""
        self._started = False
        if self.participant is not None:
            self.participant.ready_to_work()


# -- scenario runtime ----------------------------------------------------------

@dataclass
class TransportAgent:
    agent: SituatedAgent
    task_id: str
    arrival_tick: int
    handler: InitiatorHandler | None = None
    picked_tick: int | None = None


class ScenarioRuntime:
    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.graph = config.graph
        self.language = ContentLanguage()
        self.language.register(dyncnet_schema())
        self.language.register(explore_schema())
        self.language.register(intention_schema())
        self.kernel = Kernel(NetworkConfig(config.latency_ticks,
                                           config.drop_probability,
                                           config.seed))
        self.rng = random.Random(config.seed)
        self.directory = Directory()
        self.world = World(self.kernel, self.graph,
                           int(config.constant("ticks_per_segment")))
        self.world.on_effect.append(self._on_world_effect)
        self.ves: dict[str, VirtualEnvironment] = {}
        self.agents: dict[str, SituatedAgent] = {}
        self.controllers: dict[str, AgvController] = {}
        self.coordinators: dict[str, LockCoordinator] = {}
        self.field_coordinators: dict[str, FieldCoordinator] = {}
        self.mirrors: dict[str, PositionMirror] = {}
        self.transports: dict[str, TransportAgent] = {}
        self.vehicles: dict[str, VehicleHandler] = {}
        self.infrastructure: dict[str, InfrastructureHandler] = {}
        self.violation: str | None = None
        self.kernel.on("deliver", self._route_delivery)
        self.kernel.on("world-effect", self._apply_world_effect)
        self.kernel.on("node-step", self._node_step)
        self.kernel.on("task-arrival", self._task_arrival)
        self.kernel.on("timer", self._timer)
        self.kernel.on("drive", self._drive)
        self.kernel.on("drill", self._drill)
        self.kernel.on("membership", self._membership)
        if config.mode in ("dyncnet", "fields"):
            self._build_warehouse()
        else:
            self._build_traffic()

    # -- assembly -----------------------------------------------------------

    def _new_ve(self, node_id: str) -> VirtualEnvironment:
        ve = VirtualEnvironment(node_id, self.kernel, self.directory,
                                self.language, self.world, self.graph)
        register_standard_foci(ve)
        ve.register_sync_handler("resourceMirror", resource_mirror_handler)
        self.ves[node_id] = ve
        return ve

    def _host_agent(self, ve: VirtualEnvironment, agent_id: str,
                    agent_type: str, register: bool = True) -> SituatedAgent:
        if register:
            self.directory.register(agent_id, agent_type, ve.node_id)
        agent = SituatedAgent(agent_id, ve)
        register_standard_filters(agent)
        agent.register_description(graph_paths_description())
        agent.register_description(position_description())
        agent.register_description(fields_description())
        ve.host(agent)
        self.agents[agent_id] = agent
        return agent

    def _build_agv_node(self, agent_id: str, home: str,
                        register: bool = True) -> None:
        ve = self._new_ve(agent_id)
        self.kernel.join_node(agent_id, local_ve=ve)
        coordinator = LockCoordinator(ve)
        self.coordinators[agent_id] = coordinator
        fields = FieldCoordinator(ve, self.config.constant("range_unit_meters"),
                                  int(self.config.constant("age_window_ticks")))
        self.field_coordinators[agent_id] = fields
        register_agv_actions(ve, coordinator, fields)
        mirror = PositionMirror(self.world, [agent_id])
        self.mirrors[agent_id] = mirror
        ve.register_sync_routine(mirror)
        agent = self._host_agent(ve, agent_id, "agv", register)
        controller = AgvController(self, agent, coordinator, self.config.mode)
        self.controllers[agent_id] = controller
        if self.config.mode == "dyncnet":
            participant = ParticipantHandler(
                agent, self.graph, self.config.constant("switch_margin_meters"))
            agent.register_protocol("DynCNET", participant)
            controller.participant = participant
            participant.ready_to_work()
        self.world.positions.setdefault(agent_id, home)
        self.kernel.schedule(agent_id, "node-step", None, delay=0)

    def _build_warehouse(self) -> None:
        base_node, station = self.config.transport_base
        ve = self._new_ve(base_node)
        self.kernel.join_node(base_node, local_ve=ve)
        coordinator = LockCoordinator(ve)
        self.coordinators[base_node] = coordinator
        fields = FieldCoordinator(ve, self.config.constant("range_unit_meters"),
                                  int(self.config.constant("age_window_ticks")))
        self.field_coordinators[base_node] = fields
        register_agv_actions(ve, coordinator, fields)
        mirror = PositionMirror(self.world, [], station=station)
        self.mirrors[base_node] = mirror
        ve.register_sync_routine(mirror)
        jitter = int(self.config.constant("arrival_jitter_ticks"))
        transport_ids = []
        for task in sorted(self.config.tasks, key=lambda t: t.task_id):
            agent_id = f"ta-{task.task_id}"
            agent = self._host_agent(ve, agent_id, "transport")
            self.transports[task.task_id] = TransportAgent(agent, task.task_id,
                                                           task.arrival_tick)
            self.world.dropoffs[task.task_id] = task.dropoff
            # a transport agent sits at its task: scope queries center there
            self.world.positions[agent_id] = task.pickup
            transport_ids.append(agent_id)
        mirror.agent_ids = sorted(transport_ids)
        for task in self.config.tasks:
            arrival = task.arrival_tick + \
                (self.rng.randrange(jitter + 1) if jitter else 0)
            self.transports[task.task_id].arrival_tick = arrival
            self.kernel.schedule(base_node, "task-arrival",
                                 {"task": task.task_id}, delay=arrival)
        for agv in sorted(self.config.agvs, key=lambda a: a.agent_id):
            self._build_agv_node(agv.agent_id, agv.home)
        self.kernel.schedule(base_node, "node-step", None, delay=0)
        self._schedule_drills()

    def _build_traffic(self) -> None:
        infra_node = self.config.infrastructure
        ve = self._new_ve(infra_node)
        self.kernel.join_node(infra_node, local_ve=ve)
        thresholds = CongestionThresholds(
            int(self.config.constant("congestion_busy_at")),
            int(self.config.constant("congestion_jammed_at")))
        multipliers = {
            "freeFlow": 1.0,
            BUSY: self.config.constant("congestion_busy_multiplier"),
            JAMMED: self.config.constant("congestion_jammed_multiplier"),
        }
        ia_name = lambda node: f"ia-{node}"
        for node in sorted(self.graph.nodes):
            agent = self._host_agent(ve, ia_name(node), "infrastructure")
            handler = InfrastructureHandler(
                agent, node, self.graph,
                int(self.config.constant("booking_ttl_ticks")),
                int(self.config.constant("edge_capacity")),
                thresholds, ia_name,
                int(self.config.constant("congestion_horizon_ticks")))
            agent.register_protocol("ExplorePaths", handler)
            agent.register_protocol("PropagateIntention", handler)
            self.infrastructure[node] = handler
        for line in self.config.bookings:
            edge = self.graph.edges[line.edge_id]
            owner = self.infrastructure[edge_owner(edge)]
            owner.seed_reservation(line.edge_id, line.vehicle,
                                   (line.start, line.end))
        self.kernel.schedule(infra_node, "node-step", None, delay=0)
        for vehicle in sorted(self.config.vehicles, key=lambda v: v.agent_id):
            vid = vehicle.agent_id
            vve = self._new_ve(vid)
            self.kernel.join_node(vid, local_ve=vve)
            register_vehicle_actions(vve)
            mirror = PositionMirror(self.world, [vid])
            self.mirrors[vid] = mirror
            vve.register_sync_routine(mirror)
            agent = self._host_agent(vve, vid, "vehicle")
            handler = VehicleHandler(
                agent, self.graph, vehicle.destination,
                self.config.constant("explore_max_dist_meters"),
                self.config.constant("revision_threshold"),
                int(self.config.constant("ticks_per_segment")),
                multipliers, ia_name,
                int(self.config.constant("booking_ttl_ticks")))
            agent.register_protocol("ExplorePaths", handler)
            agent.register_protocol("PropagateIntention", handler)
            self.vehicles[vid] = handler
            self.world.positions[vid] = vehicle.origin
            self.kernel.schedule(vid, "node-step", None, delay=0)
            self.kernel.schedule(vid, "drive", None,
                                 delay=int(self.config.constant(
                                     "drive_period_ticks")))
        self._schedule_drills()

    def _schedule_drills(self) -> None:
        for event in self.config.events:
            self.kernel.schedule(event.node, "drill",
                                 {"action": event.action, "node": event.node},
                                 delay=event.tick)

    # -- event handlers ------------------------------------------------------

    def _route_delivery(self, kernel, record) -> None:
        ve = self.ves.get(record.node)
        if ve is not None and kernel.is_alive(record.node):
            ve.deliver_transmission(record.payload["src"],
                                    record.payload["uid"],
                                    record.payload["data"])

    def _apply_world_effect(self, kernel, record) -> None:
        operation = record.payload
        self.world.apply_effect(operation)

    def _on_world_effect(self, operation: dict) -> None:
        op, agent_id = operation["op"], operation["agent"]
        if op == "move":
            controller = self.controllers.get(agent_id)
            if controller is not None and \
                    self.world.positions.get(agent_id) == operation["to"]:
                controller.on_moved(operation["from"], operation["to"])
        elif op == "pick":
            task_id = operation["task"]
            picked = self.world.picked.get(task_id)
            if picked is None or picked[0] != agent_id:
                return
            transport = self.transports.get(task_id)
            if transport is not None:
                transport.picked_tick = picked[1]
                base = transport.agent.ve
                info = dict(base.state.get(f"task:{task_id}", {}),
                            assigned=agent_id)
                base.state_write({f"task:{task_id}": info})
                base.emit_sync(SyncUpdate("resourceMirror", base.node_id,
                                          {"tasks": {task_id: info}}))
                self.field_coordinators[base.node_id].remove_field(task_id)
        elif op == "drop":
            delivered = [d for d in self.world.delivered if d[1] == agent_id]
            if not delivered:
                return
            task_id = delivered[-1][0]
            transport = self.transports.get(task_id)
            if transport is not None:
                if transport.handler is not None:
                    transport.handler.task_completed()
                base = transport.agent.ve
                base.state.remove([f"task:{task_id}"])
                base.emit_sync(SyncUpdate("resourceMirror", base.node_id,
                                          {"tasksRemoved": [task_id]}))
            controller = self.controllers.get(agent_id)
            if controller is not None:
                controller.on_task_closed()
            self.kernel.emit(self.agents[agent_id].ve.node_id,
                             "task-completed", {"task": task_id,
                                                "agv": agent_id})

    def _task_arrival(self, kernel, record) -> None:
        task_id = record.payload["task"]
        transport = self.transports[task_id]
        spec = next(t for t in self.config.tasks if t.task_id == task_id)
        base = transport.agent.ve
        info = {"pickup": spec.pickup, "dropoff": spec.dropoff,
                "type": spec.task_type, "priority": spec.priority}
        base.state_write({f"task:{task_id}": info})
        base.emit_sync(SyncUpdate("resourceMirror", base.node_id,
                                  {"tasks": {task_id: info}}))
        self.world.loads[task_id] = spec.pickup
        if self.config.mode == "dyncnet":
            transport.handler = InitiatorHandler(
                transport.agent, task_id, spec.pickup, spec.task_type,
                spec.priority,
                self.config.constant("switch_margin_meters"),
                self.config.constant("scope_unit_meters"),
                int(self.config.constant("age_window_ticks")),
                int(self.config.constant("timer_period_ticks")))
            transport.agent.register_protocol("DynCNET", transport.handler)
            kernel.schedule(base.node_id, "timer", {"task": task_id},
                            delay=int(self.config.constant("timer_period_ticks")))
        else:
            field = TaskField(task_id, FieldData(
                1000 + self.directory.agents[transport.agent.agent_id].index,
                spec.priority, spec.pickup))
            self.field_coordinators[base.node_id].emit_field(field)

    def _timer(self, kernel, record) -> None:
        task_id = record.payload["task"]
        transport = self.transports.get(task_id)
        if transport is None or transport.handler is None:
            return
        handler = transport.handler
        if handler.state.state in (EXECUTING, COMPLETED):
            return
        handler.on_timer()
        kernel.schedule(record.node, "timer", {"task": task_id},
                        delay=int(self.config.constant("timer_period_ticks")))

    def _drive(self, kernel, record) -> None:
        vehicle = record.node
        if not kernel.is_alive(vehicle):
            return
        self.world.advance_driver(vehicle)
        if kernel.now + 1 <= self.config.run_ticks:
            kernel.schedule(vehicle, "drive", None,
                            delay=int(self.config.constant("drive_period_ticks")))

    def _node_step(self, kernel, record) -> None:
        node_id = record.node
        ve = self.ves.get(node_id)
        if ve is None or not kernel.is_alive(node_id):
            return
        ve.synchronize_local()
        node = kernel.nodes[node_id]
        for agent_id in sorted(node.hosted_agents):
            agent = self.agents.get(agent_id)
            if agent is None:
                continue
            controller = self.controllers.get(agent_id)
            if controller is not None:
                controller.step()
                continue
            handler = self.vehicles.get(agent_id)
            if handler is not None:
                self._vehicle_step(agent, handler)
                continue
            agent.communicate_step()
        if kernel.now + 1 <= self.config.run_ticks:
            kernel.schedule(node_id, "node-step", None, delay=1)

    def _vehicle_step(self, agent: SituatedAgent, handler: VehicleHandler) -> None:
        agent.perceive(PerceptionRequest(
            f"pos@{self.kernel.now}",
            Focus("own-position", {"agent": agent.agent_id}),
            Filter("identity", {})))
        now = self.kernel.now
        if now % int(self.config.constant("explore_period_ticks")) == 0:
            handler.send_exploration_ant()
        if now % int(self.config.constant("vehicle_period_ticks")) == 0:
            handler.run_cycle()
        agent.communicate_step()

    def _drill(self, kernel, record) -> None:
        action, node = record.payload["action"], record.payload["node"]
        if action == "leave" and kernel.is_alive(node):
            kernel.leave_node(node)
        elif action == "join" and not kernel.is_alive(node):
            agv = next((a for a in self.config.agvs if a.agent_id == node), None)
            if agv is not None:
                home = self.world.positions.get(node, agv.home)
                self._build_agv_node(node, home, register=False)
                for mirror in self.mirrors.values():
                    mirror.reset()

    def _membership(self, kernel, record) -> None:
        event, node = record.payload["event"], record.payload["node"]
        for node_id in sorted(self.coordinators):
            if kernel.is_alive(node_id):
                self.coordinators[node_id].on_membership(event, node)
        if event == "leave":
            lost_agents = sorted(a.agent_id for a in self.directory.agents.values()
                                 if a.node_id == node)
            for transport in self.transports.values():
                if transport.handler is not None:
                    for agent_id in lost_agents:
                        transport.handler.on_agv_lost(agent_id)
        elif event == "join":
            for coordinator_node in sorted(self.field_coordinators):
                if kernel.is_alive(coordinator_node) and coordinator_node != node:
                    self.field_coordinators[coordinator_node].respread_owned()

    # -- safety -------------------------------------------------------------

    def check_lock_safety(self) -> None:
        taken: dict[int, str] = {}
        for node_id in sorted(self.coordinators):
            if not self.kernel.is_alive(node_id):
                continue
            for segment in self.coordinators[node_id].locked_segments():
                if segment in taken:
                    self.violation = (f"segment {segment} locked by "
                                      f"{taken[segment]} and {node_id}")
                    raise InvariantViolation(self.violation)
                taken[segment] = node_id

    # -- run ---------------------------------------------------------------

    def run(self) -> RunMetrics:
        while self.kernel.now <= self.config.run_ticks:
            records = self.kernel.step()
            if not records:
                break
            self.check_lock_safety()
        return self.collect_metrics()

    def collect_metrics(self) -> RunMetrics:
        metrics = RunMetrics()
        if self.config.mode == "traffic":
            metrics.tasks_completed = sum(
                1 for vid, handler in self.vehicles.items()
                if self.world.positions.get(vid) == handler.destination)
        else:
            metrics.tasks_completed = len(self.world.delivered)
        latencies: list[int] = []
        for transport in self.transports.values():
            if self.config.mode == "dyncnet":
                handler = transport.handler
                if handler is not None and handler.assignment_tick is not None:
                    latencies.append(handler.assignment_tick -
                                     transport.arrival_tick)
            elif transport.picked_tick is not None:
                latencies.append(transport.picked_tick - transport.arrival_tick)
        if latencies:
            metrics.mean_assignment_latency_ticks = \
                sum(latencies) / len(latencies)
        metrics.switch_count = sum(
            t.handler.switch_count for t in self.transports.values()
            if t.handler is not None)
        metrics.lock_conflict_wait_ticks = sum(
            r.payload["waitTicks"] for r in self.kernel.trace
            if r.kind == "claim-granted")
        metrics.booking_reject_count = sum(
            v.reject_count for v in self.vehicles.values())
        metrics.trace_hash = self.kernel.trace_hash()
        return metrics


def run_scenario(config: ScenarioConfig) -> tuple[RunMetrics, str]:
    runtime = ScenarioRuntime(config)
    metrics = runtime.run()
    return metrics, runtime.kernel.trace_text()

"""Scenario-registered perception machinery: foci, descriptions, filters.

The virtual environment and agents dispatch perception through registration
tables; this module provides the concrete entries both bundled scenarios use.
A focus narrows what is sensed into a representation; a description extracts
knowledge items from a representation; a filter narrows which items reach the
agent's knowledge.
"""
from __future__ import annotations

from dataclasses import dataclass

from .agent import Description, Filter, Knowledge, SituatedAgent
from .ants import TrafficObservation, TrafficState
from .environment import Sense, VirtualEnvironment, position_key
from .fields import TaskField
from .worldgraph import GraphPath, distance_meters, paths_within


@dataclass(frozen=True)
class GraphPaths:
    paths: tuple[GraphPath, ...]


@dataclass(frozen=True)
class PositionReading:
    agent_id: str
    node: str


@dataclass(frozen=True)
class FieldSet:
    fields: tuple[TaskField, ...]


@dataclass(frozen=True)
class ProjectionStatus:
    projection_id: int
    status: str | None


# -- foci (virtual perceptions against the local state repository) -----------

def sense_paths(ve: VirtualEnvironment, sense: Sense) -> GraphPaths:
    params = sense.focus.params
    found = paths_within(ve.graph, params["from"], params["to"],
                         params["maxDist"])
    return GraphPaths(tuple(found))


def sense_fields(ve: VirtualEnvironment, sense: Sense) -> FieldSet:
    snapshot = ve.state.snapshot()
    fields = sorted((v for k, v in snapshot.items() if k.startswith("field:")),
                    key=lambda f: f.task_id)
    return FieldSet(tuple(fields))


def sense_projection_status(ve: VirtualEnvironment, sense: Sense) -> ProjectionStatus:
    pid = sense.focus.params["id"]
    return ProjectionStatus(pid, ve.state.get(f"projection:{pid}"))


def sense_own_position(ve: VirtualEnvironment, sense: Sense) -> PositionReading:
    return PositionReading(sense.agent_id,
                           ve.state.get(position_key(sense.agent_id)))


def register_standard_foci(ve: VirtualEnvironment) -> None:
    ve.register_virtual_focus("paths", sense_paths)
    ve.register_virtual_focus("task-fields", sense_fields)
    ve.register_virtual_focus("projection-status", sense_projection_status)
    ve.register_virtual_focus("own-position", sense_own_position)


# -- descriptions --------------------------------------------------------------

def route_key(path: GraphPath) -> str:
    return "route:" + ">".join(path.nodes)


def graph_paths_description() -> Description:
    return Description(
        "graph-paths",
        matches=lambda rep: isinstance(rep, GraphPaths),
        extract=lambda rep: {route_key(p): p for p in rep.paths},
    )


def position_description() -> Description:
    return Description(
        "own-position",
        matches=lambda rep: isinstance(rep, PositionReading)
        and rep.node is not None,
        extract=lambda rep: {"position": rep.node},
    )


def fields_description() -> Description:
    return Description(
        "task-fields",
        matches=lambda rep: isinstance(rep, FieldSet),
        extract=lambda rep: {"task-fields": rep.fields},
    )


def projection_status_description() -> Description:
    return Description(
        "projection-status",
        matches=lambda rep: isinstance(rep, ProjectionStatus)
        and rep.status is not None,
        extract=lambda rep: {f"projection-status:{rep.projection_id}": rep.status},
    )


def congestion_level_description(path: GraphPath, busy_density: float,
                                 jammed_density: float) -> Description:
    """Maps a traffic observation to a traffic state via density thresholds."""

    def classify(rep: TrafficObservation) -> Knowledge:
        if rep.density >= jammed_density:
            status = "jammed"
        elif rep.density >= busy_density:
            status = "busy"
        else:
            status = "freeFlow"
        return {"traffic-state": TrafficState(path, status)}

    return Description(
        "congestion-level",
        matches=lambda rep: isinstance(rep, TrafficObservation),
        extract=classify,
    )


# -- filters --------------------------------------------------------------

def shortest_path_filter(percept: Knowledge, filter: Filter,
                         agent: SituatedAgent) -> Knowledge:
    """Keep only the shortest sensed route (ties: smallest node sequence)."""
    routes = {k: v for k, v in percept.items() if k.startswith("route:")}
    if not routes:
        return {}
    graph = agent.ve.graph
    best = min(routes, key=lambda k: (routes[k].length(graph), routes[k].nodes))
    return {best: routes[best]}


def park_location_filter(percept: Knowledge, filter: Filter,
                         agent: SituatedAgent) -> Knowledge:
    """Keep only the nearest park location to the filter's position."""
    position = filter.params["position"]
    locations = {k: v for k, v in percept.items() if k.startswith("park:")}
    if not locations:
        return {}
    graph = agent.ve.graph
    best = min(locations,
               key=lambda k: (distance_meters(graph, position, locations[k]),
                              locations[k]))
    return {best: locations[best]}


def register_standard_filters(agent: SituatedAgent) -> None:
    agent.register_filter("shortestPath", shortest_path_filter)
    agent.register_filter("nearestParking", park_location_filter)

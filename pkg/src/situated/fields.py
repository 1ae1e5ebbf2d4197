"""Field-based task assignment: emission, spreading, gradients, aging.

An unassigned task emits a scalar field centered on its pickup node. The
field's value decays linearly with path distance and vanishes at a range
proportional to the task's priority; idle vehicles ascend the gradient of the
combined field. Fields spread between nodes through the synchronization layer
and age (priority climbs) while the task stays unassigned.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

from .environment import SyncUpdate, VirtualEnvironment
from .worldgraph import SegmentGraph, distance_meters

MAX_PRIORITY = 5


@dataclass(frozen=True)
class FieldData:
    id: int
    priority: int
    source: str

    def __post_init__(self):
        if not 1 <= self.priority <= MAX_PRIORITY:
            raise ValueError(f"priority {self.priority} outside 1..{MAX_PRIORITY}")


@dataclass(frozen=True)
class TaskField:
    task_id: str
    data: FieldData


def field_range(priority: int, range_unit: float) -> float:
    return priority * range_unit


def field_value(field: TaskField, at: str, graph: SegmentGraph,
                range_unit: float) -> float:
    d = distance_meters(graph, field.data.source, at)
    return max(0.0, field_range(field.data.priority, range_unit) - d)


def combine(fields: Iterable[TaskField], at: str, graph: SegmentGraph,
            range_unit: float) -> float:
    return sum(field_value(f, at, graph, range_unit) for f in fields)


def gradient_step(position: str, fields: Iterable[TaskField],
                  graph: SegmentGraph, range_unit: float) -> str:
    """Neighbor with the highest combined value, if it strictly improves.

    Ties break to the smallest node id; with no improving neighbor the agent
    stays put.
    """
    fields = list(fields)
    here = combine(fields, position, graph, range_unit)
    best_node, best_value = position, here
    for neighbor, _ in graph.neighbors(position):
        value = combine(fields, neighbor, graph, range_unit)
        if value > best_value or (value == best_value and value > here
                                  and neighbor < best_node):
            best_node, best_value = neighbor, value
    return best_node


def aged_priority(base: int, unassigned_ticks: int, age_window: int) -> int:
    """Priority climbs one level per full age window, capped at the maximum."""
    if age_window <= 0:
        raise ValueError("age_window must be positive")
    return min(MAX_PRIORITY, base + max(0, unassigned_ticks) // age_window)


def age_priority(field: TaskField, unassigned_ticks: int,
                 age_window: int) -> TaskField:
    new_priority = aged_priority(field.data.priority, unassigned_ticks, age_window)
    if new_priority == field.data.priority:
        return field
    return replace(field, data=replace(field.data, priority=new_priority))


def field_state_key(task_id: str) -> str:
    return f"field:{task_id}"


class FieldCoordinator:
    """Per-node field bookkeeping riding on the synchronization component.

    The emitting node owns a field: it ages the priority and re-spreads on
    change. Every node mirrors spread fields, but only keeps those whose
    range covers the node's own position.
    """

    def __init__(self, ve: VirtualEnvironment, range_unit: float, age_window: int):
        self.ve = ve
        self.range_unit = range_unit
        self.age_window = age_window
        self.owned: dict[str, tuple[TaskField, int]] = {}  # base field, emit tick
        ve.register_sync_handler("fieldSpread", self._on_spread)
        ve.register_sync_handler("fieldRemove", self._on_remove)
        ve.register_sync_routine(self.age_owned_fields)

    # -- local API -----------------------------------------------------------

    def emit_field(self, field: TaskField) -> None:
        self.owned[field.task_id] = (field, self.ve.kernel.now)
        self.ve.state_write({field_state_key(field.task_id): field})
        self._spread(field)

    def remove_field(self, task_id: str) -> None:
        if task_id not in self.owned and \
                self.ve.state.get(field_state_key(task_id)) is None:
            return  # unknown task id: no-op
        self.owned.pop(task_id, None)
        self.ve.state.remove([field_state_key(task_id)])
        self.ve.emit_sync(SyncUpdate("fieldRemove", self.ve.node_id,
                                     {"taskId": task_id}))

    def local_fields(self) -> list[TaskField]:
        snapshot = self.ve.state.snapshot()
        return sorted((v for k, v in snapshot.items() if k.startswith("field:")),
                      key=lambda f: f.task_id)

    def respread_owned(self) -> None:
        for field, emit_tick in self.owned.values():
            aged = age_priority(field, self.ve.kernel.now - emit_tick,
                                self.age_window)
            self._spread(aged)

    # -- synchronization ----------------------------------------------------

    def age_owned_fields(self, ve: VirtualEnvironment) -> None:
        """Locally initiated sync: age unassigned fields, spread on change."""
        for task_id, (field, emit_tick) in self.owned.items():
            aged = age_priority(field, ve.kernel.now - emit_tick, self.age_window)
            current = ve.state.get(field_state_key(task_id))
            if current != aged:
                ve.state_write({field_state_key(task_id): aged})
                self._spread(aged)

    def _spread(self, field: TaskField) -> None:
        self.ve.emit_sync(SyncUpdate("fieldSpread", self.ve.node_id, {
            "taskId": field.task_id,
            "fieldId": field.data.id,
            "priority": field.data.priority,
            "source": field.data.source,
        }))

    def _on_spread(self, ve: VirtualEnvironment, update: SyncUpdate) -> None:
        payload = update.payload
        field = TaskField(payload["taskId"],
                          FieldData(payload["fieldId"], payload["priority"],
                                    payload["source"]))
        key = field_state_key(field.task_id)
        position = ve.state.get("node-position")
        in_range = True
        if position is not None and ve.graph is not None:
            d = distance_meters(ve.graph, field.data.source, position)
            in_range = d < field_range(field.data.priority, self.range_unit)
        if in_range:
            ve.state_write({key: field})
        else:
            ve.state.remove([key])

    def _on_remove(self, ve: VirtualEnvironment, update: SyncUpdate) -> None:
        ve.state.remove([field_state_key(update.payload["taskId"])])

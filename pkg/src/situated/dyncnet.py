"""DynCNET: contract net with provisional, switchable task assignment.

Transport agents (initiators) periodically call for proposals within a
priority-scaled scope; AGV agents (participants) answer with their path
distance to the pickup as cost. Assignment stays provisional: an initiator
aborts and re-accepts when a clearly better proposal arrives, a participant
retracts and switches when a clearly better offer arrives, until the bound
message commits the pair. After bound, the task is executing and no further
switching happens.

The transition functions are pure: all interleaving comes from the caller.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any

from .agent import Conversation, ProtocolHandler, SituatedAgent
from .codec import (Identifier, IntRange, Item, Keyword, MessageData,
                    NonNegNumber, PerformativeSpec, ProtocolSchema)
from .fields import aged_priority  # aging widens scope the same way it widens fields
from .worldgraph import SegmentGraph, distance_meters

ACTIVE = "Active"
ASSIGNED = "Assigned"
EXECUTING = "Executing"
COMPLETED = "Completed"

IDLE = "Idle"
VOTING = "Voting"
INTENTIONAL = "Intentional"
BOUND = "Bound"

PROTOCOL = "DynCNET"
TASK_TYPES = ("regular", "urgent")


def dyncnet_schema() -> ProtocolSchema:
    task_id = ("taskId", Identifier())
    performatives = {
        "cfp": PerformativeSpec("cfp", (
            ("type", Keyword(*TASK_TYPES)),
            ("priority", IntRange(1, 5)),
            ("location", Identifier()),
        ), initial=True),
        "proposal": PerformativeSpec("proposal", (("cost", NonNegNumber()),)),
        "provisional-accept": PerformativeSpec("provisional-accept", (task_id,)),
        "bound": PerformativeSpec("bound", (task_id,), final=True),
        "retract": PerformativeSpec("retract", (task_id,), final=True),
        "abort": PerformativeSpec("abort", (task_id,), final=True),
    }
    transitions = {
        "cfp": frozenset({"cfp", "proposal"}),
        "proposal": frozenset({"proposal", "cfp", "provisional-accept", "abort"}),
        "provisional-accept": frozenset({"proposal", "provisional-accept", "cfp",
                                         "bound", "retract", "abort"}),
        "abort": frozenset({"proposal", "provisional-accept", "cfp", "abort",
                            "bound"}),
        "retract": frozenset({"proposal", "cfp", "provisional-accept"}),
        "bound": frozenset({"abort", "proposal"}),
    }
    return ProtocolSchema(PROTOCOL, performatives, scope_type="agv",
                          transitions=transitions)


# -- events -----------------------------------------------------------------

@dataclass(frozen=True)
class TaskReady:
    pass


@dataclass(frozen=True)
class TimerFired:
    pass


@dataclass(frozen=True)
class ProposalReceived:
    agv_id: str
    cost: float


@dataclass(frozen=True)
class BoundReceived:
    agv_id: str


@dataclass(frozen=True)
class TaskCompleted:
    pass


@dataclass(frozen=True)
class AgvInOutScope:
    agv_id: str
    in_scope: bool


@dataclass(frozen=True)
class ReadyToWork:
    pass


@dataclass(frozen=True)
class CfpReceived:
    conversation_id: int
    initiator: str
    cost: float


@dataclass(frozen=True)
class ProvisionalAcceptReceived:
    conversation_id: int
    initiator: str
    task_id: str
    cost: float


@dataclass(frozen=True)
class AbortReceived:
    conversation_id: int
    initiator: str
    task_id: str


@dataclass(frozen=True)
class TaskStarted:
    pass


@dataclass(frozen=True)
class TaskInOutScope:
    task_id: str
    in_scope: bool


@dataclass(frozen=True)
class Send:
    """Outgoing message intent; the handler encodes and addresses it."""

    performative: str
    receiver: str | None  # None: protocol scope expression (cfp only)
    fields: tuple[tuple[str, Any], ...]
    conversation_id: int


ASSIGNED_TIMEOUT_PERIODS = 3  # Assigned periods without a bound before re-auction


@dataclass(frozen=True)
class InitiatorState:
    task_id: str
    location: str
    task_type: str
    priority: int
    conversation_id: int
    state: str = ACTIVE
    provisional_winner: str | None = None
    best_proposal: float | None = None
    cfp_timer_ticks: int = 10
    assigned_periods: int = 0


@dataclass(frozen=True)
class ParticipantState:
    agv_id: str
    state: str = IDLE
    provisional_task: str | None = None
    provisional_initiator: str | None = None
    provisional_conversation: int | None = None
    provisional_cost: float | None = None


def _cfp(state: InitiatorState) -> Send:
    return Send("cfp", None, (
        ("type", state.task_type),
        ("priority", state.priority),
        ("location", state.location),
    ), state.conversation_id)


def _task_send(state: InitiatorState, performative: str, receiver: str) -> Send:
    return Send(performative, receiver, (("taskId", state.task_id),),
                state.conversation_id)


def initiator_step(state: InitiatorState, event: Any,
                   delta: float) -> tuple[InitiatorState, list[Send], list[str]]:
    sends: list[Send] = []
    notes: list[str] = []
    if isinstance(event, TaskReady):
        sends.append(_cfp(state))
    elif isinstance(event, TimerFired):
        if state.state == ACTIVE and state.provisional_winner is None:
            sends.append(_cfp(state))
        elif state.state == ASSIGNED:
            # a lost bound would wedge the task; after enough silence,
            # abort the provisional winner and restart the auction
            state = replace(state, assigned_periods=state.assigned_periods + 1)
            if state.assigned_periods >= ASSIGNED_TIMEOUT_PERIODS:
                sends.append(_task_send(state, "abort", state.provisional_winner))
                state = replace(state, state=ACTIVE, provisional_winner=None,
                                best_proposal=None, assigned_periods=0)
                sends.append(_cfp(state))
    elif isinstance(event, ProposalReceived):
        if state.state == ACTIVE:
            state = replace(state, state=ASSIGNED,
                            provisional_winner=event.agv_id,
                            best_proposal=event.cost, assigned_periods=0)
            sends.append(_task_send(state, "provisional-accept", event.agv_id))
        elif state.state == ASSIGNED:
            if event.agv_id == state.provisional_winner:
                state = replace(state, best_proposal=min(state.best_proposal,
                                                         event.cost))
            elif event.cost <= state.best_proposal - delta:
                sends.append(_task_send(state, "abort", state.provisional_winner))
                state = replace(state, provisional_winner=event.agv_id,
                                best_proposal=event.cost)
                sends.append(_task_send(state, "provisional-accept", event.agv_id))
        # Executing/Completed: proposals are ignored
    elif isinstance(event, BoundReceived):
        if state.state == ASSIGNED and event.agv_id == state.provisional_winner:
            state = replace(state, state=EXECUTING)
        elif state.state == EXECUTING and event.agv_id == state.provisional_winner:
            pass  # duplicate bound
        else:
            # bound crossing an abort on the wire: answer with a fresh abort
            notes.append(f"bound-from-non-winner:{event.agv_id}")
            sends.append(_task_send(state, "abort", event.agv_id))
    elif isinstance(event, TaskCompleted):
        if state.state == EXECUTING:
            state = replace(state, state=COMPLETED)
    elif isinstance(event, AgvInOutScope):
        if not event.in_scope and state.state == ASSIGNED and \
                event.agv_id == state.provisional_winner:
            state = replace(state, state=ACTIVE, provisional_winner=None,
                            best_proposal=None)
    else:
        raise TypeError(f"not an initiator event: {event!r}")
    return state, sends, notes


def participant_step(state: ParticipantState, event: Any,
                     delta: float) -> tuple[ParticipantState, list[Send], list[str]]:
    sends: list[Send] = []
    notes: list[str] = []
    if isinstance(event, ReadyToWork):
        if state.state in (IDLE, BOUND):
            state = replace(state, state=VOTING, provisional_task=None,
                            provisional_initiator=None,
                            provisional_conversation=None, provisional_cost=None)
    elif isinstance(event, CfpReceived):
        if state.state == VOTING:
            sends.append(Send("proposal", event.initiator,
                              (("cost", event.cost),), event.conversation_id))
    elif isinstance(event, ProvisionalAcceptReceived):
        if state.state == VOTING:
            state = replace(state, state=INTENTIONAL,
                            provisional_task=event.task_id,
                            provisional_initiator=event.initiator,
                            provisional_conversation=event.conversation_id,
                            provisional_cost=event.cost)
        elif state.state == INTENTIONAL:
            if event.task_id != state.provisional_task and \
                    event.cost <= state.provisional_cost - delta:
                sends.append(Send("retract", state.provisional_initiator,
                                  (("taskId", state.provisional_task),),
                                  state.provisional_conversation))
                state = replace(state, provisional_task=event.task_id,
                                provisional_initiator=event.initiator,
                                provisional_conversation=event.conversation_id,
                                provisional_cost=event.cost)
        elif state.state == BOUND:
            notes.append(f"accept-while-bound:{event.initiator}")
    elif isinstance(event, AbortReceived):
        if state.state in (INTENTIONAL, BOUND) and \
                event.task_id == state.provisional_task:
            state = replace(state, state=VOTING, provisional_task=None,
                            provisional_initiator=None,
                            provisional_conversation=None, provisional_cost=None)
    elif isinstance(event, TaskStarted):
        if state.state == INTENTIONAL:
            sends.append(Send("bound", state.provisional_initiator,
                              (("taskId", state.provisional_task),),
                              state.provisional_conversation))
            state = replace(state, state=BOUND)
    elif isinstance(event, TaskInOutScope):
        if not event.in_scope and state.state == INTENTIONAL and \
                event.task_id == state.provisional_task:
            sends.append(Send("retract", state.provisional_initiator,
                              (("taskId", state.provisional_task),),
                              state.provisional_conversation))
            state = replace(state, state=VOTING, provisional_task=None,
                            provisional_initiator=None,
                            provisional_conversation=None, provisional_cost=None)
    else:
        raise TypeError(f"not a participant event: {event!r}")
    return state, sends, notes


def scope_members(center: str, scope_meters: float, positions: dict[str, str],
                  graph: SegmentGraph) -> list[str]:
    """Agents whose position lies within path distance of the center node."""
    out = [agent for agent, pos in positions.items()
           if distance_meters(graph, center, pos) <= scope_meters]
    return sorted(out)


def scope_radius(priority: int, scope_unit: float) -> float:
    return priority * scope_unit


# -- integration with the agent shell ----------------------------------------

class InitiatorHandler(ProtocolHandler):
    """Transport-agent side of DynCNET, driven by timer events and messages."""

    def __init__(self, agent: SituatedAgent, task_id: str, location: str,
                 task_type: str, priority: int, delta: float,
                 scope_unit: float, age_window: int, timer_period: int):
        self.agent = agent
        self.delta = delta
        self.scope_unit = scope_unit
        self.age_window = age_window
        self.base_priority = priority
        self.ready_tick = agent.ve.kernel.now
        conversation_id = agent.ve.directory.next_message_id(agent.agent_id)
        self.state = InitiatorState(task_id, location, task_type, priority,
                                    conversation_id,
                                    cfp_timer_ticks=timer_period)
        self._pending: list[Send] = []
        self.assignment_tick: int | None = None
        self.switch_count = 0
        self._apply(TaskReady())

    # effective priority climbs while the task stays unassigned
    def _aged_priority(self) -> int:
        return aged_priority(self.base_priority,
                             self.agent.ve.kernel.now - self.ready_tick,
                             self.age_window)

    def _apply(self, event: Any) -> None:
        before_winner = self.state.provisional_winner
        self.state, sends, notes = initiator_step(self.state, event, self.delta)
        if isinstance(event, ProposalReceived) and before_winner is not None \
                and self.state.provisional_winner != before_winner:
            self.switch_count += 1
        if self.state.state == EXECUTING and self.assignment_tick is None:
            self.assignment_tick = self.agent.ve.kernel.now
        for note in notes:
            self.agent.ve.kernel.emit(self.agent.ve.node_id, "protocol-violation",
                                      {"agent": self.agent.agent_id,
                                       "reason": note})
        self._pending.extend(sends)

    def on_timer(self) -> None:
        self.state = replace(self.state, priority=self._aged_priority())
        self._apply(TimerFired())

    def on_agv_lost(self, agv_id: str) -> None:
        self._apply(AgvInOutScope(agv_id, False))

    def task_completed(self) -> None:
        self._apply(TaskCompleted())

    def on_message(self, agent: SituatedAgent, data: MessageData) -> None:
        if data.performative == "proposal":
            self._apply(ProposalReceived(data.sender, data.value("cost")))
        elif data.performative == "bound":
            self._apply(BoundReceived(data.sender))
        elif data.performative == "retract":
            # a retracting winner is gone for this task's purposes
            self._apply(AgvInOutScope(data.sender, False))

    def next_step(self, agent: SituatedAgent) -> MessageData | None:
        if not self._pending:
            return None
        send = self._pending.pop(0)
        if send.receiver is None:
            scope = scope_radius(self.state.priority, self.scope_unit)
            receiver = f"{int(scope)}m"
        else:
            receiver = send.receiver
        content = tuple(Item(name, value) for name, value in send.fields)
        return MessageData(send.conversation_id, agent.agent_id, receiver,
                           PROTOCOL, send.performative, content)

    def conversation_finished(self, agent: SituatedAgent,
                              conversation: Conversation) -> bool:
        return (conversation.conversation_id == self.state.conversation_id
                and self.state.state in (EXECUTING, COMPLETED)
                and not self._pending)


class ParticipantHandler(ProtocolHandler):
    """AGV-agent side of DynCNET: proposes, switches, binds."""

    def __init__(self, agent: SituatedAgent, graph: SegmentGraph, delta: float):
        self.agent = agent
        self.graph = graph
        self.delta = delta
        self.state = ParticipantState(agent.agent_id)
        self._pending: list[Send] = []
        self._offers: dict[int, tuple[str, str]] = {}  # conv -> initiator, location

    def _position(self) -> str | None:
        return self.agent.knowledge.get("position")

    def _apply(self, event: Any) -> None:
        self.state, sends, notes = participant_step(self.state, event, self.delta)
        for note in notes:
            self.agent.ve.kernel.emit(self.agent.ve.node_id, "protocol-violation",
                                      {"agent": self.agent.agent_id,
                                       "reason": note})
        self._pending.extend(sends)

    def ready_to_work(self) -> None:
        self._apply(ReadyToWork())

    def task_started(self) -> None:
        self._apply(TaskStarted())

    def on_message(self, agent: SituatedAgent, data: MessageData) -> None:
        position = self._position()
        if data.performative == "cfp":
            location = data.value("location")
            self._offers[data.id] = (data.sender, location)
            if position is None:
                return
            cost = distance_meters(self.graph, position, location)
            self._apply(CfpReceived(data.id, data.sender, cost))
        elif data.performative == "provisional-accept":
            offer = self._offers.get(data.id)
            if offer is None or position is None:
                return
            cost = distance_meters(self.graph, position, offer[1])
            self._apply(ProvisionalAcceptReceived(data.id, data.sender,
                                                  data.value("taskId"), cost))
        elif data.performative == "abort":
            self._apply(AbortReceived(data.id, data.sender, data.value("taskId")))

    def task_location(self) -> str | None:
        if self.state.provisional_conversation is None:
            return None
        offer = self._offers.get(self.state.provisional_conversation)
        return offer[1] if offer else None

    def next_step(self, agent: SituatedAgent) -> MessageData | None:
        if not self._pending:
            return None
        send = self._pending.pop(0)
        content = tuple(Item(name, value) for name, value in send.fields)
        return MessageData(send.conversation_id, agent.agent_id, send.receiver,
                           PROTOCOL, send.performative, content)

    def conversation_finished(self, agent: SituatedAgent,
                              conversation: Conversation) -> bool:
        if conversation.conversation_id == self.state.provisional_conversation:
            return False
        last = conversation.history[-1].performative
        return last in ("retract", "abort", "bound") and not self._pending

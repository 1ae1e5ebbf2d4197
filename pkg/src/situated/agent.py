"""Situated agent shell: current knowledge, perception pipeline, communication.

An agent owns a private knowledge repository with the same template-read /
upsert-write contract as the virtual environment's state, a selective
perception pipeline (sense, interpret against descriptions, filter), and a
protocol communication pipeline (inbox, decode, conversations, encode,
outbox). Everything runs synchronously inside the dispatch that invokes it.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable

from .codec import MalformedMessage, MessageData
from .environment import (EnvironmentFault, Focus, ItemStore, Sense,
                          VirtualEnvironment)

Knowledge = dict[str, Any]


class AgentError(Exception):
    pass


@dataclass(frozen=True)
class Filter:
    name: str
    params: dict[str, Any]


IDENTITY_FILTER = Filter("identity", {})


@dataclass(frozen=True)
class PerceptionRequest:
    id: str
    focus: Focus
    filter: Filter


@dataclass(frozen=True)
class PerceptionNotification:
    request_id: str
    ok: bool
    reason: str | None = None


@dataclass(frozen=True)
class Description:
    """Pattern over representations: matcher plus knowledge extraction."""

    name: str
    matches: Callable[[Any], bool]
    extract: Callable[[Any], Knowledge]


@dataclass
class Conversation:
    conversation_id: int
    protocol: str
    history: list[MessageData] = field(default_factory=list)


class ConversationStore:
    """Keyed store of ongoing conversations."""

    def __init__(self):
        self._conversations: dict[int, Conversation] = {}

    def has(self, conversation_id: int) -> bool:
        return conversation_id in self._conversations

    def ids(self) -> list[int]:
        return sorted(self._conversations)

    def add(self, data: MessageData) -> Conversation:
        if data.id in self._conversations:
            raise AgentError(f"conversation {data.id} already exists")
        conversation = Conversation(data.id, data.protocol, [data])
        self._conversations[data.id] = conversation
        return conversation

    def read(self, conversation_id: int) -> Conversation:
        conversation = self._conversations.get(conversation_id)
        if conversation is None:
            raise AgentError(f"unknown conversation {conversation_id}")
        return conversation

    def update(self, conversation_id: int, data: MessageData) -> None:
        self.read(conversation_id).history.append(data)

    def terminate(self, conversation_id: int) -> None:
        if conversation_id not in self._conversations:
            raise AgentError(f"unknown conversation {conversation_id}")
        del self._conversations[conversation_id]


class ProtocolHandler:
    """Scenario-side protocol logic plugged into the communication pipeline."""

    def on_message(self, agent: "SituatedAgent", data: MessageData) -> None:
        """Interpret an incoming decoded message; update knowledge/state."""

    def next_step(self, agent: "SituatedAgent") -> MessageData | None:
        """Produce the next outgoing message, if the protocol calls for one."""
        return None

    def conversation_finished(self, agent: "SituatedAgent",
                              conversation: Conversation) -> bool:
        return False


class SituatedAgent:
    def __init__(self, agent_id: str, ve: VirtualEnvironment):
        self.agent_id = agent_id
        self.ve = ve
        self.knowledge = ItemStore()
        self.inbox: deque = deque()
        self.outbox: deque = deque()
        self.conversations = ConversationStore()
        self.descriptions: list[Description] = []
        self.filters: dict[str, Callable[[Knowledge, Filter, SituatedAgent], Knowledge]] = {
            "identity": lambda percept, _filter, _agent: percept,
        }
        self.protocol_handlers: dict[str, ProtocolHandler] = {}
        self.notifications: list[PerceptionNotification] = []

    # -- current knowledge -----------------------------------------------------

    def knowledge_read(self, template: Knowledge) -> Knowledge:
        return self.knowledge.read(template)

    def knowledge_write(self, items: Knowledge) -> None:
        self.knowledge.write(items)

    # -- registration -----------------------------------------------------------

    def register_description(self, description: Description) -> None:
        self.descriptions.append(description)

    def register_filter(self, name: str,
                        fn: Callable[[Knowledge, Filter, SituatedAgent], Knowledge]) -> None:
        self.filters[name] = fn

    def register_protocol(self, name: str, handler: ProtocolHandler) -> None:
        self.protocol_handlers[name] = handler

    # -- selective perception -----------------------------------------------------

    def perceive(self, request: PerceptionRequest) -> PerceptionNotification:
        """Run sensing, interpreting, and filtering; update knowledge; notify."""
        try:
            representation = self.ve.sense(Sense(self.agent_id, request.focus))
        except EnvironmentFault as exc:
            note = PerceptionNotification(request.id, False, str(exc))
            self.notifications.append(note)
            return note
        percept = self.interpret(representation, self.descriptions)
        filtered = self.filter_percept(percept, request.filter)
        if filtered:
            self.knowledge_write(filtered)
        note = PerceptionNotification(request.id, True)
        self.notifications.append(note)
        return note

    def interpret(self, representation: Any,
                  descriptions: list[Description]) -> Knowledge:
        percept: Knowledge = {}
        for description in descriptions:
            if description.matches(representation):
                percept.update(description.extract(representation))
        return percept

    def filter_percept(self, percept: Knowledge, filter: Filter) -> Knowledge:
        fn = self.filters.get(filter.name)
        if fn is None:
            raise AgentError(f"unknown filter {filter.name!r}")
        return fn(percept, filter, self)

    # -- protocol communication -----------------------------------------------------

    def communicate_step(self) -> None:
        """One pipeline branch per dispatch: incoming, outgoing, or silence."""
        if self.inbox:
            self._handle_incoming()
            return
        for protocol in sorted(self.protocol_handlers):
            handler = self.protocol_handlers[protocol]
            data = handler.next_step(self)
            if data is None:
                continue
            message = self.ve.language.encode(data)
            if self.conversations.has(data.id):
                self.conversations.update(data.id, data)
            else:
                self.conversations.add(data)
            self.outbox.append(message)
            self._flush_outbox()
            return
        self._terminate_finished()

    def _handle_incoming(self) -> None:
        message = self.inbox.popleft()
        kernel, node = self.ve.kernel, self.ve.node_id
        try:
            data = self.ve.language.decode(message)
        except MalformedMessage as exc:
            kernel.emit(node, "malformed-message",
                        {"agent": self.agent_id, "id": message.id,
                         "reason": str(exc)})
            return
        schema = self.ve.language.protocols[data.protocol]
        if self.conversations.has(data.id):
            self.conversations.update(data.id, data)
        elif data.performative in schema.initial_performatives():
            self.conversations.add(data)
        else:
            kernel.emit(node, "protocol-violation",
                        {"agent": self.agent_id, "id": data.id,
                         "performative": data.performative,
                         "reason": "unknown-conversation"})
            return
        handler = self.protocol_handlers.get(data.protocol)
        if handler is not None:
            handler.on_message(self, data)

    def _terminate_finished(self) -> None:
        for conversation_id in self.conversations.ids():
            conversation = self.conversations.read(conversation_id)
            handler = self.protocol_handlers.get(conversation.protocol)
            if handler is not None and \
                    handler.conversation_finished(self, conversation):
                self.conversations.terminate(conversation_id)
                return

    def _flush_outbox(self) -> None:
        while self.outbox:
            self.ve.send_message(self.outbox.popleft())

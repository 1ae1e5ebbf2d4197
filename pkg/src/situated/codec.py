"""Content languages and ontologies for protocol messages.

A protocol schema lists, per performative, the ordered fields a message
carries; the ontology assigns each field a value domain. Decoding parses a
wire message's positional content into named, validated knowledge items;
encoding is its exact inverse. Schemas are registered per scenario, never
hardcoded into the transport.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any, Callable

IDENTIFIER_RE = re.compile(r"^[A-Za-z0-9_.:-]+$")


class MalformedMessage(Exception):
    pass


@dataclass(frozen=True)
class Item:
    """One named, typed value; the unit of both state and knowledge."""

    name: str
    value: Any


class Domain:
    """Value domain of one ontology field; parse rejects out-of-domain raws."""

    def parse(self, raw: str) -> Any:
        raise NotImplementedError

    def render(self, value: Any) -> str:
        raise NotImplementedError


class IntRange(Domain):
    def __init__(self, lo: int, hi: int):
        self.lo, self.hi = lo, hi

    def parse(self, raw: str) -> int:
        try:
            value = int(raw)
        except ValueError:
            raise MalformedMessage(f"not an integer: {raw!r}") from None
        if not self.lo <= value <= self.hi:
            raise MalformedMessage(
                f"value {value} outside domain [{self.lo}, {self.hi}]")
        return value

    def render(self, value: Any) -> str:
        if not isinstance(value, int) or not self.lo <= value <= self.hi:
            raise MalformedMessage(f"value {value!r} outside domain")
        return str(value)


class NonNegNumber(Domain):
    def parse(self, raw: str) -> float:
        try:
            value = float(raw)
        except ValueError:
            raise MalformedMessage(f"not a number: {raw!r}") from None
        if value < 0:
            raise MalformedMessage(f"negative value {value}")
        return value

    def render(self, value: Any) -> str:
        value = float(value)
        if value < 0:
            raise MalformedMessage(f"negative value {value}")
        return str(int(value)) if value.is_integer() else repr(value)


class Identifier(Domain):
    """Agent, node, and task names: non-empty, no whitespace."""

    def parse(self, raw: str) -> str:
        if not IDENTIFIER_RE.match(raw):
            raise MalformedMessage(f"not an identifier: {raw!r}")
        return raw

    def render(self, value: Any) -> str:
        return self.parse(str(value))


class Keyword(Domain):
    def __init__(self, *choices: str):
        self.choices = frozenset(choices)

    def parse(self, raw: str) -> str:
        if raw not in self.choices:
            raise MalformedMessage(
                f"{raw!r} not in {sorted(self.choices)}")
        return raw

    def render(self, value: Any) -> str:
        return self.parse(str(value))


class Struct(Domain):
    """Structured value carried as canonical JSON text."""

    def __init__(self, from_json: Callable[[Any], Any], to_json: Callable[[Any], Any]):
        self.from_json = from_json
        self.to_json = to_json

    def parse(self, raw: str) -> Any:
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise MalformedMessage(f"bad struct: {exc}") from None
        try:
            return self.from_json(data)
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedMessage(f"bad struct: {exc}") from None

    def render(self, value: Any) -> str:
        return json.dumps(self.to_json(value), sort_keys=True,
                          separators=(",", ":"))


@dataclass(frozen=True)
class Message:
    """Wire form: positional raw content, interpreted via the protocol schema."""

    id: int
    sender: str
    receiver: str
    protocol: str
    performative: str
    content: tuple[str, ...]


@dataclass(frozen=True)
class MessageData:
    """Decoded form: content as named, domain-checked knowledge items."""

    id: int
    sender: str
    receiver: str
    protocol: str
    performative: str
    content: tuple[Item, ...]

    def value(self, name: str) -> Any:
        for item in self.content:
            if item.name == name:
                return item.value
        raise KeyError(name)


@dataclass(frozen=True)
class PerformativeSpec:
    name: str
    fields: tuple[tuple[str, Domain], ...]
    initial: bool = False
    final: bool = False


@dataclass(frozen=True)
class ProtocolSchema:
    name: str
    performatives: dict[str, PerformativeSpec]
    scope_type: str | None = None  # agent type addressed by scope expressions
    transitions: dict[str, frozenset[str]] | None = None

    def initial_performatives(self) -> frozenset[str]:
        return frozenset(p.name for p in self.performatives.values() if p.initial)

    def final_performatives(self) -> frozenset[str]:
        return frozenset(p.name for p in self.performatives.values() if p.final)


class ContentLanguage:
    """Registry of protocol schemas plus the decode/encode pair."""

    def __init__(self):
        self.protocols: dict[str, ProtocolSchema] = {}

    def register(self, schema: ProtocolSchema) -> None:
        if schema.name in self.protocols:
            raise ValueError(f"protocol {schema.name!r} already registered")
        self.protocols[schema.name] = schema

    def spec_for(self, protocol: str, performative: str) -> PerformativeSpec:
        schema = self.protocols.get(protocol)
        if schema is None:
            raise MalformedMessage(f"unknown protocol {protocol!r}")
        spec = schema.performatives.get(performative)
        if spec is None:
            raise MalformedMessage(
                f"unknown performative {performative!r} for {protocol!r}")
        return spec

    def decode(self, msg: Message) -> MessageData:
        spec = self.spec_for(msg.protocol, msg.performative)
        if len(msg.content) != len(spec.fields):
            raise MalformedMessage(
                f"{msg.performative} expects {len(spec.fields)} fields, "
                f"got {len(msg.content)}")
        items = tuple(Item(name, domain.parse(raw))
                      for (name, domain), raw in zip(spec.fields, msg.content))
        return MessageData(msg.id, msg.sender, msg.receiver, msg.protocol,
                           msg.performative, items)

    def encode(self, data: MessageData) -> Message:
        spec = self.spec_for(data.protocol, data.performative)
        if len(data.content) != len(spec.fields):
            raise MalformedMessage(
                f"{data.performative} expects {len(spec.fields)} fields, "
                f"got {len(data.content)}")
        raws = []
        for (name, domain), item in zip(spec.fields, data.content):
            if item.name != name:
                raise MalformedMessage(
                    f"field {item.name!r} where {name!r} expected")
            raws.append(domain.render(item.value))
        return Message(data.id, data.sender, data.receiver, data.protocol,
                       data.performative, tuple(raws))

    def validate(self, msg: Message) -> MessageData:
        return self.decode(msg)


def replay_conformant(schema: ProtocolSchema,
                      performatives: list[str]) -> bool:
    """Check a conversation history against the protocol's transition table."""
    if not performatives:
        return False
    if performatives[0] not in schema.initial_performatives():
        return False
    if schema.transitions is None:
        return all(p in schema.performatives for p in performatives)
    for prev, nxt in zip(performatives, performatives[1:]):
        if nxt not in schema.transitions.get(prev, frozenset()):
            return False
    return True

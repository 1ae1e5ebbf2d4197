"""Codec laws: decode/encode inverses and ontology domain checks."""
import random

import pytest

from situated.ants import explore_schema, intention_schema
from situated.codec import (ContentLanguage, Item, MalformedMessage, Message,
                            MessageData)
from situated.dyncnet import dyncnet_schema


def language():
    lang = ContentLanguage()
    lang.register(dyncnet_schema())
    lang.register(explore_schema())
    lang.register(intention_schema())
    return lang


def test_decode_cfp_excerpt():
    # cfp 77 from ta14 to everything within 20 m: (regular, 5, n60)
    lang = language()
    msg = Message(77, "ta14", "20m", "DynCNET", "cfp", ("regular", "5", "n60"))
    data = lang.decode(msg)
    assert [(i.name, i.value) for i in data.content] == [
        ("type", "regular"), ("priority", 5), ("location", "n60")]


def test_out_of_domain_priority_is_malformed():
    lang = language()
    msg = Message(77, "ta14", "20m", "DynCNET", "cfp", ("regular", "9", "n60"))
    with pytest.raises(MalformedMessage):
        lang.decode(msg)


def test_wrong_arity_and_unknown_performative():
    lang = language()
    with pytest.raises(MalformedMessage):
        lang.decode(Message(1, "a", "b", "DynCNET", "cfp", ("regular", "5")))
    with pytest.raises(MalformedMessage):
        lang.decode(Message(1, "a", "b", "DynCNET", "nonsense", ()))
    with pytest.raises(MalformedMessage):
        lang.decode(Message(1, "a", "b", "NoSuchProtocol", "cfp", ()))


def test_encode_decode_round_trip_example():
    lang = language()
    msg = Message(77, "ta14", "20m", "DynCNET", "cfp", ("regular", "5", "n60"))
    assert lang.encode(lang.decode(msg)) == msg


RAW_GENERATORS = {
    "type": lambda rng: rng.choice(["regular", "urgent"]),
    "priority": lambda rng: str(rng.randint(1, 5)),
    "location": lambda rng: f"n{rng.randint(0, 99)}",
    "taskId": lambda rng: f"t{rng.randint(0, 99)}",
    "cost": lambda rng: str(rng.randint(0, 5000)),
    "origin": lambda rng: f"v{rng.randint(0, 20)}",
    "destination": lambda rng: f"n{rng.randint(0, 99)}",
    "maxDist": lambda rng: str(rng.randint(1, 3000)),
    "budget": lambda rng: str(rng.randint(0, 30)),
    "visited": lambda rng: _path_json(rng),
    "path": lambda rng: _path_json(rng),
    "booking": lambda rng: _booking_json(rng),
    "reason": lambda rng: "window-conflict",
    "prefix": lambda rng: _booking_json(rng),
}


def _path_json(rng):
    import json
    nodes = [f"n{i}" for i in rng.sample(range(40), rng.randint(1, 6))]
    return json.dumps(nodes, sort_keys=True, separators=(",", ":"))


def _booking_json(rng):
    import json
    t = rng.randint(0, 50)
    entries = []
    for i in range(rng.randint(0, 4)):
        entries.append({"acked": rng.random() < 0.5, "agent": f"ia-n{i}",
                        "edgeId": i, "window": [t, t + 5]})
        t += 5 + rng.randint(0, 3)
    payload = {"bookingId": rng.randint(1, 10**6), "vehicleId": "v1",
               "lastRefreshTick": rng.randint(0, 100), "entries": entries}
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def generate_message(lang, rng):
    protocol = rng.choice(sorted(lang.protocols))
    schema = lang.protocols[protocol]
    performative = rng.choice(sorted(schema.performatives))
    spec = schema.performatives[performative]
    content = tuple(RAW_GENERATORS[name](rng) for name, _ in spec.fields)
    return Message(rng.randint(1, 10**9), f"a{rng.randint(0, 9)}",
                   f"b{rng.randint(0, 9)}", protocol, performative, content)


def test_codec_laws_over_generated_messages():
    lang = language()
    rng = random.Random(2024)
    for _ in range(1000):
        msg = generate_message(lang, rng)
        data = lang.decode(msg)
        again = lang.encode(data)
        assert again == msg                      # encode . decode = id
        assert lang.decode(again) == data        # decode . encode = id


def test_encode_rejects_wrong_field_names_and_domains():
    lang = language()
    with pytest.raises(MalformedMessage):
        lang.encode(MessageData(5, "a", "b", "DynCNET", "cfp", (
            Item("type", "regular"), Item("priority", 7), Item("location", "n1"))))
    with pytest.raises(MalformedMessage):
        lang.encode(MessageData(5, "a", "b", "DynCNET", "proposal", (
            Item("price", 10.0),)))

"""Canonical trace serialization and hashing.

Every run produces a line-delimited trace: one event per line in the form
``tick seq node kind payload-as-canonical-text``. Canonical text is JSON with
map keys sorted lexicographically and no insignificant whitespace, so that
byte-identical traces are a meaningful determinism check and the trace hash
is stable across runs and platforms.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from typing import Any


def canonicalize(value: Any) -> Any:
    """Reduce a payload to plain JSON-serializable data with stable ordering."""
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {
            f.name: canonicalize(getattr(value, f.name))
            for f in dataclasses.fields(value)
        }
    if isinstance(value, dict):
        return {str(k): canonicalize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [canonicalize(v) for v in value]
    if isinstance(value, (set, frozenset)):
        items = [canonicalize(v) for v in value]
        return sorted(items, key=lambda item: json.dumps(item, sort_keys=True))
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
        return value
    if value is None or isinstance(value, (bool, int, str)):
        return value
    return str(value)


def canonical_text(value: Any) -> str:
    return json.dumps(canonicalize(value), sort_keys=True, separators=(",", ":"))


def format_record(tick: int, seq: int, node: str, kind: str, payload: Any) -> str:
    return f"{tick} {seq} {node} {kind} {canonical_text(payload)}"


def trace_hash(trace_text: str) -> str:
    """64-bit hash of a full trace, as 16 hex digits."""
    digest = hashlib.sha256(trace_text.encode("utf-8")).digest()
    return digest[:8].hex()

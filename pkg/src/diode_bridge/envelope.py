"""Broker message model and the transit wrapper sent across the diode.

Wire layout of a serialized :class:`ExchangeMessage`::

    [flags: 1 byte][JSON document, zlib-deflated when flags & 0x01]

The JSON document has a fixed key order so serialization is deterministic::

    {"exchange": {"kind", "name", "durable", "auto_delete", "arguments"},
     "message": {"body_encoding", "body",
                 "properties": {"routing_key", "headers", "content_type",
                                "received_exchange"}}}

``body_encoding`` is ``"utf8"`` when the body is valid UTF-8 (the body is
then stored as a JSON string) and ``"base64"`` otherwise.
"""

from __future__ import annotations

import base64
import binascii
import enum
import json
import zlib
from dataclasses import dataclass, field

FLAG_COMPRESSED = 0x01


class MalformedEnvelope(ValueError):
    """A serialized ExchangeMessage could not be decoded."""


class ExchangeKind(str, enum.Enum):
    FANOUT = "fanout"
    DIRECT = "direct"
    TOPIC = "topic"
    HEADERS = "headers"


def _check_no_control(name: str, value: str) -> None:
    if any(ord(ch) < 0x20 or ord(ch) == 0x7F for ch in value):
        raise ValueError(f"{name} contains control characters: {value!r}")


@dataclass(frozen=True)
class MessageProperties:
    routing_key: str = ""
    headers: dict[str, str] = field(default_factory=dict)
    content_type: str = ""
    received_exchange: str = ""

    def __post_init__(self):
        _check_no_control("routing_key", self.routing_key)
        _check_no_control("received_exchange", self.received_exchange)


@dataclass(frozen=True)
class Message:
    body: bytes = b""
    properties: MessageProperties = field(default_factory=MessageProperties)

    @property
    def routing_key(self) -> str:
        return self.properties.routing_key

    @property
    def headers(self) -> dict[str, str]:
        return self.properties.headers


@dataclass(frozen=True)
class ExchangeSpec:
    kind: ExchangeKind
    name: str
    durable: bool = True
    auto_delete: bool = False
    arguments: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        # accept plain strings for convenience
        object.__setattr__(self, "kind", ExchangeKind(self.kind))
        if not self.name:
            raise ValueError("exchange name must be non-empty")


@dataclass(frozen=True)
class ExchangeMessage:
    exchange: ExchangeSpec
    message: Message


def _encode_body(body: bytes) -> tuple[str, str]:
    try:
        return "utf8", body.decode("utf-8")
    except UnicodeDecodeError:
        return "base64", base64.b64encode(body).decode("ascii")


def _to_document(em: ExchangeMessage) -> dict:
    ex = em.exchange
    props = em.message.properties
    encoding, body = _encode_body(em.message.body)
    return {
        "exchange": {
            "kind": ex.kind.value,
            "name": ex.name,
            "durable": ex.durable,
            "auto_delete": ex.auto_delete,
            "arguments": dict(sorted(ex.arguments.items())),
        },
        "message": {
            "body_encoding": encoding,
            "body": body,
            "properties": {
                "routing_key": props.routing_key,
                "headers": dict(sorted(props.headers.items())),
                "content_type": props.content_type,
                "received_exchange": props.received_exchange,
            },
        },
    }


def serialize_exchange_message(em: ExchangeMessage, compress: bool = False) -> bytes:
    doc = json.dumps(_to_document(em), separators=(",", ":"), ensure_ascii=False)
    raw = doc.encode("utf-8")
    if compress:
        return bytes([FLAG_COMPRESSED]) + zlib.compress(raw, 9)
    return b"\x00" + raw


def _get(obj: dict, key: str, kind: type):
    if not isinstance(obj, dict) or key not in obj:
        raise MalformedEnvelope(f"missing field {key!r}")
    value = obj[key]
    # bool is a subclass of int; keep the type check exact
    if type(value) is not kind:
        raise MalformedEnvelope(f"field {key!r} has type {type(value).__name__}")
    return value


def _str_map(obj: dict, key: str) -> dict[str, str]:
    mapping = _get(obj, key, dict)
    if not all(isinstance(v, str) for v in mapping.values()):
        raise MalformedEnvelope(f"field {key!r} must map text to text")
    return dict(mapping)


def _inflate(data: bytes) -> bytes:
    d = zlib.decompressobj()
    try:
        out = d.decompress(data) + d.flush()
    except zlib.error as exc:
        raise MalformedEnvelope(f"inflate failed: {exc}") from exc
    if not d.eof or d.unused_data:
        raise MalformedEnvelope("compressed stream truncated or followed by garbage")
    return out


def deserialize_exchange_message(data: bytes) -> ExchangeMessage:
    if not data:
        raise MalformedEnvelope("empty envelope")
    flags, rest = data[0], data[1:]
    if flags & ~FLAG_COMPRESSED:
        raise MalformedEnvelope(f"unknown flag bits 0x{flags:02x}")
    if flags & FLAG_COMPRESSED:
        rest = _inflate(rest)
    try:
        doc = json.loads(rest.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedEnvelope(f"bad JSON: {exc}") from exc

    ex = _get(doc, "exchange", dict)
    msg = _get(doc, "message", dict)
    props = _get(msg, "properties", dict)

    encoding = _get(msg, "body_encoding", str)
    body_text = _get(msg, "body", str)
    if encoding == "utf8":
        body = body_text.encode("utf-8")
    elif encoding == "base64":
        try:
            body = base64.b64decode(body_text, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise MalformedEnvelope(f"bad base64 body: {exc}") from exc
    else:
        raise MalformedEnvelope(f"unknown body encoding {encoding!r}")

    try:
        spec = ExchangeSpec(
            kind=ExchangeKind(_get(ex, "kind", str)),
            name=_get(ex, "name", str),
            durable=_get(ex, "durable", bool),
            auto_delete=_get(ex, "auto_delete", bool),
            arguments=_str_map(ex, "arguments"),
        )
        properties = MessageProperties(
            routing_key=_get(props, "routing_key", str),
            headers=_str_map(props, "headers"),
            content_type=_get(props, "content_type", str),
            received_exchange=_get(props, "received_exchange", str),
        )
    except ValueError as exc:
        if isinstance(exc, MalformedEnvelope):
            raise
        raise MalformedEnvelope(str(exc)) from exc
    return ExchangeMessage(spec, Message(body, properties))

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from diode_bridge.envelope import (ExchangeKind, ExchangeMessage, ExchangeSpec,
                                   MalformedEnvelope, Message, MessageProperties,
                                   deserialize_exchange_message,
                                   serialize_exchange_message)

safe_text = st.text(st.characters(blacklist_categories=("Cc", "Cs")), max_size=20)
names = st.text(st.characters(blacklist_categories=("Cc", "Cs")), min_size=1, max_size=20)
str_maps = st.dictionaries(st.text(max_size=10), st.text(max_size=10), max_size=5)

exchange_specs = st.builds(ExchangeSpec, kind=st.sampled_from(ExchangeKind), name=names,
                           durable=st.booleans(), auto_delete=st.booleans(),
                           arguments=str_maps)
bodies = st.one_of(st.binary(max_size=2048), st.text(max_size=500).map(str.encode))
messages = st.builds(
    Message, body=bodies,
    properties=st.builds(MessageProperties, routing_key=safe_text, headers=str_maps,
                         content_type=st.text(max_size=20), received_exchange=safe_text))
exchange_messages = st.builds(ExchangeMessage, exchange=exchange_specs, message=messages)


def sensor_em(body=b"hello"):
    return ExchangeMessage(
        ExchangeSpec(ExchangeKind.FANOUT, "sensor", durable=True, auto_delete=False),
        Message(body, MessageProperties("temp.room1", {"x-unit": "C"}, "text/plain", "sensor")))


def test_json_carries_exchange_fields():
    out = serialize_exchange_message(sensor_em(), compress=False)
    assert out[0] == 0
    text = out[1:].decode()
    assert '"name":"sensor"' in text
    assert '"durable":true' in text


def test_golden_text_body(golden):
    assert serialize_exchange_message(sensor_em()) == golden("envelope_sensor_text.bin")
    assert deserialize_exchange_message(golden("envelope_sensor_text.bin")) == sensor_em()


def test_golden_binary_body(golden):
    em = ExchangeMessage(
        ExchangeSpec(ExchangeKind.TOPIC, "amq.topic"),
        Message(b"\xff\x00", MessageProperties(
            "timestamp", {"x-mqtt-publish-qos": "0", "x-mqtt-dup": "false"}, "", "amq.topic")))
    assert serialize_exchange_message(em) == golden("envelope_binary.bin")


def test_empty_message_round_trip():
    em = ExchangeMessage(ExchangeSpec(ExchangeKind.DIRECT, "d"), Message())
    assert deserialize_exchange_message(serialize_exchange_message(em)) == em


@given(exchange_messages, st.booleans())
def test_round_trip(em, compress):
    assert deserialize_exchange_message(serialize_exchange_message(em, compress)) == em


@given(exchange_messages)
def test_deterministic(em):
    assert serialize_exchange_message(em, True) == serialize_exchange_message(em, True)


def test_header_order_does_not_change_bytes():
    a = sensor_em()
    b = ExchangeMessage(a.exchange, Message(a.message.body, MessageProperties(
        "temp.room1", {"z": "1", "a": "2"}, "text/plain", "sensor")))
    c = ExchangeMessage(a.exchange, Message(a.message.body, MessageProperties(
        "temp.room1", {"a": "2", "z": "1"}, "text/plain", "sensor")))
    assert serialize_exchange_message(b) == serialize_exchange_message(c)


def test_repetitive_body_compresses():
    em = sensor_em(b"temperature=21.5;" * 100)
    assert len(serialize_exchange_message(em, True)) < len(serialize_exchange_message(em, False))


@pytest.mark.parametrize("compress", [False, True])
def test_truncated_is_malformed(compress):
    data = serialize_exchange_message(sensor_em(), compress)
    with pytest.raises(MalformedEnvelope):
        deserialize_exchange_message(data[:-3])


def test_flag_says_compressed_but_raw_json():
    data = bytearray(serialize_exchange_message(sensor_em(), False))
    data[0] |= 0x01
    with pytest.raises(MalformedEnvelope):
        deserialize_exchange_message(bytes(data))


@pytest.mark.parametrize("bad", [
    b"",
    b"\x80{}",
    b"\x00not json",
    b"\x00{}",
    b"\x00" + json.dumps({"exchange": {}, "message": {}}).encode(),
])
def test_malformed_inputs(bad):
    with pytest.raises(MalformedEnvelope):
        deserialize_exchange_message(bad)


def test_bad_base64_body():
    doc = json.loads(serialize_exchange_message(sensor_em())[1:])
    doc["message"]["body_encoding"] = "base64"
    doc["message"]["body"] = "***"
    with pytest.raises(MalformedEnvelope):
        deserialize_exchange_message(b"\x00" + json.dumps(doc).encode())


def test_wrong_field_type():
    doc = json.loads(serialize_exchange_message(sensor_em())[1:])
    doc["exchange"]["durable"] = "yes"
    with pytest.raises(MalformedEnvelope):
        deserialize_exchange_message(b"\x00" + json.dumps(doc).encode())


def test_unknown_kind():
    doc = json.loads(serialize_exchange_message(sensor_em())[1:])
    doc["exchange"]["kind"] = "x-delayed"
    with pytest.raises(MalformedEnvelope):
        deserialize_exchange_message(b"\x00" + json.dumps(doc).encode())


def test_type_invariants():
    with pytest.raises(ValueError):
        ExchangeSpec(ExchangeKind.FANOUT, "")
    with pytest.raises(ValueError):
        ExchangeSpec("nonsense", "x")
    with pytest.raises(ValueError):
        MessageProperties(routing_key="a\nb")
    with pytest.raises(ValueError):
        MessageProperties(received_exchange="\x00")

#!/usr/bin/env python3
"""Compressed vs uncompressed envelope sizes for a few representative messages."""

from __future__ import annotations

import argparse
from dataclasses import dataclass

from diode_bridge.envelope import (ExchangeKind, ExchangeMessage, ExchangeSpec, Message,
                                   MessageProperties, serialize_exchange_message)
from diode_bridge.sensor import SensorEvent, SensorSource, sensor_message


@dataclass(frozen=True)
class Row:
    name: str
    message: ExchangeMessage

    def sizes(self) -> tuple[int, int, int]:
        body = len(self.message.message.body)
        raw = len(serialize_exchange_message(self.message, compress=False))
        packed = len(serialize_exchange_message(self.message, compress=True))
        return body, raw, packed


def rows(seed: int) -> list[Row]:
    reference = SensorEvent(index=1, date="2015-11-02 14:39:01.74 UTC",
                           uuid="ce6de80b-d895-427e-a640-19a538a526f2",
                           temperature=21.4624679735535)
    sensor = ExchangeSpec(ExchangeKind.FANOUT, "sensor")

    def on_sensor(msg: Message) -> ExchangeMessage:
        props = MessageProperties(content_type="application/json", received_exchange="sensor")
        return ExchangeMessage(sensor, Message(msg.body, props))

    src = SensorSource(seed=seed)
    batch = b"[" + b",".join(src.next_event().to_json() for _ in range(50)) + b"]"
    mqtt = ExchangeMessage(
        ExchangeSpec(ExchangeKind.TOPIC, "amq.topic"),
        Message(b"1447683384612", MessageProperties(
            routing_key="timestamp",
            headers={"x-mqtt-publish-qos": "0", "x-mqtt-dup": "false"},
            received_exchange="amq.topic")))
    return [
        Row("reference sensor event", on_sensor(sensor_message(reference))),
        Row("MQTT-style timestamp", mqtt),
        Row("50 sensor events", on_sensor(Message(batch))),
    ]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print(f"{'message':<24} {'body':>6} {'envelope':>9} {'deflated':>9} {'reduction':>9}")
    for row in rows(args.seed):
        body, raw, packed = row.sizes()
        print(f"{row.name:<24} {body:>6} {raw:>9} {packed:>9} {1 - packed / raw:>9.1%}")


if __name__ == "__main__":
    main()

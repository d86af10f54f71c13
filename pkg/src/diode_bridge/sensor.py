"""Demo temperature sensor, its red-side listener and gap detection."""

from __future__ import annotations

import datetime as dt
import json
import logging
import random
import threading
import time
import uuid as uuidlib
from dataclasses import dataclass
from typing import Callable, Iterable

from .broker import Broker
from .envelope import ExchangeKind, ExchangeSpec, Message, MessageProperties

log = logging.getLogger(__name__)

EVENT_KEY = "org.datadiode.model.event.sensor.temperature.TemperatureSensorEvent"
SENSOR_CLASS = "org.datadiode.model.event.sensor.temperature.TemperatureSensor"
DEFAULT_GEO = (4.899431, 52.379189)


@dataclass(frozen=True)
class SensorEvent:
    index: int
    date: str
    uuid: str
    temperature: float
    sensor_type: str = "temperature"
    sensor_id: int = 1
    longitude: float = DEFAULT_GEO[0]
    latitude: float = DEFAULT_GEO[1]
    targetid: str = "bWFyY2Vs"

    def to_json(self) -> bytes:
        doc = {EVENT_KEY: {
            "index": self.index,
            "date": self.date,
            "uuid": self.uuid,
            "sensor": {
                "@class": SENSOR_CLASS,
                "type": self.sensor_type,
                "id": self.sensor_id,
                "geoLocation": {"longitude": self.longitude, "latitude": self.latitude},
                "targetid": self.targetid,
            },
            "temperature": self.temperature,
        }}
        return json.dumps(doc, separators=(",", ":")).encode()

    @classmethod
    def from_json(cls, data: bytes | str) -> "SensorEvent":
        ev = json.loads(data)[EVENT_KEY]
        sensor = ev["sensor"]
        geo = sensor["geoLocation"]
        return cls(index=ev["index"], date=ev["date"], uuid=ev["uuid"],
                   temperature=ev["temperature"], sensor_type=sensor["type"],
                   sensor_id=sensor["id"], longitude=geo["longitude"],
                   latitude=geo["latitude"], targetid=sensor["targetid"])


def _utc_stamp(now: dt.datetime) -> str:
    return now.strftime("%Y-%m-%d %H:%M:%S.%f")[:-4] + " UTC"


class SensorSource:
    """Produces events with contiguous indexes and a bounded random-walk temperature."""

    def __init__(self, seed: int | None = None, start_temperature: float = 21.4624679735535,
                 low: float = -20.0, high: float = 50.0, step: float = 0.5):
        self.rng = random.Random(seed)
        self.temperature = start_temperature
        self.low, self.high, self.step = low, high, step
        self.index = 0

    def next_event(self, now: dt.datetime | None = None) -> SensorEvent:
        self.index += 1
        t = self.temperature + self.rng.gauss(0.0, self.step)
        self.temperature = min(self.high, max(self.low, t))
        now = now or dt.datetime.now(dt.timezone.utc)
        return SensorEvent(self.index, _utc_stamp(now),
                           str(uuidlib.UUID(int=self.rng.getrandbits(128), version=4)),
                           round(self.temperature, 1))


def sensor_message(event: SensorEvent) -> Message:
    return Message(event.to_json(), MessageProperties(content_type="application/json"))


class SensorGenerator:
    """Publishes one event every ``period`` seconds to ``exchange``."""

    def __init__(self, broker: Broker, period: float, exchange: str = "sensor",
                 seed: int | None = None):
        self.broker = broker
        self.period = period
        self.exchange = exchange
        self.source = SensorSource(seed)
        self.published: list[SensorEvent] = []
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self) -> "SensorGenerator":
        self.broker.declare_exchange(ExchangeSpec(ExchangeKind.FANOUT, self.exchange))
        self._thread = threading.Thread(target=self._run, name="sensor", daemon=True)
        self._thread.start()
        return self

    def _run(self) -> None:
        next_t = time.monotonic()
        while not self._stop.is_set():
            ev = self.source.next_event()
            self.broker.publish(self.exchange, sensor_message(ev))
            self.published.append(ev)
            next_t += self.period
            self._stop.wait(max(0.0, next_t - time.monotonic()))

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)


def missing_index_detector(indexes: Iterable[int]) -> list[str]:
    """One warning per gap; the first index only sets the baseline."""
    warnings = []
    last = None
    for index in indexes:
        if last is not None and index != last + 1:
            warnings.append(f"missing messages: expected index {last + 1}, got {index}")
        last = index
    return warnings


class SensorListener:
    """Red-side consumer that prints events and warns about index gaps."""

    def __init__(self, broker: Broker, exchange: str = "sensor",
                 emit: Callable[[str], None] = print):
        self.broker = broker
        self.exchange = exchange
        self.emit = emit
        self.last_index: int | None = None
        self.events: list[SensorEvent] = []
        self.warnings: list[str] = []
        self.queue_name = exchange + ".listener"

    def start(self) -> "SensorListener":
        self.broker.declare_exchange(ExchangeSpec(ExchangeKind.FANOUT, self.exchange))
        self.broker.declare_queue(self.queue_name)
        self.broker.bind(self.exchange, self.queue_name)
        self.broker.consume(self.queue_name, self.handle)
        return self

    def handle(self, msg: Message) -> None:
        try:
            event = SensorEvent.from_json(msg.body)
        except (ValueError, KeyError, TypeError):
            log.warning("non-sensor message on %s (%d bytes)", self.exchange, len(msg.body))
            return
        if self.last_index is not None:
            for w in missing_index_detector([self.last_index, event.index]):
                self.warnings.append(w)
                log.warning(w)
        self.last_index = event.index
        self.events.append(event)
        self.emit("sensorEvent: " + msg.body.decode())

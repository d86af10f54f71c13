import io
import json
import logging
import time

from diode_bridge.bridge import RedBridge
from diode_bridge.broker import Broker
from diode_bridge.envelope import ExchangeSpec, Message
from diode_bridge.metrics import Counters, MetricsReporter
from diode_bridge.segmentation import Segment, encode_packet
from harness import FAST


def parse(stream):
    lines = [ln for ln in stream.getvalue().splitlines() if ln.startswith("METRICS ")]
    return [json.loads(ln[len("METRICS "):]) for ln in lines]


def test_counters():
    c = Counters("a")
    c.incr("a")
    c.incr("b", 5)
    assert c["a"] == 1 and c["b"] == 5 and c["missing"] == 0
    assert c.snapshot() == {"a": 1, "b": 5}


def test_idle_rates_are_zero():
    b = Broker()
    out = io.StringIO()
    rep = MetricsReporter({"broker": b.metrics}, stream=out)
    rep.collect()
    line = rep.emit()
    assert all(r == {"in": 0.0, "out": 0.0} for r in line["broker"]["exchange_rates"].values())
    assert parse(out)[0]["broker"]["queues"] == {}


def test_rate_reflects_publishing():
    b = Broker()
    b.declare_exchange(ExchangeSpec("fanout", "sensor"))
    out = io.StringIO()
    rep = MetricsReporter({"broker": b.metrics}, interval=0.5, stream=out).start()
    t_end = time.monotonic() + 1.6
    next_t = time.monotonic()
    while time.monotonic() < t_end:
        b.publish("sensor", Message(b"x"))
        next_t += 0.01
        time.sleep(max(0, next_t - time.monotonic()))
    rep.stop()
    lines = parse(out)
    assert len(lines) >= 2
    rate = lines[1]["broker"]["exchange_rates"]["sensor"]["in"]
    assert 90 <= rate <= 110


def test_discard_counter_after_forced_expiry(caplog):
    now = [0.0]
    red = RedBridge(Broker(), FAST, clock=lambda: now[0])
    red.handle_datagram(encode_packet(Segment(9, 2, 0, b"half")))
    now[0] = 100.0
    with caplog.at_level(logging.WARNING):
        red.sweep()
    assert red.metrics()["discarded"] == 1
    assert red.metrics()["reassembly_expired"] == 1
    assert "discarded message" in caplog.text

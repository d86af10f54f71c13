import json
import random
import time

from hypothesis import given
from hypothesis import strategies as st

from diode_bridge.broker import Broker
from diode_bridge.envelope import Message
from diode_bridge.sensor import (EVENT_KEY, SensorEvent, SensorGenerator, SensorListener,
                                 SensorSource, missing_index_detector, sensor_message)


def gap_oracle(indexes):
    """Brute force: count positions where the step from the previous index is not +1."""
    return sum(1 for a, b in zip(indexes, indexes[1:]) if b != a + 1)


def test_detector_examples():
    assert missing_index_detector([1, 2, 3]) == []
    w = missing_index_detector([1, 2, 4])
    assert len(w) == 1 and "expected index 3" in w[0] and "got 4" in w[0]
    assert len(missing_index_detector([1, 3, 4, 7])) == 2
    assert missing_index_detector([]) == []
    assert missing_index_detector([42]) == []


@given(st.lists(st.integers(1, 60), unique=True).map(sorted))
def test_detector_matches_oracle(indexes):
    assert len(missing_index_detector(indexes)) == gap_oracle(indexes)


def test_ten_random_deletions():
    rng = random.Random(7)
    for _ in range(50):
        deleted = set(rng.sample(range(2, 1000), 10))
        stream = [i for i in range(1, 1001) if i not in deleted]
        n = len(missing_index_detector(stream))
        assert n == gap_oracle(stream) <= 10


def test_event_json_shape():
    ev = SensorSource(seed=1).next_event()
    doc = json.loads(ev.to_json())[EVENT_KEY]
    assert doc["index"] == 1
    assert doc["sensor"]["geoLocation"] == {"longitude": 4.899431, "latitude": 52.379189}
    assert doc["sensor"]["type"] == "temperature"
    assert doc["date"].endswith(" UTC")
    assert SensorEvent.from_json(ev.to_json()) == ev


def test_source_bounded_and_contiguous():
    src = SensorSource(seed=3, low=-5, high=5, step=3.0)
    events = [src.next_event() for _ in range(2000)]
    assert [e.index for e in events] == list(range(1, 2001))
    assert all(-5 <= e.temperature <= 5 for e in events)
    assert len({e.uuid for e in events}) == 2000


def test_generator_rate():
    b = Broker()
    gen = SensorGenerator(b, period=0.01, seed=1).start()
    time.sleep(1.0)
    gen.stop()
    n = len(gen.published)
    assert 85 <= n <= 110
    assert [e.index for e in gen.published] == list(range(1, n + 1))


def test_listener_prints_and_warns():
    b = Broker()
    lines = []
    listener = SensorListener(b, emit=lines.append).start()
    src = SensorSource(seed=2)
    events = [src.next_event() for _ in range(5)]
    for ev in events[:2] + events[3:]:
        b.publish("sensor", sensor_message(ev))
    b.publish("sensor", Message(b"not a sensor event"))
    assert b.wait_idle(2)
    assert len(lines) == 4
    assert lines[0].startswith("sensorEvent: {")
    assert len(listener.warnings) == 1
    b.close()

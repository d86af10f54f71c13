import math
import threading
import time

import pytest

from diode_bridge.metrics import Counters
from diode_bridge.segmentation import CutterConfig, cut, encode_packet
from diode_bridge.transport import (BindError, ChannelModel, LossyChannel, OversizedPacket,
                                    RateLimiter, UdpReceiver, UdpSink, receive, send,
                                    simulate_channel)


def collect():
    got, lock = [], threading.Lock()

    def handler(data):
        with lock:
            got.append(data)
    return got, handler


def test_rate_one_spacing():
    stamps = []
    send([b"a", b"b"], RateLimiter(1), lambda p: stamps.append(time.perf_counter()))
    assert 0.9 <= stamps[1] - stamps[0] <= 1.1


def test_rate_1000_for_5000_packets():
    start = time.perf_counter()
    assert send((b"x" for _ in range(5000)), RateLimiter(1000), lambda p: None) == 5000
    assert abs(time.perf_counter() - start - 5.0) <= 0.25


def test_burst_lower_bound():
    n, burst, rate = 300, 50, 1000
    limiter = RateLimiter(rate, burst=burst)
    time.sleep(0.1)  # bucket fills to burst
    start = time.perf_counter()
    send((b"" for _ in range(n)), limiter, lambda p: None)
    elapsed = time.perf_counter() - start
    assert (n - burst) / rate * 0.98 <= elapsed <= n / rate * 1.05


def test_throughput_arithmetic():
    assert round(14500 * 8192 / 1024 / 1024) == 113


def test_oversized_rejected():
    with pytest.raises(OversizedPacket):
        send([bytes(9000)], None, lambda p: None, mtu=8192)


def test_send_error_drops_and_counts():
    counters = Counters()
    calls = []

    def flaky(p):
        calls.append(p)
        if p == b"bad":
            raise OSError("no buffer space")

    assert send([b"a", b"bad", b"c"], None, flaky, counters=counters) == 2
    assert counters["send_errors"] == 1 and counters["packets_sent"] == 2


def test_limiter_validation():
    with pytest.raises(ValueError):
        RateLimiter(0)
    with pytest.raises(ValueError):
        RateLimiter(10, burst=0)


def test_loopback_echo():
    got, handler = collect()
    rx = receive(handler, port=0)
    sink = UdpSink("127.0.0.1", rx.port)
    _, segs = cut(bytes(range(256)) * 30, CutterConfig(segment_size=3000))
    packets = [encode_packet(s) for s in segs]
    send(packets, None, sink)
    rx.drain(2)
    rx.stop()
    sink.close()
    assert sorted(got) == sorted(packets)
    assert len(got) == 3


def test_zero_length_datagram():
    got, handler = collect()
    rx = receive(handler, port=0)
    sink = UdpSink("127.0.0.1", rx.port)
    sink(b"")
    rx.drain(2)
    rx.stop()
    sink.close()
    assert got == [b""]


def test_loopback_10000_at_5000():
    got, handler = collect()
    rx = receive(handler, port=0)
    sink = UdpSink("127.0.0.1", rx.port)
    packets = [i.to_bytes(4, "big") + bytes(1000) for i in range(10_000)]
    assert send(packets, RateLimiter(5000), sink) == 10_000
    rx.drain(3)
    rx.stop()
    sink.close()
    assert rx.counters["received"] == 10_000
    assert rx.counters["handled"] == 10_000
    assert len(got) == 10_000


def test_handler_errors_counted():
    rx = receive(lambda d: 1 / 0, port=0)
    sink = UdpSink("127.0.0.1", rx.port)
    for _ in range(5):
        sink(b"x")
    rx.drain(2)
    rx.stop()
    sink.close()
    assert rx.counters["handler_errors"] == 5


def test_full_handoff_queue_drops_newest():
    release = threading.Event()
    rx = UdpReceiver(lambda d: release.wait(5), port=0, queue_size=2).start()
    sink = UdpSink("127.0.0.1", rx.port)
    for i in range(20):
        sink(bytes([i]))
    time.sleep(0.3)
    release.set()
    rx.drain(2)
    rx.stop()
    sink.close()
    c = rx.counters
    assert c["received"] == 20
    assert c["dropped"] > 0
    assert c["handled"] + c["dropped"] == 20


def test_bind_conflict():
    rx = receive(lambda d: None, port=0)
    try:
        with pytest.raises(BindError):
            UdpReceiver(lambda d: None, port=rx.port)
    finally:
        rx.stop()


# channel model ---------------------------------------------------------------

def packets(n):
    return [i.to_bytes(4, "big") for i in range(n)]


def test_identity_channel():
    assert list(simulate_channel(packets(1000), ChannelModel())) == packets(1000)


def test_total_loss():
    assert list(simulate_channel(packets(1000), ChannelModel(loss_probability=1.0))) == []


def test_binomial_loss():
    n, p = 10_000, 0.1
    out = list(simulate_channel(packets(n), ChannelModel(loss_probability=p, seed=11)))
    sigma = math.sqrt(n * p * (1 - p))
    assert abs(len(out) - n * (1 - p)) <= 3 * sigma


def test_duplication_rate():
    n, p = 10_000, 0.2
    out = list(simulate_channel(packets(n), ChannelModel(duplicate_probability=p, seed=5)))
    sigma = math.sqrt(n * p * (1 - p))
    assert abs(len(out) - n * (1 + p)) <= 3 * sigma


def test_reorder_window_bound():
    w = 8
    out = list(simulate_channel(packets(5000), ChannelModel(reorder_window=w, seed=2)))
    assert sorted(out) == packets(5000)
    positions = [int.from_bytes(p, "big") for p in out]
    assert positions != sorted(positions)
    assert max(abs(pos - i) for i, pos in enumerate(positions)) <= w


def test_corruption_flips_one_bit():
    out = list(simulate_channel([bytes(16)] * 200, ChannelModel(corrupt_probability=1.0, seed=1)))
    assert len(out) == 200
    assert all(sum(bin(b).count("1") for b in p) == 1 for p in out)


def test_seed_reproducible():
    m = ChannelModel(loss_probability=0.3, duplicate_probability=0.1, reorder_window=4, seed=9)
    assert list(simulate_channel(packets(500), m)) == list(simulate_channel(packets(500), m))


def test_channel_counters_reconcile():
    out = []
    ch = LossyChannel(ChannelModel(0.2, 0.1, 5, seed=3), out.append)
    for p in packets(2000):
        ch(p)
    ch.flush()
    c = ch.counters
    assert c["in"] == 2000
    assert c["out"] == len(out) == c["in"] - c["lost"] + c["duplicated"]


@pytest.mark.parametrize("kwargs", [{"loss_probability": 1.5}, {"duplicate_probability": -0.1},
                                    {"reorder_window": -1}])
def test_model_validation(kwargs):
    with pytest.raises(ValueError):
        ChannelModel(**kwargs)

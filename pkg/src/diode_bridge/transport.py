"""Paced UDP sending, the UDP receive loop and a lossy channel simulator."""

from __future__ import annotations

import heapq
import logging
import queue as queuelib
import random
import socket
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

from .metrics import Counters

log = logging.getLogger(__name__)

DEFAULT_RATE = 14500
DEFAULT_MTU = 8192
DEFAULT_PORT = 1234

Sink = Callable[[bytes], None]


class TransportError(Exception):
    pass


class OversizedPacket(TransportError):
    pass


class BindError(TransportError):
    pass


def _wait_until(deadline: float) -> None:
    # coarse sleep, then yield-spin; plain sleep overshoots by tens of µs
    while True:
        remaining = deadline - time.perf_counter()
        if remaining <= 0:
            return
        if remaining > 0.002:
            time.sleep(remaining - 0.001)
        else:
            time.sleep(0)


class RateLimiter:
    """Token bucket: ``rate`` tokens per second, at most ``burst`` stored."""

    def __init__(self, rate: float = DEFAULT_RATE, burst: int = 1):
        if rate <= 0:
            raise ValueError("rate must be positive")
        if burst < 1:
            raise ValueError("burst must be >= 1")
        self.rate = float(rate)
        self.burst = burst
        self._tokens = float(burst)
        self._last = time.perf_counter()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            while True:
                now = time.perf_counter()
                self._tokens = min(self.burst, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                _wait_until(now + (1.0 - self._tokens) / self.rate)


def send(packets: Iterable[bytes], limiter: RateLimiter | None, sink: Sink,
         mtu: int = DEFAULT_MTU, counters: Counters | None = None) -> int:
    """Write ``packets`` to ``sink`` in order, paced by ``limiter``.

    Returns how many were written.  Socket errors drop the packet; there is
    no retry over a one-way link.
    """
    sent = 0
    for packet in packets:
        if len(packet) > mtu:
            raise OversizedPacket(f"{len(packet)} bytes exceeds MTU {mtu}")
        if limiter is not None:
            limiter.acquire()
        try:
            sink(packet)
        except OSError as exc:
            log.warning("send failed, packet dropped: %s", exc)
            if counters is not None:
                counters.incr("send_errors")
            continue
        sent += 1
        if counters is not None:
            counters.incr("packets_sent")
    return sent


class UdpSink:
    """Callable datagram endpoint for :func:`send`."""

    def __init__(self, host: str = "127.0.0.1", port: int = DEFAULT_PORT,
                 sndbuf: int = 4 << 20):
        self.address = (host, port)
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF, sndbuf)
        except OSError:
            pass

    def __call__(self, packet: bytes) -> None:
        self.sock.sendto(packet, self.address)

    def close(self) -> None:
        self.sock.close()


class UdpReceiver:
    """Receives datagrams on one thread and hands them to ``handler`` on another.

    The hand-off queue is bounded; when it is full the newest datagram is
    dropped and counted.
    """

    def __init__(self, handler: Callable[[bytes], None], host: str = "127.0.0.1",
                 port: int = DEFAULT_PORT, queue_size: int = 65536,
                 rcvbuf: int = 8 << 20):
        self.handler = handler
        self.counters = Counters("received", "dropped", "handled", "handler_errors")
        self._queue: queuelib.Queue[bytes] = queuelib.Queue(queue_size)
        self._stop = threading.Event()
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, rcvbuf)
        except OSError:
            pass
        try:
            self.sock.bind((host, port))
        except OSError as exc:
            self.sock.close()
            raise BindError(f"cannot bind {host}:{port}: {exc}") from exc
        self.sock.settimeout(0.1)
        self.address = self.sock.getsockname()
        self._threads: list[threading.Thread] = []
        self._pending = 0
        self._pending_lock = threading.Lock()

    @property
    def port(self) -> int:
        return self.address[1]

    def start(self) -> "UdpReceiver":
        for target, name in ((self._recv_loop, "udp-recv"), (self._dispatch_loop, "udp-dispatch")):
            t = threading.Thread(target=target, name=name, daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def _recv_loop(self) -> None:
        while not self._stop.is_set():
            try:
                data = self.sock.recv(65535)
            except socket.timeout:
                continue
            except OSError:
                if self._stop.is_set():
                    return
                raise
            self.counters.incr("received")
            try:
                with self._pending_lock:
                    self._queue.put_nowait(data)
                    self._pending += 1
            except queuelib.Full:
                self.counters.incr("dropped")

    def _dispatch_loop(self) -> None:
        while True:
            try:
                data = self._queue.get(timeout=0.1)
            except queuelib.Empty:
                if self._stop.is_set():
                    return
                continue
            try:
                self.handler(data)
            except Exception:
                self.counters.incr("handler_errors")
                log.exception("datagram handler failed")
            finally:
                self.counters.incr("handled")
                with self._pending_lock:
                    self._pending -= 1

    def drain(self, timeout: float = 5.0, quiet: float = 0.05) -> bool:
        """Wait until no datagram has been pending for ``quiet`` seconds."""
        deadline = time.monotonic() + timeout
        last_busy = time.monotonic()
        last_received = self.counters["received"]
        while time.monotonic() < deadline:
            with self._pending_lock:
                pending = self._pending
            received = self.counters["received"]
            if pending or received != last_received:
                last_busy = time.monotonic()
                last_received = received
            elif time.monotonic() - last_busy >= quiet:
                return True
            time.sleep(0.005)
        return False

    def stop(self, drain_timeout: float = 0.0) -> None:
        if drain_timeout:
            self.drain(drain_timeout)
        self._stop.set()
        for t in self._threads:
            t.join(timeout=5)
        self.sock.close()


def receive(handler: Callable[[bytes], None], host: str = "127.0.0.1",
            port: int = DEFAULT_PORT, queue_size: int = 65536) -> UdpReceiver:
    """Bind and start a receiver; call ``stop()`` on the result to end it."""
    return UdpReceiver(handler, host, port, queue_size).start()


# channel simulation ---------------------------------------------------------

@dataclass(frozen=True)
class ChannelModel:
    loss_probability: float = 0.0
    duplicate_probability: float = 0.0
    reorder_window: int = 0
    seed: int = 0
    corrupt_probability: float = 0.0

    def __post_init__(self):
        for name in ("loss_probability", "duplicate_probability", "corrupt_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.reorder_window < 0:
            raise ValueError("reorder_window must be non-negative")


class LossyChannel:
    """Online channel simulator feeding ``deliver``.

    Each surviving copy of input packet ``i`` gets the sort key
    ``i + randint(0, reorder_window)``; a packet is released once no later
    input can sort before it, so no packet moves by more than the window.
    """

    def __init__(self, model: ChannelModel, deliver: Sink):
        self.model = model
        self.deliver = deliver
        self.rng = random.Random(model.seed)
        self.counters = Counters("in", "lost", "duplicated", "corrupted", "out")
        self._heap: list[tuple[int, int, bytes]] = []
        self._i = 0
        self._seq = 0
        self._lock = threading.Lock()

    def _corrupt(self, packet: bytes) -> bytes:
        if not packet:
            return packet
        buf = bytearray(packet)
        pos = self.rng.randrange(len(buf))
        buf[pos] ^= 1 << self.rng.randrange(8)
        return bytes(buf)

    def __call__(self, packet: bytes) -> None:
        m, rng = self.model, self.rng
        ready = []
        with self._lock:
            i = self._i
            self._i += 1
            self.counters.incr("in")
            if rng.random() < m.loss_probability:
                self.counters.incr("lost")
            else:
                copies = 1
                if rng.random() < m.duplicate_probability:
                    copies = 2
                    self.counters.incr("duplicated")
                for _ in range(copies):
                    p = packet
                    if m.corrupt_probability and rng.random() < m.corrupt_probability:
                        p = self._corrupt(p)
                        self.counters.incr("corrupted")
                    key = i + (rng.randint(0, m.reorder_window) if m.reorder_window else 0)
                    heapq.heappush(self._heap, (key, self._seq, p))
                    self._seq += 1
            while self._heap and self._heap[0][0] <= i:
                ready.append(heapq.heappop(self._heap)[2])
            self.counters.incr("out", len(ready))
        for p in ready:
            self.deliver(p)

    def flush(self) -> None:
        with self._lock:
            ready = [heapq.heappop(self._heap)[2] for _ in range(len(self._heap))]
            self.counters.incr("out", len(ready))
        for p in ready:
            self.deliver(p)


def simulate_channel(packets: Iterable[bytes], model: ChannelModel) -> Iterator[bytes]:
    out: list[bytes] = []
    channel = LossyChannel(model, out.append)
    for packet in packets:
        channel(packet)
        yield from out
        out.clear()
    channel.flush()
    yield from out

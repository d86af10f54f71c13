"""In-memory publish/subscribe broker with AMQP-like routing.

Only the parts the bridge needs: exchanges of the four classic kinds, FIFO
queues with acknowledging consumers, bindings, taps (catch-all copies used
for mirroring), shovels and the ``.dd`` mirror poller.

Consumer callbacks run on one dispatch thread per queue.  Returning from the
callback acknowledges the message; raising puts it back at the head of the
queue.  Callbacks must not block indefinitely.
"""

from __future__ import annotations

import collections
import dataclasses
import logging
import queue as queuelib
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

from .envelope import ExchangeKind, ExchangeSpec, Message

log = logging.getLogger(__name__)

DEFAULT_EXCHANGE = "(AMQP default)"
DEFAULT_EXCHANGES = (
    ExchangeSpec(ExchangeKind.DIRECT, DEFAULT_EXCHANGE),
    ExchangeSpec(ExchangeKind.DIRECT, "amq.direct"),
    ExchangeSpec(ExchangeKind.FANOUT, "amq.fanout"),
    ExchangeSpec(ExchangeKind.HEADERS, "amq.headers"),
    ExchangeSpec(ExchangeKind.HEADERS, "amq.match"),
    ExchangeSpec(ExchangeKind.TOPIC, "amq.topic"),
)
DEFAULT_EXCHANGE_NAMES = frozenset(spec.name for spec in DEFAULT_EXCHANGES)
MIRROR_SUFFIX = ".dd"

Consumer = Callable[[Message], None]


class BrokerError(Exception):
    pass


class KindConflict(BrokerError):
    pass


class NoSuchExchange(BrokerError):
    pass


class NoSuchQueue(BrokerError):
    pass


def topic_matches(pattern: str, routing_key: str) -> bool:
    """AMQP topic match: ``*`` is exactly one word, ``#`` zero or more."""
    pwords = pattern.split(".")
    kwords = routing_key.split(".")
    n = len(pwords)

    def closure(states: set[int]) -> set[int]:
        # a '#' may match zero words, so it can be skipped
        out, stack = set(states), list(states)
        while stack:
            i = stack.pop()
            if i < n and pwords[i] == "#" and i + 1 not in out:
                out.add(i + 1)
                stack.append(i + 1)
        return out

    states = closure({0})
    for word in kwords:
        nxt = set()
        for i in states:
            if i == n:
                continue
            p = pwords[i]
            if p == "#":
                nxt.add(i)
            elif p == "*" or p == word:
                nxt.add(i + 1)
        states = closure(nxt)
        if not states:
            return False
    return n in states


def headers_match(args: dict[str, str], headers: dict[str, str]) -> bool:
    mode = args.get("x-match", "all")
    wanted = {k: v for k, v in args.items() if not k.startswith("x-")}
    hits = (headers.get(k) == v for k, v in wanted.items())
    if mode == "any":
        return any(hits)
    return all(hits)


@dataclass(frozen=True)
class Binding:
    exchange: str
    queue: str
    pattern: str = ""
    args: tuple[tuple[str, str], ...] = ()

    def routes(self, kind: ExchangeKind, msg: Message) -> bool:
        if kind is ExchangeKind.FANOUT:
            return True
        if kind is ExchangeKind.DIRECT:
            return self.pattern == msg.routing_key
        if kind is ExchangeKind.TOPIC:
            return topic_matches(self.pattern, msg.routing_key)
        return headers_match(dict(self.args), msg.headers)


class Queue:
    """FIFO buffer delivering each message to exactly one consumer."""

    def __init__(self, name: str, durable: bool = False):
        self.name = name
        self.durable = durable
        self._messages: collections.deque[Message] = collections.deque()
        self._consumers: list[Consumer] = []
        self._cond = threading.Condition()
        self._thread: threading.Thread | None = None
        self._closed = False
        self._busy = False
        self._rr = 0
        self.enqueued = 0
        self.delivered = 0
        self.requeued = 0

    def __len__(self):
        with self._cond:
            return len(self._messages)

    @property
    def consumer_count(self) -> int:
        with self._cond:
            return len(self._consumers)

    def put(self, msg: Message) -> None:
        with self._cond:
            self._messages.append(msg)
            self.enqueued += 1
            self._cond.notify_all()

    def get(self, timeout: float | None = None) -> Message | None:
        """Pull one message (basic.get style); ``None`` when nothing arrives."""
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while not self._messages:
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    return None
                self._cond.wait(remaining)
            self.delivered += 1
            return self._messages.popleft()

    def subscribe(self, callback: Consumer) -> None:
        with self._cond:
            self._consumers.append(callback)
            if self._thread is None:
                self._thread = threading.Thread(
                    target=self._dispatch, name=f"queue:{self.name}", daemon=True)
                self._thread.start()
            self._cond.notify_all()

    def idle(self) -> bool:
        with self._cond:
            return not self._messages and not self._busy

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()
        if self._thread is not None and self._thread is not threading.current_thread():
            self._thread.join(timeout=5)

    def _dispatch(self) -> None:
        while True:
            with self._cond:
                while not self._closed and not (self._messages and self._consumers):
                    self._cond.wait()
                if self._closed:
                    return
                msg = self._messages.popleft()
                consumer = self._consumers[self._rr % len(self._consumers)]
                self._rr += 1
                self._busy = True
            try:
                consumer(msg)
            except Exception:
                log.exception("consumer on %s failed; requeueing", self.name)
                with self._cond:
                    self._messages.appendleft(msg)
                    self.requeued += 1
                    self._busy = False
                time.sleep(0.01)
                continue
            with self._cond:
                self.delivered += 1
                self._busy = False
                self._cond.notify_all()


@dataclass
class _ExchangeStats:
    published: int = 0
    routed: int = 0


@dataclass(frozen=True)
class Shovel:
    source_queue: str
    dest_exchange: str
    dest: "Broker" = field(compare=False, repr=False)


class Broker:
    """A single in-process message bus.  All operations are thread-safe."""

    def __init__(self, name: str = "broker"):
        self.name = name
        self._lock = threading.RLock()
        self._exchanges: dict[str, ExchangeSpec] = {}
        self._queues: dict[str, Queue] = {}
        self._bindings: list[Binding] = []
        self._taps: dict[str, set[str]] = collections.defaultdict(set)
        self._stats: dict[str, _ExchangeStats] = collections.defaultdict(_ExchangeStats)
        self.shovels: list[Shovel] = []
        for spec in DEFAULT_EXCHANGES:
            self._exchanges[spec.name] = spec

    # declarations ---------------------------------------------------------

    def declare_exchange(self, spec: ExchangeSpec) -> bool:
        with self._lock:
            existing = self._exchanges.get(spec.name)
            if existing is not None:
                if existing.kind is not spec.kind:
                    raise KindConflict(
                        f"exchange {spec.name!r} is {existing.kind.value}, not {spec.kind.value}")
                return False
            self._exchanges[spec.name] = spec
            return True

    def declare_queue(self, name: str, durable: bool = False) -> bool:
        with self._lock:
            if name in self._queues:
                return False
            self._queues[name] = Queue(name, durable)
            return True

    def exchange(self, name: str) -> ExchangeSpec:
        with self._lock:
            try:
                return self._exchanges[name]
            except KeyError:
                raise NoSuchExchange(name) from None

    def queue(self, name: str) -> Queue:
        with self._lock:
            try:
                return self._queues[name]
            except KeyError:
                raise NoSuchQueue(name) from None

    @property
    def exchanges(self) -> dict[str, ExchangeSpec]:
        with self._lock:
            return dict(self._exchanges)

    @property
    def queues(self) -> dict[str, Queue]:
        with self._lock:
            return dict(self._queues)

    @property
    def bindings(self) -> list[Binding]:
        with self._lock:
            return list(self._bindings)

    def bind(self, exchange: str, queue: str, pattern: str = "",
             args: dict[str, str] | None = None) -> None:
        binding = Binding(exchange, queue, pattern, tuple(sorted((args or {}).items())))
        with self._lock:
            self.exchange(exchange)
            self.queue(queue)
            if binding not in self._bindings:
                self._bindings.append(binding)

    def tap(self, exchange: str, queue: str) -> None:
        """Copy every message published to ``exchange`` into ``queue``."""
        with self._lock:
            self.exchange(exchange)
            self.queue(queue)
            self._taps[exchange].add(queue)

    # messaging ------------------------------------------------------------

    def publish(self, exchange: str, msg: Message) -> int:
        """Route ``msg``; returns the number of queues it was delivered to."""
        with self._lock:
            spec = self.exchange(exchange)
            msg = dataclasses.replace(
                msg, properties=dataclasses.replace(msg.properties, received_exchange=exchange))
            if exchange == DEFAULT_EXCHANGE:
                targets = [msg.routing_key] if msg.routing_key in self._queues else []
            else:
                targets = [b.queue for b in self._bindings
                           if b.exchange == exchange and b.routes(spec.kind, msg)]
            for name in sorted(self._taps.get(exchange, ())):
                if name not in targets:
                    targets.append(name)
            # a queue bound twice with different patterns still gets one copy
            targets = list(dict.fromkeys(targets))
            stats = self._stats[exchange]
            stats.published += 1
            stats.routed += len(targets)
            queues = [self._queues[t] for t in targets]
        for q in queues:
            q.put(msg)
        return len(queues)

    def consume(self, queue: str, callback: Consumer) -> None:
        self.queue(queue).subscribe(callback)

    def get(self, queue: str, timeout: float | None = 0) -> Message | None:
        return self.queue(queue).get(timeout)

    def add_shovel(self, source_queue: str, dest_exchange: str,
                   dest: "Broker | None" = None) -> Shovel:
        """Move messages from ``source_queue`` to ``dest_exchange`` on ``dest``.

        The exchange a message was originally published to is kept in the
        ``x-original-exchange`` header.
        """
        dest = dest or self
        src = self.queue(source_queue)
        dest.exchange(dest_exchange)

        def forward(msg: Message) -> None:
            headers = dict(msg.headers)
            headers.setdefault("x-original-exchange", msg.properties.received_exchange)
            props = dataclasses.replace(msg.properties, headers=headers)
            dest.publish(dest_exchange, dataclasses.replace(msg, properties=props))

        shovel = Shovel(source_queue, dest_exchange, dest)
        with self._lock:
            self.shovels.append(shovel)
        src.subscribe(forward)
        return shovel

    def idle(self) -> bool:
        """True when every queue with consumers has drained."""
        return all(q.idle() for q in self.queues.values() if q.consumer_count)

    def wait_idle(self, timeout: float = 10.0, settle: float = 0.02) -> bool:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if self.idle():
                time.sleep(settle)
                if self.idle():
                    return True
            time.sleep(0.005)
        return False

    def metrics(self) -> dict:
        with self._lock:
            return {
                "exchanges": {name: {"in": s.published, "out": s.routed}
                              for name, s in self._stats.items()},
                "queues": {name: {"depth": len(q), "delivered": q.delivered,
                                  "consumers": q.consumer_count}
                           for name, q in self._queues.items()},
            }

    def close(self) -> None:
        for q in self.queues.values():
            q.close()


class MirrorPoller:
    """Periodically attaches a ``<exchange>.dd`` queue to every new exchange.

    Messages consumed from those queues are handed to ``handler`` as
    ``(queue_name, message)``; without a handler they are buffered and can be
    read by iterating the poller.
    """

    def __init__(self, broker: Broker, skip: Iterable[str], interval: float = 1.0,
                 handler: Callable[[str, Message], None] | None = None,
                 maxsize: int = 1024):
        self.broker = broker
        self.skip = frozenset(skip)
        self.interval = interval
        self._buffer: queuelib.Queue[tuple[str, Message]] = queuelib.Queue(maxsize)
        self.handler = handler or (lambda q, m: self._buffer.put((q, m)))
        self.mirrored: dict[str, str] = {}
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def poll_once(self) -> list[str]:
        """Create missing mirror queues; returns the queue names created."""
        created = []
        with self._lock:
            for name, spec in sorted(self.broker.exchanges.items()):
                if name in self.skip or name in self.mirrored:
                    continue
                qname = name + MIRROR_SUFFIX
                self.broker.declare_queue(qname)
                if spec.kind is ExchangeKind.TOPIC:
                    self.broker.bind(name, qname, "#")
                elif spec.kind is ExchangeKind.DIRECT:
                    self.broker.tap(name, qname)
                else:
                    self.broker.bind(name, qname, "", {})
                self.broker.consume(qname, lambda m, q=qname: self.handler(q, m))
                self.mirrored[name] = qname
                created.append(qname)
                log.info("mirroring exchange %s via queue %s", name, qname)
        return created

    def start(self) -> "MirrorPoller":
        self.poll_once()
        self._thread = threading.Thread(target=self._run, name="mirror-poller", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def _run(self) -> None:
        while not self._stop.wait(self.interval):
            try:
                self.poll_once()
            except Exception:
                log.exception("mirror poll failed")

    def get(self, timeout: float | None = None) -> tuple[str, Message] | None:
        try:
            return self._buffer.get(timeout=timeout)
        except queuelib.Empty:
            return None

    def __iter__(self) -> Iterator[tuple[str, Message]]:
        while not self._stop.is_set():
            item = self.get(timeout=0.1)
            if item is not None:
                yield item


def mirror_poller(broker: Broker, skip: Iterable[str], interval: float = 1.0) -> MirrorPoller:
    """Start a poller and return it; iterate it for ``(queue, message)`` pairs."""
    return MirrorPoller(broker, skip, interval).start()

"""Black (sending) and red (receiving) pipelines.

Black:  mirror poller -> wrap + serialize -> cut -> replicate/shuffle -> paced send
Red:    datagram -> decode -> reassemble -> deserialize -> declare exchange -> publish

With keys configured, the black side also runs an encrypt listener on the
``encrypt`` exchange that republishes SecureMessages to ``encrypted``; the
red side decrypts what arrives on ``encrypted`` and republishes the inner
message to the exchange it originally came from.
"""

from __future__ import annotations

import dataclasses
import logging
import queue as queuelib
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from . import crypto
from .broker import DEFAULT_EXCHANGE_NAMES, Broker, BrokerError, MirrorPoller
from .crypto import CryptoConfig, CryptoError, IndexCounter, KeyMaterial, SecureMessage
from .envelope import (ExchangeKind, ExchangeMessage, ExchangeSpec, MalformedEnvelope,
                       Message, MessageProperties, deserialize_exchange_message,
                       serialize_exchange_message)
from .metrics import Counters
from .reassembly import ReassemblyBuffer, ReassemblyConfig, ReassemblyError
from .segmentation import (DATA_OVERHEAD, CutterConfig, PacketError, cut, decode_packet,
                           replicate_and_shuffle)
from .transport import DEFAULT_MTU, DEFAULT_PORT, RateLimiter, Sink, send

log = logging.getLogger(__name__)

ORIGIN_HEADER = "x-original-exchange"
DEFAULT_SKIP = DEFAULT_EXCHANGE_NAMES | {"encrypt"}


@dataclass(frozen=True)
class BridgeConfig:
    cutter: CutterConfig = field(default_factory=CutterConfig)
    rate: float | None = 14500
    burst: int = 1
    mtu: int = DEFAULT_MTU
    compress: bool = False
    crypto: CryptoConfig = field(default_factory=CryptoConfig)
    key_dir: Path | None = None
    skip_exchanges: frozenset[str] = DEFAULT_SKIP
    encrypt_exchange: str = "encrypt"
    encrypted_exchange: str = "encrypted"
    reassembly: ReassemblyConfig = field(default_factory=ReassemblyConfig)
    poll_interval: float = 1.0
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT

    def __post_init__(self):
        object.__setattr__(self, "skip_exchanges", frozenset(self.skip_exchanges))
        if self.encrypt_exchange not in self.skip_exchanges:
            raise ValueError(f"{self.encrypt_exchange!r} must never be mirrored")
        if self.encrypted_exchange in self.skip_exchanges:
            raise ValueError(f"{self.encrypted_exchange!r} must be mirrored")
        if self.cutter.segment_size + DATA_OVERHEAD > self.mtu:
            raise ValueError(f"segment size {self.cutter.segment_size} + {DATA_OVERHEAD} "
                             f"exceeds MTU {self.mtu}")
        if self.rate is not None and self.rate <= 0:
            raise ValueError("rate must be positive")

    @property
    def encryption_enabled(self) -> bool:
        return self.key_dir is not None


def _fanout(name: str) -> ExchangeSpec:
    return ExchangeSpec(ExchangeKind.FANOUT, name)


class EncryptListener:
    """Encrypts everything shovelled onto the ``encrypt`` exchange."""

    def __init__(self, broker: Broker, cfg: BridgeConfig, keys: KeyMaterial,
                 counters: Counters | None = None):
        self.broker = broker
        self.cfg = cfg
        self.keys = keys
        self.index = IndexCounter()
        self.counters = counters or Counters()
        self.queue_name = cfg.encrypt_exchange
        self.dead_letter = cfg.encrypt_exchange + ".dead"

    def start(self) -> "EncryptListener":
        b = self.broker
        b.declare_exchange(_fanout(self.cfg.encrypt_exchange))
        b.declare_exchange(_fanout(self.cfg.encrypted_exchange))
        b.declare_queue(self.queue_name)
        b.declare_queue(self.dead_letter)
        b.bind(self.cfg.encrypt_exchange, self.queue_name)
        b.consume(self.queue_name, self.handle)
        return self

    def handle(self, msg: Message) -> None:
        origin = msg.headers.get(ORIGIN_HEADER)
        try:
            if not origin:
                raise BrokerError("no origin header")
            spec = self.broker.exchange(origin)
        except BrokerError as exc:
            log.warning("dead-lettering message from %s: %s",
                        msg.properties.received_exchange, exc)
            self.broker.queue(self.dead_letter).put(msg)
            self.counters.incr("dead_lettered")
            return
        headers = {k: v for k, v in msg.headers.items() if k != ORIGIN_HEADER}
        inner = Message(msg.body, dataclasses.replace(
            msg.properties, headers=headers, received_exchange=origin))
        plaintext = serialize_exchange_message(ExchangeMessage(spec, inner), self.cfg.compress)
        sm = crypto.encrypt_and_sign(plaintext, self.index.next(), self.keys, self.cfg.crypto)
        out = Message(sm.to_json(), MessageProperties(
            routing_key=msg.routing_key, content_type="application/json"))
        self.broker.publish(self.cfg.encrypted_exchange, out)
        self.counters.incr("encrypted")


class BlackBridge:
    """Mirrors every non-skipped exchange of ``broker`` into ``sink``."""

    def __init__(self, broker: Broker, cfg: BridgeConfig, sink: Sink,
                 keys: KeyMaterial | None = None, work_queue: int = 1024,
                 packet_queue: int = 64):
        self.broker = broker
        self.cfg = cfg
        self.sink = sink
        self.counters = Counters("messages_in", "messages_packed", "pack_errors",
                                 "packets_sent", "send_errors")
        self.limiter = RateLimiter(cfg.rate, cfg.burst) if cfg.rate else None
        self.poller = MirrorPoller(broker, cfg.skip_exchanges, cfg.poll_interval,
                                   handler=self._enqueue)
        self.encryptor = EncryptListener(broker, cfg, keys, self.counters) if keys else None
        self._work: queuelib.Queue = queuelib.Queue(work_queue)
        self._out: queuelib.Queue = queuelib.Queue(packet_queue)
        self._inflight = 0
        self._inflight_lock = threading.Lock()
        self._threads: list[threading.Thread] = []

    def _enqueue(self, queue_name: str, msg: Message) -> None:
        with self._inflight_lock:
            self._inflight += 1
        self.counters.incr("messages_in")
        self._work.put(msg)

    def _done(self) -> None:
        with self._inflight_lock:
            self._inflight -= 1

    def pack(self, msg: Message) -> list[bytes]:
        """Wrap, serialize, cut and replicate one mirrored message."""
        spec = self.broker.exchange(msg.properties.received_exchange)
        data = serialize_exchange_message(ExchangeMessage(spec, msg), self.cfg.compress)
        header, segments = cut(data, self.cfg.cutter)
        return replicate_and_shuffle(header, segments, self.cfg.cutter)

    def _pack_loop(self) -> None:
        while True:
            msg = self._work.get()
            if msg is None:
                self._out.put(None)
                return
            try:
                packets = self.pack(msg)
            except Exception:
                log.exception("dropping message from %s", msg.properties.received_exchange)
                self.counters.incr("pack_errors")
                self._done()
                continue
            self.counters.incr("messages_packed")
            self._out.put(packets)

    def _send_loop(self) -> None:
        while True:
            packets = self._out.get()
            if packets is None:
                return
            try:
                send(packets, self.limiter, self.sink, self.cfg.mtu, self.counters)
            except Exception:
                log.exception("send stage failed")
                self.counters.incr("send_errors")
            finally:
                self._done()

    def start(self) -> "BlackBridge":
        if self.encryptor is not None:
            self.encryptor.start()
        for target, name in ((self._pack_loop, "black-pack"), (self._send_loop, "black-send")):
            t = threading.Thread(target=target, name=name, daemon=True)
            t.start()
            self._threads.append(t)
        self.poller.start()
        return self

    @property
    def inflight(self) -> int:
        with self._inflight_lock:
            return self._inflight

    def idle(self) -> bool:
        return self.broker.idle() and self.inflight == 0

    def wait_idle(self, timeout: float = 30.0) -> bool:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if self.idle():
                time.sleep(0.02)
                if self.idle():
                    return True
            time.sleep(0.005)
        return False

    def stop(self, drain_timeout: float = 5.0) -> None:
        self.poller.stop()
        self.wait_idle(drain_timeout)
        self._work.put(None)
        for t in self._threads:
            t.join(timeout=drain_timeout)

    def metrics(self) -> dict:
        return self.counters.snapshot()


class RedBridge:
    """Rebuilds messages from datagrams and republishes them on ``broker``."""

    def __init__(self, broker: Broker, cfg: BridgeConfig, keys: KeyMaterial | None = None,
                 clock: Callable[[], float] = time.monotonic):
        self.broker = broker
        self.cfg = cfg
        self.keys = keys
        self.clock = clock
        self.buffer = ReassemblyBuffer(cfg.reassembly)
        self.counters = Counters("datagrams", "decode_errors", "reassembly_errors",
                                 "messages_reconstructed", "envelope_errors", "published",
                                 "publish_errors", "decrypted", "crypto_failures",
                                 "index_warnings", "discarded")
        self.decrypt_queue = cfg.encrypted_exchange + ".decrypt"
        self.last_index: int | None = None
        self._stop = threading.Event()
        self._sweeper: threading.Thread | None = None
        self.on_publish: Callable[[str, Message], None] | None = None

    def start(self) -> "RedBridge":
        if self.keys is not None:
            self.broker.declare_exchange(_fanout(self.cfg.encrypted_exchange))
            self.broker.declare_queue(self.decrypt_queue)
            self.broker.bind(self.cfg.encrypted_exchange, self.decrypt_queue)
            self.broker.consume(self.decrypt_queue, self.handle_encrypted)
        self._sweeper = threading.Thread(target=self._sweep_loop, name="red-sweep", daemon=True)
        self._sweeper.start()
        return self

    def stop(self) -> None:
        """Stop sweeping and discard (and log) whatever is still incomplete."""
        self._stop.set()
        if self._sweeper is not None:
            self._sweeper.join(timeout=5)
        expired = self.buffer.sweep(self.clock(), everything=True)
        self.counters.incr("discarded", len(expired))

    def _sweep_loop(self) -> None:
        while not self._stop.wait(self.cfg.reassembly.sweep_interval):
            self.sweep()

    def sweep(self, now: float | None = None) -> list[int]:
        expired = self.buffer.sweep(self.clock() if now is None else now)
        self.counters.incr("discarded", len(expired))
        return expired

    def handle_datagram(self, data: bytes) -> None:
        self.counters.incr("datagrams")
        try:
            packet = decode_packet(data)
        except PacketError as exc:
            self.counters.incr("decode_errors")
            log.debug("undecodable datagram: %s", exc)
            return
        try:
            done = self.buffer.insert(packet, self.clock())
        except ReassemblyError as exc:
            self.counters.incr("reassembly_errors")
            log.warning("message dropped: %s", exc)
            return
        if done is None:
            return
        self.counters.incr("messages_reconstructed")
        try:
            em = deserialize_exchange_message(done.payload)
        except MalformedEnvelope as exc:
            self.counters.incr("envelope_errors")
            log.warning("malformed envelope uuid=%032x: %s", done.uuid, exc)
            return
        self.republish(em)

    def republish(self, em: ExchangeMessage) -> None:
        try:
            self.broker.declare_exchange(em.exchange)
            self.broker.publish(em.exchange.name, em.message)
        except BrokerError as exc:
            self.counters.incr("publish_errors")
            log.warning("cannot republish to %s: %s", em.exchange.name, exc)
            return
        self.counters.incr("published")
        if self.on_publish is not None:
            self.on_publish(em.exchange.name, em.message)

    def handle_encrypted(self, msg: Message) -> None:
        try:
            sm = SecureMessage.from_json(msg.body)
            warning = crypto.check_index(sm.index, self.last_index)
            if warning:
                self.counters.incr("index_warnings")
                log.warning(warning)
            plaintext = crypto.verify_and_decrypt(sm, self.keys, self.cfg.crypto)
            em = deserialize_exchange_message(plaintext)
        except (CryptoError, MalformedEnvelope) as exc:
            self.counters.incr("crypto_failures")
            log.error("encrypted message rejected: %s: %s", type(exc).__name__, exc)
            return
        self.last_index = sm.index if self.last_index is None else max(self.last_index, sm.index)
        self.counters.incr("decrypted")
        self.republish(em)

    def metrics(self) -> dict:
        snap = self.counters.snapshot()
        snap.update({f"reassembly_{k}": v for k, v in self.buffer.stats.items()})
        snap["partial_messages"] = len(self.buffer)
        return snap


def black_pipeline(broker: Broker, cfg: BridgeConfig, sink: Sink,
                   keys: KeyMaterial | None = None) -> BlackBridge:
    return BlackBridge(broker, cfg, sink, keys).start()


def red_pipeline(broker: Broker, cfg: BridgeConfig,
                 keys: KeyMaterial | None = None) -> RedBridge:
    """Start the red side; feed it with ``bridge.handle_datagram``."""
    return RedBridge(broker, cfg, keys).start()

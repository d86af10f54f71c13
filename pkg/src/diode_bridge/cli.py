"""``diode-bridge`` command line: black/red daemons, sensor demo, keygen, bench."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import signal
import sys
import threading
import time
from pathlib import Path

from . import crypto
from .bridge import BlackBridge, BridgeConfig, RedBridge
from .broker import Broker
from .config import ParseError, parse_config
from .envelope import ExchangeKind, ExchangeSpec
from .metrics import MetricsReporter
from .segmentation import DATA_OVERHEAD
from .sensor import SensorGenerator, SensorListener
from .transport import BindError, RateLimiter, UdpReceiver, UdpSink, send

log = logging.getLogger("diode_bridge")

EXIT_CONFIG = 2
EXIT_BIND = 3
EXIT_KEYS = 4


def _hostport(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def _load_config(args) -> BridgeConfig:
    cfg = parse_config(args.config) if args.config else BridgeConfig()
    overrides = {}
    addr = getattr(args, "target", None) or getattr(args, "listen", None)
    if addr:
        overrides["host"], overrides["port"] = _hostport(addr)
    if getattr(args, "rate", None) is not None:
        overrides["rate"] = args.rate or None
    if getattr(args, "mtu", None) is not None:
        overrides["mtu"] = args.mtu
    if getattr(args, "keys", None):
        overrides["key_dir"] = Path(args.keys)
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _install_stop_handler() -> threading.Event:
    stop = threading.Event()

    def handler(signum, frame):
        log.info("received signal %d, shutting down", signum)
        stop.set()

    signal.signal(signal.SIGTERM, handler)
    signal.signal(signal.SIGINT, handler)
    return stop


def _wait(stop: threading.Event, duration: float | None) -> None:
    stop.wait(duration)


def run_black(cfg: BridgeConfig, sensor_period: float | None = None,
              shovels: tuple[str, ...] = (), metrics_interval: float = 10.0,
              duration: float | None = None) -> int:
    keys = None
    if cfg.encryption_enabled:
        try:
            keys = crypto.load_key_dir(cfg.key_dir, "black")
        except (OSError, ValueError, crypto.CryptoError) as exc:
            log.error("cannot load black keys from %s: %s", cfg.key_dir, exc)
            return EXIT_KEYS
    stop = _install_stop_handler()
    broker = Broker("black")
    sink = UdpSink(cfg.host, cfg.port)
    black = BlackBridge(broker, cfg, sink, keys).start()
    generator = None
    if sensor_period is not None:
        generator = SensorGenerator(broker, sensor_period)
        broker.declare_exchange(ExchangeSpec(ExchangeKind.FANOUT, generator.exchange))
    for exchange in shovels:
        if keys is None:
            log.error("--shovel needs encryption keys")
            return EXIT_KEYS
        broker.declare_exchange(ExchangeSpec(ExchangeKind.FANOUT, exchange))
        qname = f"{exchange}.shovel"
        broker.declare_queue(qname)
        broker.bind(exchange, qname)
        broker.add_shovel(qname, cfg.encrypt_exchange)
    black.poller.poll_once()
    if generator is not None:
        generator.start()
    reporter = MetricsReporter({"black": black.metrics, "broker": broker.metrics},
                               metrics_interval).start()
    print(f"started black: target={cfg.host}:{cfg.port} rate={cfg.rate} "
          f"segment={cfg.cutter.segment_size} redundancy={cfg.cutter.redundancy_factor} "
          f"compress={cfg.compress} encryption={'on' if keys else 'off'}",
          file=sys.stderr, flush=True)
    _wait(stop, duration)
    if generator is not None:
        generator.stop()
    black.stop(drain_timeout=5.0)
    reporter.stop()
    reporter.emit()
    sink.close()
    broker.close()
    return 0


def run_red(cfg: BridgeConfig, listen_sensor: bool = True, metrics_interval: float = 10.0,
            duration: float | None = None) -> int:
    keys = None
    if cfg.encryption_enabled:
        try:
            keys = crypto.load_key_dir(cfg.key_dir, "red")
        except (OSError, ValueError, crypto.CryptoError) as exc:
            log.error("cannot load red keys from %s: %s", cfg.key_dir, exc)
            return EXIT_KEYS
    stop = _install_stop_handler()
    broker = Broker("red")
    red = RedBridge(broker, cfg, keys).start()
    if listen_sensor:
        SensorListener(broker, emit=lambda line: print(line, flush=True)).start()
    try:
        receiver = UdpReceiver(red.handle_datagram, cfg.host, cfg.port).start()
    except BindError as exc:
        log.error("%s", exc)
        return EXIT_BIND
    reporter = MetricsReporter(
        {"red": red.metrics, "udp": receiver.counters.snapshot, "broker": broker.metrics},
        metrics_interval).start()
    print(f"started red: listen={cfg.host}:{receiver.port} "
          f"encryption={'on' if keys else 'off'}", file=sys.stderr, flush=True)
    _wait(stop, duration)
    receiver.stop(drain_timeout=5.0)
    broker.wait_idle(timeout=5.0)
    red.stop()
    reporter.stop()
    reporter.emit()
    broker.close()
    return 0


def keygen(out_dir: Path, keysize: int = 2048, force: bool = False) -> list[Path]:
    cfg = crypto.CryptoConfig(asym_keysize=keysize)
    keys = crypto.generate_keys(cfg)
    return crypto.write_key_dir(keys, out_dir, force=force)


def bench(rate: float, size: int, seconds: float, port: int = 0) -> dict:
    """Send ``size``-byte datagrams over loopback for ``seconds`` and report."""
    if size < DATA_OVERHEAD:
        raise ValueError(f"size must be at least {DATA_OVERHEAD}")
    receiver = UdpReceiver(lambda d: None, "127.0.0.1", port).start()
    sink = UdpSink("127.0.0.1", receiver.port)
    n = int(rate * seconds)
    payload = os.urandom(size)
    start = time.perf_counter()
    sent = send((payload for _ in range(n)), RateLimiter(rate), sink, mtu=max(size, 65507))
    elapsed = time.perf_counter() - start
    receiver.drain(timeout=2.0)
    received = receiver.counters["received"]
    receiver.stop()
    sink.close()
    return {
        "configured_rate": rate,
        "packet_size": size,
        "sent": sent,
        "received": received,
        "lost": sent - received,
        "elapsed_s": round(elapsed, 3),
        "achieved_rate": round(sent / elapsed, 1) if elapsed else 0.0,
        "throughput_MiB_s": round(sent * size / elapsed / 2**20, 2) if elapsed else 0.0,
        "configured_throughput_MiB_s": round(rate * size / 2**20, 2),
    }


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diode-bridge", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="properties file")
        sp.add_argument("--keys", help="key directory (enables encryption)")
        sp.add_argument("--metrics-interval", type=float, default=10.0)
        sp.add_argument("--duration", type=float, help="stop after this many seconds")

    b = sub.add_parser("black", help="mirror the local broker onto UDP")
    common(b)
    b.add_argument("--target", help="host:port to send to")
    b.add_argument("--rate", type=float, help="packets per second (0 = unpaced)")
    b.add_argument("--mtu", type=int)
    b.add_argument("--sensor-period", type=float, metavar="MS",
                   help="also run the demo sensor every MS milliseconds")
    b.add_argument("--shovel", action="append", default=[], metavar="EXCHANGE",
                   help="shovel EXCHANGE onto the encrypt exchange")

    s = sub.add_parser("sensor", help="black daemon with the demo temperature sensor")
    common(s)
    s.add_argument("--period", type=float, default=1000.0, metavar="MS")
    s.add_argument("--target")
    s.add_argument("--rate", type=float)
    s.add_argument("--mtu", type=int)
    s.add_argument("--encrypted", action="store_true",
                   help="send events through the encrypt exchange only")

    r = sub.add_parser("red", help="receive UDP and republish on the local broker")
    common(r)
    r.add_argument("--listen", help="host:port to bind")
    r.add_argument("--no-sensor-listener", action="store_true")

    k = sub.add_parser("keygen", help="write black/red RSA keypairs")
    k.add_argument("--out", required=True)
    k.add_argument("--keysize", type=int, default=2048)
    k.add_argument("--force", action="store_true")

    bn = sub.add_parser("bench", help="loopback UDP pacing benchmark")
    bn.add_argument("--rate", type=float, default=14500)
    bn.add_argument("--size", type=int, default=8192)
    bn.add_argument("--seconds", type=float, default=5.0)
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    try:
        if args.command == "keygen":
            for path in keygen(Path(args.out), args.keysize, args.force):
                print(path)
            return 0
        if args.command == "bench":
            print(json.dumps(bench(args.rate, args.size, args.seconds)))
            return 0
        cfg = _load_config(args)
    except (ParseError, ValueError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (FileExistsError, crypto.CryptoError) as exc:
        log.error("%s", exc)
        return EXIT_KEYS
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG

    if args.command == "black":
        period = args.sensor_period / 1000.0 if args.sensor_period else None
        return run_black(cfg, period, tuple(args.shovel), args.metrics_interval, args.duration)
    if args.command == "sensor":
        if args.encrypted:
            cfg = dataclasses.replace(cfg, skip_exchanges=cfg.skip_exchanges | {"sensor"})
        return run_black(cfg, args.period / 1000.0, ("sensor",) if args.encrypted else (),
                         args.metrics_interval, args.duration)
    if args.command == "red":
        return run_red(cfg, not args.no_sensor_listener, args.metrics_interval, args.duration)
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

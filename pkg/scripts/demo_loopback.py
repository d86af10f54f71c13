#!/usr/bin/env python3
"""Run black and red in one process over real loopback UDP and print what arrives.

Optional loss/corruption is injected between the sender and the socket.
With ``--keys DIR`` the sensor stream takes the encrypted path.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from diode_bridge import crypto
from diode_bridge.bridge import BlackBridge, BridgeConfig, RedBridge
from diode_bridge.broker import Broker
from diode_bridge.envelope import ExchangeKind, ExchangeSpec
from diode_bridge.sensor import SensorGenerator, SensorListener
from diode_bridge.transport import ChannelModel, LossyChannel, UdpReceiver, UdpSink


@dataclass(frozen=True)
class DemoConfig:
    seconds: float = 5.0
    period: float = 0.05
    loss: float = 0.0
    corrupt: float = 0.0
    rate: float = 14500
    keys: Path | None = None
    quiet: bool = False


def run(cfg: DemoConfig) -> dict:
    bridge_cfg = BridgeConfig(rate=cfg.rate, poll_interval=0.1)
    black_keys = red_keys = None
    if cfg.keys is not None:
        black_keys = crypto.load_key_dir(cfg.keys, "black")
        red_keys = crypto.load_key_dir(cfg.keys, "red")

    black_broker, red_broker = Broker("black"), Broker("red")
    red = RedBridge(red_broker, bridge_cfg, red_keys).start()
    listener = SensorListener(red_broker, emit=(lambda s: None) if cfg.quiet else print).start()
    rx = UdpReceiver(red.handle_datagram, port=0).start()
    sink = UdpSink("127.0.0.1", rx.port)
    channel = LossyChannel(ChannelModel(loss_probability=cfg.loss,
                                        corrupt_probability=cfg.corrupt, seed=1), sink)
    if black_keys is not None:
        bridge_cfg = dataclasses.replace(
            bridge_cfg, skip_exchanges=bridge_cfg.skip_exchanges | {"sensor"})
    black = BlackBridge(black_broker, bridge_cfg, channel, black_keys).start()
    black_broker.declare_exchange(ExchangeSpec(ExchangeKind.FANOUT, "sensor"))
    if black_keys is not None:
        black_broker.declare_queue("sensor.shovel")
        black_broker.bind("sensor", "sensor.shovel")
        black_broker.add_shovel("sensor.shovel", bridge_cfg.encrypt_exchange)
    black.poller.poll_once()

    gen = SensorGenerator(black_broker, cfg.period, seed=1).start()
    time.sleep(cfg.seconds)
    gen.stop()
    black.wait_idle(10)
    channel.flush()
    rx.drain(2)
    red_broker.wait_idle(5)
    black.stop(drain_timeout=1)
    rx.stop()
    red.stop()
    sink.close()

    summary = {
        "published": len(gen.published),
        "received": len(listener.events),
        "gap_warnings": len(listener.warnings),
        "black": black.metrics(),
        "channel": channel.counters.snapshot(),
        "udp": rx.counters.snapshot(),
        "red": red.metrics(),
    }
    return summary


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seconds", type=float, default=DemoConfig.seconds)
    ap.add_argument("--period-ms", type=float, default=50.0)
    ap.add_argument("--loss", type=float, default=0.0)
    ap.add_argument("--corrupt", type=float, default=0.0)
    ap.add_argument("--rate", type=float, default=14500)
    ap.add_argument("--keys", type=Path, help="key directory from `diode-bridge keygen`")
    ap.add_argument("--quiet", action="store_true", help="only print the summary")
    args = ap.parse_args()
    cfg = DemoConfig(args.seconds, args.period_ms / 1000, args.loss, args.corrupt, args.rate,
                     args.keys, args.quiet)
    print(json.dumps(run(cfg), indent=2), file=sys.stderr)


if __name__ == "__main__":
    main()

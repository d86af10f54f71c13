#!/usr/bin/env python3
"""Measured vs analytic reconstruction rate across loss probabilities.

For each loss probability p the script pushes ``messages`` messages of
``segments`` data segments through the channel simulator and reassembly, and
compares the observed rate with (1 - p^r)^(segments + 1).
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import random
from dataclasses import dataclass

from diode_bridge.reassembly import ReassemblyBuffer
from diode_bridge.segmentation import CutterConfig, cut, decode_packet, replicate_and_shuffle
from diode_bridge.transport import ChannelModel, simulate_channel


@dataclass(frozen=True)
class SweepConfig:
    losses: tuple[float, ...] = (0.0, 0.01, 0.05, 0.1, 0.2, 0.3)
    redundancy: tuple[int, ...] = (1, 2, 3)
    messages: int = 500
    segments: int = 10
    segment_size: int = 512
    reorder_window: int = 0
    seed: int = 0


def run_point(cfg: SweepConfig, p: float, r: int) -> float:
    rng = random.Random(cfg.seed)
    cutter = CutterConfig(segment_size=cfg.segment_size, redundancy_factor=r)
    stream = []
    for _ in range(cfg.messages):
        header, segs = cut(rng.randbytes(cfg.segment_size * cfg.segments), cutter)
        stream += replicate_and_shuffle(
            header, segs, dataclasses.replace(cutter, shuffle_seed=rng.getrandbits(64)))
    model = ChannelModel(loss_probability=p, reorder_window=cfg.reorder_window, seed=cfg.seed)
    buf = ReassemblyBuffer()
    released = sum(buf.insert(decode_packet(pkt), 0.0) is not None
                   for pkt in simulate_channel(stream, model))
    return released / cfg.messages


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--messages", type=int, default=SweepConfig.messages)
    ap.add_argument("--segments", type=int, default=SweepConfig.segments)
    ap.add_argument("--reorder-window", type=int, default=0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cfg = SweepConfig(messages=args.messages, segments=args.segments,
                      reorder_window=args.reorder_window, seed=args.seed)

    print(f"{'loss':>6} {'r':>2} {'measured':>9} {'analytic':>9} {'3 sigma':>8}")
    for p in cfg.losses:
        for r in cfg.redundancy:
            q = (1 - p ** r) ** (cfg.segments + 1)
            sigma = math.sqrt(q * (1 - q) / cfg.messages)
            rate = run_point(cfg, p, r)
            flag = "" if abs(rate - q) <= 3 * sigma else "  <-- outside 3 sigma"
            print(f"{p:>6.2f} {r:>2} {rate:>9.4f} {q:>9.4f} {3 * sigma:>8.4f}{flag}")


if __name__ == "__main__":
    main()

"""Cutting payloads into UDP-sized packets.

Packet layouts (big-endian):

    DATA    [0x02][uuid hi u64][uuid lo u64][count u32][index u32][len u32][payload]
    HEADER  [0x01][uuid hi u64][uuid lo u64][count u32][total_length u64][sha256 32B]

A data packet therefore carries 29 bytes of overhead and a header packet is
always 61 bytes long.
"""

from __future__ import annotations

import hashlib
import random
import struct
import uuid as uuidlib
from dataclasses import dataclass

HEADER = 0x01
DATA = 0x02

_DATA_FMT = struct.Struct(">BQQIII")
_HEADER_FMT = struct.Struct(">BQQIQ32s")

DATA_OVERHEAD = _DATA_FMT.size  # 29
HEADER_SIZE = _HEADER_FMT.size  # 61

MAX_COUNT = 2**32 - 1
_U64 = 2**64 - 1


class PacketError(ValueError):
    """Base class for datagrams that cannot be decoded."""


class UnknownPacketType(PacketError):
    pass


class TruncatedPacket(PacketError):
    pass


class LengthMismatch(PacketError):
    pass


class InvalidPacket(PacketError):
    """Fields decode but violate packet invariants (e.g. index >= count)."""


class PayloadTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    uuid: int
    count: int
    index: int
    payload: bytes
    packet_type: int = DATA

    def __post_init__(self):
        if not 0 <= self.index < self.count <= MAX_COUNT:
            raise ValueError(f"need 0 <= index < count, got {self.index}/{self.count}")


@dataclass(frozen=True)
class SegmentHeader:
    uuid: int
    count: int
    total_length: int
    checksum: bytes
    packet_type: int = HEADER

    def __post_init__(self):
        if not 1 <= self.count <= MAX_COUNT:
            raise ValueError(f"count out of range: {self.count}")
        if len(self.checksum) != 32:
            raise ValueError("checksum must be 32 bytes")


@dataclass(frozen=True)
class CutterConfig:
    segment_size: int = 8163
    redundancy_factor: int = 2
    shuffle_seed: int | None = None

    def __post_init__(self):
        if self.segment_size < 1:
            raise ValueError("segment_size must be >= 1")
        if self.redundancy_factor < 1:
            raise ValueError("redundancy_factor must be >= 1")


def checksum(payload: bytes) -> bytes:
    return hashlib.sha256(payload).digest()


def cut(payload: bytes, cfg: CutterConfig, uuid: int | None = None
        ) -> tuple[SegmentHeader, list[Segment]]:
    """Split ``payload`` into ``max(1, ceil(len / segment_size))`` segments.

    A fresh random uuid is drawn when none is given.
    """
    n = len(payload)
    if n > _U64:
        raise PayloadTooLarge(f"{n} bytes does not fit the total_length field")
    size = cfg.segment_size
    count = max(1, -(-n // size))
    if count > MAX_COUNT:
        raise PayloadTooLarge(f"{n} bytes needs {count} segments at size {size}")
    if uuid is None:
        uuid = uuidlib.uuid4().int
    view = memoryview(payload)
    segments = [
        Segment(uuid, count, i, bytes(view[i * size:(i + 1) * size]))
        for i in range(count)
    ]
    header = SegmentHeader(uuid, count, n, checksum(payload))
    return header, segments


def encode_packet(p: Segment | SegmentHeader) -> bytes:
    hi, lo = p.uuid >> 64, p.uuid & _U64
    if isinstance(p, Segment):
        return _DATA_FMT.pack(DATA, hi, lo, p.count, p.index, len(p.payload)) + p.payload
    return _HEADER_FMT.pack(HEADER, hi, lo, p.count, p.total_length, p.checksum)


def decode_packet(data: bytes) -> Segment | SegmentHeader:
    if not data:
        raise TruncatedPacket("empty datagram")
    tag = data[0]
    if tag == DATA:
        if len(data) < DATA_OVERHEAD:
            raise TruncatedPacket(f"data packet of {len(data)} bytes")
        _, hi, lo, count, index, length = _DATA_FMT.unpack_from(data)
        remaining = len(data) - DATA_OVERHEAD
        if remaining < length:
            raise TruncatedPacket(f"declared {length} payload bytes, got {remaining}")
        if remaining != length:
            raise LengthMismatch(f"declared {length} payload bytes, got {remaining}")
        try:
            return Segment((hi << 64) | lo, count, index, bytes(data[DATA_OVERHEAD:]))
        except ValueError as exc:
            raise InvalidPacket(str(exc)) from exc
    if tag == HEADER:
        if len(data) < HEADER_SIZE:
            raise TruncatedPacket(f"header packet of {len(data)} bytes")
        if len(data) != HEADER_SIZE:
            raise LengthMismatch(f"header packet of {len(data)} bytes")
        _, hi, lo, count, total, digest = _HEADER_FMT.unpack(data)
        try:
            return SegmentHeader((hi << 64) | lo, count, total, digest)
        except ValueError as exc:
            raise InvalidPacket(str(exc)) from exc
    raise UnknownPacketType(f"packet type 0x{tag:02x}")


def replicate_and_shuffle(header: SegmentHeader, segments: list[Segment],
                          cfg: CutterConfig) -> list[bytes]:
    """Encode header and segments, repeat ``redundancy_factor`` times, shuffle."""
    encoded = [encode_packet(header)] + [encode_packet(s) for s in segments]
    packets = encoded * cfg.redundancy_factor
    random.Random(cfg.shuffle_seed).shuffle(packets)
    return packets

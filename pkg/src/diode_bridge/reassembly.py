"""Reconstruction of payloads from deduplicated, reordered packets."""

from __future__ import annotations

import logging
import threading
from collections import OrderedDict
from dataclasses import dataclass, field

from .segmentation import Segment, SegmentHeader, checksum

log = logging.getLogger(__name__)


class ReassemblyError(Exception):
    pass


class ChecksumMismatch(ReassemblyError):
    pass


class InconsistentMessage(ReassemblyError):
    pass


class BufferFull(ReassemblyError):
    pass


@dataclass(frozen=True)
class ReassemblyConfig:
    stale_after: float = 30.0
    sweep_interval: float = 5.0
    max_entries: int = 10_000

    def __post_init__(self):
        if self.max_entries < 1:
            raise ValueError("max_entries must be positive")


@dataclass(frozen=True)
class ReassembledPayload:
    uuid: int
    payload: bytes


@dataclass
class _Entry:
    count: int
    first_seen: float
    last_activity: float
    header: SegmentHeader | None = None
    segments: dict[int, Segment] = field(default_factory=dict)

    def ordered(self) -> list[Segment]:
        return [self.segments[i] for i in sorted(self.segments)]


class ReassemblyBuffer:
    """Per-uuid packet collector.

    ``insert`` is meant to be called from a single receive thread; ``sweep``
    may be called concurrently from a timer thread.

    Uuids that completed (or failed) are remembered as tombstones until they
    have been quiet for ``stale_after`` so that the redundant copies still in
    flight are absorbed instead of reopening the message.
    """

    def __init__(self, config: ReassemblyConfig | None = None):
        self.config = config or ReassemblyConfig()
        self._entries: dict[int, _Entry] = {}
        self._done: OrderedDict[int, float] = OrderedDict()
        self._lock = threading.Lock()
        self.stats = {
            "released": 0,
            "duplicates": 0,
            "late_duplicates": 0,
            "checksum_failures": 0,
            "inconsistent": 0,
            "buffer_full": 0,
            "expired": 0,
        }

    def __len__(self):
        with self._lock:
            return len(self._entries)

    def __contains__(self, uuid: int) -> bool:
        with self._lock:
            return uuid in self._entries

    def _tombstone(self, uuid: int, now: float) -> None:
        self._done[uuid] = now
        self._done.move_to_end(uuid)
        # bounded by a multiple of max_entries; oldest tombstones go first
        while len(self._done) > 4 * self.config.max_entries:
            self._done.popitem(last=False)

    def insert(self, packet: Segment | SegmentHeader, now: float
               ) -> ReassembledPayload | None:
        with self._lock:
            uuid = packet.uuid
            if uuid in self._done:
                self._done[uuid] = now
                self.stats["late_duplicates"] += 1
                return None

            entry = self._entries.get(uuid)
            if entry is None:
                if len(self._entries) >= self.config.max_entries:
                    self.stats["buffer_full"] += 1
                    raise BufferFull(f"{len(self._entries)} partial messages held")
                entry = _Entry(count=packet.count, first_seen=now, last_activity=now)
                self._entries[uuid] = entry
            entry.last_activity = now

            if packet.count != entry.count:
                del self._entries[uuid]
                self.stats["inconsistent"] += 1
                raise InconsistentMessage(
                    f"uuid {uuid:032x}: count {packet.count} != {entry.count}")

            if isinstance(packet, SegmentHeader):
                if entry.header is not None:
                    if entry.header != packet:
                        del self._entries[uuid]
                        self.stats["inconsistent"] += 1
                        raise InconsistentMessage(f"uuid {uuid:032x}: conflicting headers")
                    self.stats["duplicates"] += 1
                    return None
                entry.header = packet
            elif packet.index in entry.segments:
                self.stats["duplicates"] += 1
                return None
            else:
                entry.segments[packet.index] = packet

            if entry.header is None or len(entry.segments) < entry.count:
                return None
            return self._complete(uuid, entry, now)

    def _complete(self, uuid: int, entry: _Entry, now: float) -> ReassembledPayload:
        del self._entries[uuid]
        self._tombstone(uuid, now)
        header = entry.header
        data = b"".join(s.payload for s in entry.ordered())
        if len(data) < header.total_length:
            self.stats["checksum_failures"] += 1
            raise ChecksumMismatch(
                f"uuid {uuid:032x}: {len(data)} bytes < total_length {header.total_length}")
        data = data[:header.total_length]
        if checksum(data) != header.checksum:
            self.stats["checksum_failures"] += 1
            log.warning("checksum mismatch uuid=%032x segments=%d bytes=%d",
                        uuid, entry.count, len(data))
            raise ChecksumMismatch(f"uuid {uuid:032x}: checksum mismatch")
        self.stats["released"] += 1
        return ReassembledPayload(uuid, data)

    def _discard(self, uuid: int, now: float) -> None:
        entry = self._entries.pop(uuid)
        log.warning("discarded message uuid=%032x segments=%d/%d header=%s age=%.1fs",
                    uuid, len(entry.segments), entry.count,
                    entry.header is not None, now - entry.first_seen)

    def sweep(self, now: float, everything: bool = False) -> list[int]:
        """Drop partial messages idle for longer than ``stale_after``.

        ``everything=True`` drops all partial messages (used at shutdown).
        """
        stale = self.config.stale_after
        with self._lock:
            expired = [uuid for uuid, entry in self._entries.items()
                       if everything or now - entry.last_activity > stale]
            for uuid in expired:
                self._discard(uuid, now)
            self.stats["expired"] += len(expired)
            for uuid, seen in list(self._done.items()):
                if now - seen > stale:
                    del self._done[uuid]
        return expired

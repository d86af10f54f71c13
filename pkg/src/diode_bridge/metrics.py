"""Thread-safe counters and the periodic METRICS line."""

from __future__ import annotations

import json
import logging
import sys
import threading
import time
from typing import Callable, TextIO


class Counters:
    def __init__(self, *names: str):
        self._lock = threading.Lock()
        self._values: dict[str, int] = {n: 0 for n in names}

    def incr(self, name: str, n: int = 1) -> None:
        with self._lock:
            self._values[name] = self._values.get(name, 0) + n

    def __getitem__(self, name: str) -> int:
        with self._lock:
            return self._values.get(name, 0)

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return dict(self._values)


def _rates(current: dict, previous: dict, dt: float) -> dict:
    out = {}
    for name, cur in current.items():
        prev = previous.get(name, {})
        out[name] = {k: round((v - prev.get(k, 0)) / dt, 2) for k, v in cur.items()}
    return out


class MetricsReporter:
    """Writes one ``METRICS {json}`` line per interval.

    ``sources`` maps a section name to a zero-argument callable returning a
    snapshot.  Broker snapshots get per-exchange rates computed from the
    difference with the previous snapshot.
    """

    def __init__(self, sources: dict[str, Callable[[], dict]], interval: float = 10.0,
                 stream: TextIO | None = None):
        self.sources = sources
        self.interval = interval
        self.stream = stream or sys.stderr
        self._prev: dict[str, dict] = {}
        self._prev_t = time.monotonic()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def collect(self) -> dict:
        now = time.monotonic()
        dt = max(now - self._prev_t, 1e-9)
        line: dict = {}
        for name, source in self.sources.items():
            snap = source()
            if "exchanges" in snap:
                prev = self._prev.get(name, {}).get("exchanges", {})
                snap = dict(snap, exchange_rates=_rates(snap["exchanges"], prev, dt))
            self._prev[name] = snap
            line[name] = snap
        self._prev_t = now
        return line

    def emit(self) -> dict:
        line = self.collect()
        print("METRICS " + json.dumps(line, sort_keys=True), file=self.stream, flush=True)
        return line

    def start(self) -> "MetricsReporter":
        self._prev_t = time.monotonic()
        for name, source in self.sources.items():
            self._prev[name] = source()
        self._thread = threading.Thread(target=self._run, name="metrics", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2)

    def _run(self) -> None:
        while not self._stop.wait(self.interval):
            try:
                self.emit()
            except Exception:
                logging.getLogger(__name__).exception("metrics dump failed")

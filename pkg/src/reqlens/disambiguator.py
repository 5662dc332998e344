"""Identifier-keyed start/end matching over interleaved trace event streams.

Worker threads interleave syscalls and events carry only the pid, so request
boundaries cannot be paired positionally. Matching is driven entirely by the
request identifier: a start-kind event stores (pid, id) -> start timestamp, the
matching end-kind event computes the latency and releases the key. Identifier
reuse rules (an fd or stream cannot be reassigned while in flight) make this
sound even when many requests overlap.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Tuple

from .errors import CalibrationInconclusive
from .events import ProbeKind, RequestId, RequestRecord, TraceEvent


class ProtocolPattern(enum.Enum):
    """Which event pair delimits a request, and what keys the pair."""

    #: start=accept return, end=close entry, key=fd (one connection per request)
    HTTP1_ACCEPT_CLOSE = "http1-accept-close"
    #: start=first read of a cycle, end=sendmsg, key=fd (persistent connections,
    #: closures deferred and performed in bulk)
    HTTP1_READ_SENDMSG = "http1-read-sendmsg"
    #: one stream per socket: identical mechanics to HTTP1_ACCEPT_CLOSE
    GRPC_SOCKET_PER_STREAM = "grpc-socket"
    #: start=stream constructor, end=trailing-metadata completion,
    #: key=(transport, stream)
    GRPC_MULTIPLEXED = "grpc-mux"
    #: calibrate per pid from the first window of events
    AUTO = "auto"


_START_KIND = {
    ProtocolPattern.HTTP1_ACCEPT_CLOSE: ProbeKind.ACCEPT_RETURN,
    ProtocolPattern.GRPC_SOCKET_PER_STREAM: ProbeKind.ACCEPT_RETURN,
    ProtocolPattern.GRPC_MULTIPLEXED: ProbeKind.STREAM_CTOR,
}

_END_KIND = {
    ProtocolPattern.HTTP1_ACCEPT_CLOSE: ProbeKind.CLOSE_ENTRY,
    ProtocolPattern.GRPC_SOCKET_PER_STREAM: ProbeKind.CLOSE_ENTRY,
    ProtocolPattern.GRPC_MULTIPLEXED: ProbeKind.TRAILING_META_DONE,
}

# kinds that can begin a request under some pattern
_CALIBRATION_START_KINDS = frozenset(
    {ProbeKind.ACCEPT_RETURN, ProbeKind.STREAM_CTOR, ProbeKind.READ_ENTRY}
)

DEFAULT_REORDER_WINDOW_NS = 10_000_000  # 10 ms of event time
DEFAULT_CALIBRATION_WINDOW = 1000
DEFAULT_OPEN_TABLE_CAPACITY = 65_536


@dataclass
class MatchStats:
    """Monotonic anomaly and progress counters. Snapshots are safe to share."""

    matched: int = 0
    unmatched_end: int = 0
    duplicate_start: int = 0
    dropped_reorder: int = 0
    pattern_switches: int = 0
    table_evicted: int = 0

    def copy(self) -> "MatchStats":
        return replace(self)


def calibrate(window: Iterable[TraceEvent]) -> ProtocolPattern:
    """Select the protocol pattern that explains a calibration window.

    Stream constructor events decide multiplexed transport immediately.
    Otherwise the deferred-close signature is tested: if completed
    read->sendmsg cycles on accept-opened fds (with no close in between)
    outnumber accept->close pairs, closures are being deferred and the I/O
    pair is the boundary; else the plain accept/close lifecycle wins.

    Raises CalibrationInconclusive when the window has no start-kind events.
    """
    events = list(window)
    if any(ev.kind is ProbeKind.STREAM_CTOR for ev in events):
        return ProtocolPattern.GRPC_MULTIPLEXED
    if not any(ev.kind in _CALIBRATION_START_KINDS for ev in events):
        raise CalibrationInconclusive("no start-kind events in calibration window")

    opened: set = set()  # keys opened by an accept within the window
    in_flight: set = set()  # accepted, not yet closed
    reading: set = set()  # keys inside a read cycle with no close since
    cycles = 0
    pairs = 0
    for ev in events:
        key = (ev.pid, ev.rid)
        if ev.kind is ProbeKind.ACCEPT_RETURN:
            opened.add(key)
            in_flight.add(key)
        elif ev.kind is ProbeKind.CLOSE_ENTRY:
            if key in in_flight:
                in_flight.discard(key)
                pairs += 1
            reading.discard(key)
        elif ev.kind is ProbeKind.READ_ENTRY and key in opened:
            reading.add(key)
        elif ev.kind is ProbeKind.SENDMSG_ENTRY and key in reading:
            reading.discard(key)
            cycles += 1
    if cycles > pairs:
        return ProtocolPattern.HTTP1_READ_SENDMSG
    return ProtocolPattern.HTTP1_ACCEPT_CLOSE


class Disambiguator:
    """Streams trace events into matched request records.

    Events pass through a bounded reorder buffer sorted by timestamp (trace
    pipes interleave CPUs, so arrival order can invert), then feed the active
    pattern's matcher. Anomalies are counted, never raised: partial traces and
    orphan events are normal operating conditions.

    One instance per traced pid is the intended deployment; state is keyed by
    (pid, identifier) throughout, so a shared instance also behaves correctly.
    """

    def __init__(
        self,
        pattern: ProtocolPattern = ProtocolPattern.AUTO,
        *,
        reorder_window_ns: int = DEFAULT_REORDER_WINDOW_NS,
        calibration_window: int = DEFAULT_CALIBRATION_WINDOW,
        open_table_capacity: int = DEFAULT_OPEN_TABLE_CAPACITY,
    ):
        if reorder_window_ns < 0:
            raise ValueError("reorder_window_ns must be >= 0")
        if calibration_window < 1:
            raise ValueError("calibration_window must be >= 1")
        if open_table_capacity < 1:
            raise ValueError("open_table_capacity must be >= 1")
        self.configured_pattern = pattern
        self.reorder_window_ns = reorder_window_ns
        self.calibration_window = calibration_window
        self.open_table_capacity = open_table_capacity

        self._stats = MatchStats()
        self._heap: List[Tuple[int, int, TraceEvent]] = []
        self._seq = 0  # arrival counter, breaks timestamp ties stably
        self._max_ts = -1
        # (pid, rid) -> start ts, insertion order = age for capacity eviction
        self._open: Dict[Tuple[int, RequestId], int] = {}
        # (pid, fd-id) -> first read ts of the current cycle
        self._cycles: Dict[Tuple[int, RequestId], int] = {}
        self._pid_pattern: Dict[int, ProtocolPattern] = {}
        self._pending: Dict[int, List[TraceEvent]] = {}
        self._pending_target: Dict[int, int] = {}

    @property
    def stats(self) -> MatchStats:
        return self._stats.copy()

    def active_pattern(self, pid: int) -> Optional[ProtocolPattern]:
        """Pattern currently matching this pid; None while auto-calibrating."""
        return self._pid_pattern.get(pid)

    def ingest(self, event: TraceEvent) -> List[RequestRecord]:
        """Feed one event; returns records completed by it (possibly deferred
        releases from the reorder buffer)."""
        heapq.heappush(self._heap, (event.timestamp, self._seq, event))
        self._seq += 1
        if event.timestamp > self._max_ts:
            self._max_ts = event.timestamp
        return self._release(self._max_ts - self.reorder_window_ns)

    def flush(self) -> List[RequestRecord]:
        """Drain the reorder buffer and force pending calibrations at end of
        stream."""
        records = self._release(None)
        for pid in list(self._pending):
            records.extend(self._calibrate_pid(pid, force=True))
        return records

    def ingest_all(self, events: Iterable[TraceEvent]) -> List[RequestRecord]:
        """Convenience: ingest a whole finite stream and flush."""
        records: List[RequestRecord] = []
        for ev in events:
            records.extend(self.ingest(ev))
        records.extend(self.flush())
        return records

    # -- reorder release --------------------------------------------------

    def _release(self, watermark: Optional[int]) -> List[RequestRecord]:
        records: List[RequestRecord] = []
        heap = self._heap
        while heap and (watermark is None or heap[0][0] <= watermark):
            _, _, ev = heapq.heappop(heap)
            records.extend(self._process(ev))
        return records

    def _process(self, event: TraceEvent) -> List[RequestRecord]:
        pattern = self._pid_pattern.get(event.pid)
        if pattern is None:
            if self.configured_pattern is not ProtocolPattern.AUTO:
                pattern = self.configured_pattern
                self._pid_pattern[event.pid] = pattern
            else:
                buf = self._pending.setdefault(event.pid, [])
                buf.append(event)
                target = self._pending_target.get(event.pid, self.calibration_window)
                if len(buf) >= target:
                    return self._calibrate_pid(event.pid, force=False)
                return []
        return self._dispatch(pattern, event)

    def _calibrate_pid(self, pid: int, force: bool) -> List[RequestRecord]:
        buf = self._pending.get(pid, [])
        try:
            selected = calibrate(buf)
        except CalibrationInconclusive:
            if force:
                # end of stream with nothing to match against; drop the buffer
                self._pending.pop(pid, None)
                self._pending_target.pop(pid, None)
                return []
            # stay in AUTO and extend the window
            self._pending_target[pid] = len(buf) + self.calibration_window
            return []
        self._pid_pattern[pid] = selected
        self._stats.pattern_switches += 1
        self._pending.pop(pid, None)
        self._pending_target.pop(pid, None)
        # re-process the calibration window under the selected pattern so no
        # requests observed during calibration are lost
        records: List[RequestRecord] = []
        for ev in buf:
            records.extend(self._dispatch(selected, ev))
        return records

    # -- pattern matchers --------------------------------------------------

    def _dispatch(self, pattern: ProtocolPattern, event: TraceEvent) -> List[RequestRecord]:
        if pattern is ProtocolPattern.HTTP1_READ_SENDMSG:
            return self._step_read_sendmsg(event)
        if event.kind is _START_KIND[pattern]:
            self._on_start((event.pid, event.rid), event.timestamp)
            return []
        if event.kind is _END_KIND[pattern]:
            return self._on_end((event.pid, event.rid), event.timestamp, event.pid)
        return []  # auxiliary kind under this pattern

    def _on_start(self, key: Tuple[int, RequestId], ts: int) -> None:
        table = self._open
        if key in table:
            # identifier reappeared while in flight: its release was not
            # observed; keeping the stale start would inflate the latency
            self._stats.duplicate_start += 1
            del table[key]
        elif len(table) >= self.open_table_capacity:
            oldest = next(iter(table))
            del table[oldest]
            self._stats.table_evicted += 1
        table[key] = ts

    def _on_end(
        self, key: Tuple[int, RequestId], end_ts: int, pid: int
    ) -> List[RequestRecord]:
        start_ts = self._open.pop(key, None)
        if start_ts is None:
            self._stats.unmatched_end += 1
            return []
        if end_ts < start_ts:
            # inversion survived the reorder window; never fabricate a latency
            self._stats.dropped_reorder += 1
            return []
        self._stats.matched += 1
        return [RequestRecord(start_ts=start_ts, latency=end_ts - start_ts, pid=pid)]

    def _step_read_sendmsg(self, event: TraceEvent) -> List[RequestRecord]:
        key = (event.pid, event.rid)
        if event.kind is ProbeKind.READ_ENTRY:
            # first read of a cycle wins; later reads of the same request keep
            # the original start
            self._cycles.setdefault(key, event.timestamp)
            return []
        if event.kind is ProbeKind.SENDMSG_ENTRY:
            start_ts = self._cycles.pop(key, None)
            if start_ts is None:
                self._stats.unmatched_end += 1
                return []
            if event.timestamp < start_ts:
                self._stats.dropped_reorder += 1
                return []
            self._stats.matched += 1
            return [
                RequestRecord(
                    start_ts=start_ts,
                    latency=event.timestamp - start_ts,
                    pid=event.pid,
                )
            ]
        if event.kind is ProbeKind.CLOSE_ENTRY:
            self._cycles.pop(key, None)  # connection teardown, no record
            return []
        return []

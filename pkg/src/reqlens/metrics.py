"""Per-target latency history and the QoS query API.

Each traced pid owns a sliding window of the most recent latencies (100k by
default). Throughput, latest and average latency answer in O(1) via direct
indexing and a running sum; one maintained percentile answers in O(log n) from
a pair of ordered multisets partitioned at the percentile rank. Arbitrary
percentiles scan the window.
"""

from __future__ import annotations

import math
import threading
from collections import deque
from fractions import Fraction
from typing import Callable, Deque, Dict, List, Optional, Tuple

from sortedcontainers import SortedList

from .disambiguator import MatchStats
from .errors import (
    CapabilityError,
    DuplicateTargetError,
    NoDataError,
    NotTracedError,
    UndefinedRateError,
)
from .events import RequestRecord
from .ring import DEFAULT_RING_BYTES, RecordRing

DEFAULT_HISTORY_CAPACITY = 100_000
DEFAULT_MAINTAINED_PERCENTILE = 99.0


def nearest_rank(p: float, n: int) -> int:
    """1-indexed nearest-rank position of percentile p among n samples.

    p is interpreted at decimal precision (99.9 means exactly 999/1000), so the
    ceiling cannot be perturbed by binary float representation.
    """
    if not 0 < p <= 100:
        raise ValueError(f"percentile must be in (0, 100], got {p}")
    if n < 1:
        raise ValueError("n must be >= 1")
    return int(math.ceil(Fraction(str(p)) * n / 100))


class MetricsState:
    """Sliding-window latency statistics for one traced process.

    Invariants: the two multisets partition the window's latencies with
    max(low) <= min(high), len(low) equals the maintained percentile's rank,
    and the running sum is exact integer arithmetic over the window.
    """

    def __init__(
        self,
        capacity: int = DEFAULT_HISTORY_CAPACITY,
        maintained_percentile: float = DEFAULT_MAINTAINED_PERCENTILE,
    ):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if not 0 < maintained_percentile <= 100:
            raise ValueError("maintained_percentile must be in (0, 100]")
        self.capacity = capacity
        self.maintained_percentile = maintained_percentile
        self._history: Deque[Tuple[int, int]] = deque()  # (start_ts, latency)
        self._sum = 0
        self._low = SortedList()  # the rank(p, n) smallest latencies
        self._high = SortedList()  # the rest
        self._lock = threading.Lock()

    @property
    def n(self) -> int:
        return len(self._history)

    def absorb(self, record: RequestRecord) -> None:
        """Fold one record into the window, evicting the oldest at capacity."""
        with self._lock:
            self._history.append((record.start_ts, record.latency))
            self._sum += record.latency
            if len(self._history) > self.capacity:
                _, evicted = self._history.popleft()
                self._sum -= evicted
                self._remove(evicted)
            self._insert(record.latency)
            self._rebalance()

    def _insert(self, latency: int) -> None:
        if self._low and latency <= self._low[-1]:
            self._low.add(latency)
        else:
            self._high.add(latency)

    def _remove(self, latency: int) -> None:
        # a value <= max(low) cannot live in high (max(low) <= min(high));
        # for ties at the boundary removing the low copy keeps the partition
        if self._low and latency <= self._low[-1]:
            self._low.remove(latency)
        else:
            self._high.remove(latency)

    def _rebalance(self) -> None:
        k = nearest_rank(self.maintained_percentile, len(self._history))
        while len(self._low) > k:
            self._high.add(self._low.pop(-1))
        while len(self._low) < k:
            self._low.add(self._high.pop(0))

    # -- queries -----------------------------------------------------------

    def requests_per_second(self) -> float:
        """Window size divided by the start-timestamp span of the window."""
        with self._lock:
            n = len(self._history)
            if n == 0:
                raise NoDataError("no records absorbed yet")
            span_ns = self._history[-1][0] - self._history[0][0]
            if span_ns <= 0:
                raise UndefinedRateError(
                    f"window of {n} records spans zero time"
                )
            return n * 1e9 / span_ns

    def latest_latency(self) -> int:
        with self._lock:
            if not self._history:
                raise NoDataError("no records absorbed yet")
            return self._history[-1][1]

    def average_latency(self) -> float:
        with self._lock:
            n = len(self._history)
            if n == 0:
                raise NoDataError("no records absorbed yet")
            return self._sum / n

    def latency_percentile(self, p: float) -> int:
        """Nearest-rank percentile over the window.

        The maintained percentile reads max(low) directly; any other p is
        answered by a full scan of the window.
        """
        if not 0 < p <= 100:
            raise ValueError(f"percentile must be in (0, 100], got {p}")
        with self._lock:
            n = len(self._history)
            if n == 0:
                raise NoDataError("no records absorbed yet")
            if p == self.maintained_percentile:
                return self._low[-1]
            k = nearest_rank(p, n)
            return sorted(lat for _, lat in self._history)[k - 1]


class _PollThread(threading.Thread):
    """Background poll loop draining a target's ring into its state."""

    def __init__(self, engine: "MetricsEngine", pid: int, interval_s: float):
        super().__init__(name=f"reqlens-poll-{pid}", daemon=True)
        self._engine = engine
        self._pid = pid
        self._interval = interval_s
        self._stop = threading.Event()

    def run(self) -> None:
        while not self._stop.is_set():
            try:
                self._engine.poll_loop_step(self._pid)
            except NotTracedError:
                return
            self._stop.wait(self._interval)

    def stop(self) -> None:
        self._stop.set()


class TargetHandle:
    """Per-pid wiring: metrics state, record ring, optional match stats hook."""

    def __init__(self, pid: int, state: MetricsState, ring: RecordRing):
        self.pid = pid
        self.state = state
        self.ring = ring
        self.stats_source: Optional[Callable[[], MatchStats]] = None
        self.poll_thread: Optional[_PollThread] = None


def capture_backend_available() -> bool:
    """Whether an in-process kernel capture backend exists. Always False here:
    live capture runs in the separate capture component and feeds targets over
    the wire-record stream instead."""
    return False


class MetricsEngine:
    """Registry of traced targets and the metric query API.

    Queries and absorption synchronize per target, so every answer reflects a
    consistent window snapshot. Targets are fully independent.
    """

    def __init__(self):
        self._targets: Dict[int, TargetHandle] = {}
        self._lock = threading.Lock()
        self._history_capacity = DEFAULT_HISTORY_CAPACITY
        self._ring_bytes = DEFAULT_RING_BYTES

    def set_history_capacity(self, capacity: int) -> None:
        """Window size for targets started after this call."""
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self._history_capacity = capacity

    def set_ring_capacity(self, capacity_bytes: int) -> None:
        """Ring byte size for targets started after this call."""
        RecordRing(capacity_bytes)  # validate eagerly
        self._ring_bytes = capacity_bytes

    def start_tracing(
        self,
        pid: int,
        *,
        maintained_percentile: float = DEFAULT_MAINTAINED_PERCENTILE,
        history_capacity: Optional[int] = None,
        ring_capacity_bytes: Optional[int] = None,
        live: bool = False,
        poll_interval_s: Optional[float] = None,
    ) -> TargetHandle:
        """Register a target: allocates its state and ring, optionally starts
        a background poll loop.

        live=True asks for in-process kernel capture; without that backend (and
        with no replay source implied) this is a capability error.
        """
        if live and not capture_backend_available():
            raise CapabilityError(
                "no kernel capture backend in this process; run the capture "
                "component and feed records through the CLI 'live' command"
            )
        state = MetricsState(
            capacity=history_capacity or self._history_capacity,
            maintained_percentile=maintained_percentile,
        )
        ring = RecordRing(ring_capacity_bytes or self._ring_bytes)
        handle = TargetHandle(pid, state, ring)
        with self._lock:
            if pid in self._targets:
                raise DuplicateTargetError(f"pid {pid} is already traced")
            self._targets[pid] = handle
        if poll_interval_s is not None:
            handle.poll_thread = _PollThread(self, pid, poll_interval_s)
            handle.poll_thread.start()
        return handle

    def stop_tracing(self, pid: int) -> MetricsState:
        """Detach the target, drain its ring, return the final state."""
        with self._lock:
            handle = self._targets.get(pid)
            if handle is None:
                raise NotTracedError(f"pid {pid} is not traced")
        if handle.poll_thread is not None:
            handle.poll_thread.stop()
            handle.poll_thread.join()
        while True:
            batch = handle.ring.poll(1024)
            if not batch:
                break
            for record in batch:
                handle.state.absorb(record)
        with self._lock:
            self._targets.pop(pid, None)
        return handle.state

    def traced_pids(self) -> List[int]:
        with self._lock:
            return list(self._targets)

    def _handle(self, pid: int) -> TargetHandle:
        with self._lock:
            handle = self._targets.get(pid)
        if handle is None:
            raise NotTracedError(f"pid {pid} is not traced")
        return handle

    def handle(self, pid: int) -> TargetHandle:
        return self._handle(pid)

    def poll_loop_step(self, pid: int, max_batch: int = 1024) -> int:
        """Drain up to one batch from the pid's ring into its state."""
        handle = self._handle(pid)
        records = handle.ring.poll(max_batch)
        for record in records:
            handle.state.absorb(record)
        return len(records)

    # -- query API ----------------------------------------------------------

    def get_RPS(self, pid: int) -> float:
        return self._handle(pid).state.requests_per_second()

    def get_latest_latency(self, pid: int) -> int:
        return self._handle(pid).state.latest_latency()

    def get_average_latency(self, pid: int) -> float:
        return self._handle(pid).state.average_latency()

    def get_latency_percentile(self, pid: int, p: float) -> int:
        return self._handle(pid).state.latency_percentile(p)

    def get_match_stats(self, pid: int) -> MatchStats:
        handle = self._handle(pid)
        if handle.stats_source is None:
            return MatchStats()
        return handle.stats_source()

"""Deterministic multi-worker workload simulation with ground-truth boundaries.

Generates the interleaved event streams a traced request-response server would
produce, together with the true (start, end) of every request, so matching can
be validated exactly. Arrival and service defaults are synthetic desk-scale
stand-ins, not measurements of any production server.
"""

from __future__ import annotations

import dataclasses
import heapq
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

from .disambiguator import ProtocolPattern
from .errors import InvalidConfigError
from .events import FdId, ProbeKind, RequestId, StreamId, TraceEvent
from .metrics import nearest_rank

_NS_PER_S = 1_000_000_000
_NS_PER_MS = 1_000_000

_FD_PATTERNS = (
    ProtocolPattern.HTTP1_ACCEPT_CLOSE,
    ProtocolPattern.GRPC_SOCKET_PER_STREAM,
)


@dataclass
class SimConfig:
    """Knobs for one simulated run.

    Exactly one of rate_rps (open-loop Poisson arrivals) or closed_concurrency
    (closed-loop in-flight bound) must be set, and exactly one of duration_s or
    num_requests. Service times are lognormal around a median, or constant.
    """

    protocol: ProtocolPattern = ProtocolPattern.HTTP1_ACCEPT_CLOSE
    workers: int = 4
    rate_rps: Optional[float] = None
    closed_concurrency: Optional[int] = None
    duration_s: Optional[float] = None
    num_requests: Optional[int] = None
    service_dist: str = "lognormal"  # or "constant"
    service_ms: float = 2.0  # median (lognormal) or the constant value
    service_sigma: float = 0.5
    pid: int = 478966
    fd_base: int = 63  # lowest-available POSIX-style allocation starts here
    reads_per_request: int = 1
    bulk_close_at_end: bool = True  # persistent connections close in bulk at the end
    grpc_transports: int = 1
    grpc_stream_start: int = 1  # client-initiated streams are odd: 1, 3, 5, ...
    grpc_stream_stride: int = 2
    arrival_jitter_ns: int = 0  # models trace-pipe arrival inversion; 0 = in order
    client_network_offset_ms: float = 0.0  # constant client-side delta for reports
    emit_aux_events: bool = True
    emit_close_return: bool = True
    inject_orphan_ends: int = 0  # deliberate unmatched end events at trace start
    seed: int = 0

    def validate(self) -> None:
        if self.protocol is ProtocolPattern.AUTO:
            raise InvalidConfigError("simulation needs a concrete protocol pattern")
        if self.workers < 1:
            raise InvalidConfigError("workers must be >= 1")
        if (self.rate_rps is None) == (self.closed_concurrency is None):
            raise InvalidConfigError(
                "exactly one of rate_rps or closed_concurrency must be set"
            )
        if self.rate_rps is not None and not self.rate_rps > 0:
            raise InvalidConfigError("rate_rps must be > 0")
        if self.closed_concurrency is not None and self.closed_concurrency < 1:
            raise InvalidConfigError("closed_concurrency must be >= 1")
        if (self.duration_s is None) == (self.num_requests is None):
            raise InvalidConfigError(
                "exactly one of duration_s or num_requests must be set"
            )
        if self.duration_s is not None and not self.duration_s > 0:
            raise InvalidConfigError("duration_s must be > 0")
        if self.num_requests is not None and self.num_requests < 1:
            raise InvalidConfigError("num_requests must be >= 1")
        if self.service_dist not in ("lognormal", "constant"):
            raise InvalidConfigError(f"unknown service_dist {self.service_dist!r}")
        if not (self.service_ms > 0 and math.isfinite(self.service_ms)):
            raise InvalidConfigError("service_ms must be finite and > 0")
        if not (self.service_sigma >= 0 and math.isfinite(self.service_sigma)):
            raise InvalidConfigError("service_sigma must be finite and >= 0")
        if self.reads_per_request < 1:
            raise InvalidConfigError("reads_per_request must be >= 1")
        if self.grpc_transports < 1 or self.grpc_stream_stride < 1:
            raise InvalidConfigError("grpc transport/stride settings must be >= 1")
        if self.grpc_stream_start < 0:
            raise InvalidConfigError("grpc_stream_start must be >= 0")
        if self.arrival_jitter_ns < 0:
            raise InvalidConfigError("arrival_jitter_ns must be >= 0")
        if self.inject_orphan_ends < 0:
            raise InvalidConfigError("inject_orphan_ends must be >= 0")


@dataclass(frozen=True)
class TrueRequest:
    """Oracle-side truth for one request."""

    start_ts: int
    end_ts: int
    rid: RequestId
    worker: int

    @property
    def latency(self) -> int:
        return self.end_ts - self.start_ts


@dataclass
class GroundTruthLog:
    """True boundaries of every simulated request, for acceptance checks."""

    requests: List[TrueRequest] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.requests)

    def __iter__(self) -> Iterator[TrueRequest]:
        return iter(self.requests)

    def latency_multiset(self) -> Counter:
        return Counter((r.start_ts, r.latency) for r in self.requests)

    def latencies(self) -> List[int]:
        return [r.latency for r in self.requests]

    def rate_rps(self) -> float:
        """Count over start-timestamp span, the same formula the engine uses."""
        if len(self.requests) < 2:
            raise InvalidConfigError("need >= 2 requests for a ground-truth rate")
        starts = [r.start_ts for r in self.requests]
        span = max(starts) - min(starts)
        if span <= 0:
            raise InvalidConfigError("ground-truth span is zero")
        return len(self.requests) * 1e9 / span

    def percentile(self, p: float) -> int:
        lats = sorted(self.latencies())
        return lats[nearest_rank(p, len(lats)) - 1]


@dataclass
class _Job:
    """One request after arrival/service scheduling."""

    index: int
    arrive: int
    start: int  # service begins (worker picked it up)
    end: int
    worker: int


class _FdPool:
    """Lowest-available fd allocation; an fd returns to the pool only at its
    close timestamp (strictly before any reuse)."""

    def __init__(self, base: int):
        self._base = base
        self._next = base
        self._free: List[int] = []
        self._releases: List[Tuple[int, int]] = []  # (release_ts, fd)

    def acquire(self, now: int) -> int:
        while self._releases and self._releases[0][0] < now:
            _, fd = heapq.heappop(self._releases)
            heapq.heappush(self._free, fd)
        if self._free:
            return heapq.heappop(self._free)
        fd = self._next
        self._next += 1
        return fd

    def release_at(self, fd: int, ts: int) -> None:
        heapq.heappush(self._releases, (ts, fd))


def _schedule(config: SimConfig, rng: random.Random) -> List[_Job]:
    """Arrival generation plus FIFO service over the worker pool."""

    def service_ns() -> int:
        if config.service_dist == "constant" or config.service_sigma == 0:
            return max(1, int(round(config.service_ms * _NS_PER_MS)))
        sample = config.service_ms * math.exp(config.service_sigma * rng.gauss(0.0, 1.0))
        return max(1, int(round(sample * _NS_PER_MS)))

    limit_ns = (
        int(round(config.duration_s * _NS_PER_S)) if config.duration_s is not None else None
    )
    limit_n = config.num_requests
    workers = [(0, w) for w in range(config.workers)]  # (free_ts, worker index)
    heapq.heapify(workers)
    jobs: List[_Job] = []

    def admit(arrive: int) -> _Job:
        free_ts, w = heapq.heappop(workers)
        start = max(arrive, free_ts)
        end = start + service_ns()
        heapq.heappush(workers, (end, w))
        job = _Job(index=len(jobs), arrive=arrive, start=start, end=end, worker=w)
        jobs.append(job)
        return job

    if config.rate_rps is not None:
        mean_gap = _NS_PER_S / config.rate_rps
        t = 0
        while True:
            t += max(1, int(round(rng.expovariate(1.0) * mean_gap)))
            if limit_ns is not None and t > limit_ns:
                break
            admit(t)
            if limit_n is not None and len(jobs) >= limit_n:
                break
    else:
        # each virtual client issues its next request when the previous completes
        clients = [(1 + i, i) for i in range(config.closed_concurrency)]
        heapq.heapify(clients)
        while True:
            arrive, c = heapq.heappop(clients)
            if limit_ns is not None and arrive > limit_ns:
                break
            job = admit(arrive)
            if limit_n is not None and len(jobs) >= limit_n:
                break
            heapq.heappush(clients, (job.end + 1, c))
    if not jobs:
        raise InvalidConfigError("configuration produced zero requests")
    return jobs


def _spread(start: int, end: int, count: int) -> List[int]:
    """count timestamps strictly inside [start, end], evenly spaced."""
    if count <= 0:
        return []
    step = max(1, (end - start) // (count + 1))
    return [min(end, start + step * (i + 1)) for i in range(count)]


def simulate(config: SimConfig) -> Tuple[List[TraceEvent], GroundTruthLog]:
    """Generate one trace and its ground truth. Deterministic per seed."""
    config.validate()
    rng = random.Random(config.seed)
    jobs = _schedule(config, rng)
    pid = config.pid

    staged: List[Tuple[int, int, TraceEvent]] = []  # (ts, gen seq, event)
    seq = 0

    def emit(ts: int, kind: ProbeKind, rid: RequestId, payload_len: Optional[int] = None,
             worker: Optional[int] = None) -> None:
        nonlocal seq
        tid = None if worker is None else 100_000 + worker
        staged.append(
            (ts, seq, TraceEvent(timestamp=ts, pid=pid, kind=kind, rid=rid,
                                 tid=tid, payload_len=payload_len))
        )
        seq += 1

    truth = GroundTruthLog()

    for i in range(config.inject_orphan_ends):
        if config.protocol is ProtocolPattern.GRPC_MULTIPLEXED:
            emit(i, ProbeKind.TRAILING_META_DONE, StreamId(transport=2**32, stream=2 * i + 1))
        elif config.protocol is ProtocolPattern.HTTP1_READ_SENDMSG:
            emit(i, ProbeKind.SENDMSG_ENTRY, FdId(config.fd_base + 100_000 + i))
        else:
            emit(i, ProbeKind.CLOSE_ENTRY, FdId(config.fd_base + 100_000 + i))

    if config.protocol in _FD_PATTERNS:
        pool = _FdPool(config.fd_base)
        for job in jobs:
            fd = pool.acquire(job.arrive)
            rid = FdId(fd)
            emit(job.arrive, ProbeKind.ACCEPT_RETURN, rid, worker=job.worker)
            if config.emit_aux_events:
                emit(job.start, ProbeKind.RECV_ENTRY, rid, payload_len=17, worker=job.worker)
                emit(max(job.start, job.end - 1000), ProbeKind.WRITEV_ENTRY, rid,
                     worker=job.worker)
            emit(job.end, ProbeKind.CLOSE_ENTRY, rid, worker=job.worker)
            if config.emit_close_return:
                emit(job.end + 500, ProbeKind.CLOSE_RETURN, FdId(0), worker=job.worker)
            pool.release_at(fd, job.end)
            truth.requests.append(
                TrueRequest(start_ts=job.arrive, end_ts=job.end, rid=rid, worker=job.worker)
            )

    elif config.protocol is ProtocolPattern.HTTP1_READ_SENDMSG:
        # one persistent connection per worker, accepted just before first use
        first_start: dict = {}
        last_end: dict = {}
        for job in jobs:
            first_start.setdefault(job.worker, job.start)
            last_end[job.worker] = max(last_end.get(job.worker, 0), job.end)
        fds = {w: config.fd_base + idx for idx, w in enumerate(sorted(first_start))}
        for w in sorted(first_start):
            emit(max(0, first_start[w] - 1000), ProbeKind.ACCEPT_RETURN, FdId(fds[w]),
                 worker=w)
        for job in jobs:
            rid = FdId(fds[job.worker])
            emit(job.start, ProbeKind.READ_ENTRY, rid, payload_len=17, worker=job.worker)
            for ts in _spread(job.start, job.end, config.reads_per_request - 1):
                emit(ts, ProbeKind.READ_ENTRY, rid, worker=job.worker)
            emit(job.end, ProbeKind.SENDMSG_ENTRY, rid, payload_len=17, worker=job.worker)
            truth.requests.append(
                TrueRequest(start_ts=job.start, end_ts=job.end, rid=rid, worker=job.worker)
            )
        trace_end = max(job.end for job in jobs)
        for w in sorted(first_start):
            close_ts = (trace_end if config.bulk_close_at_end else last_end[w]) + 1000
            emit(close_ts, ProbeKind.CLOSE_ENTRY, FdId(fds[w]), worker=w)
            if config.emit_close_return:
                emit(close_ts + 500, ProbeKind.CLOSE_RETURN, FdId(0), worker=w)

    elif config.protocol is ProtocolPattern.GRPC_MULTIPLEXED:
        next_stream = [config.grpc_stream_start] * config.grpc_transports
        for job in jobs:
            t = job.index % config.grpc_transports
            stream = next_stream[t]
            next_stream[t] += config.grpc_stream_stride  # ids never reused per transport
            rid = StreamId(transport=t + 1, stream=stream)
            emit(job.arrive, ProbeKind.STREAM_CTOR, rid, worker=job.worker)
            if config.emit_aux_events:
                transport_fd = FdId(config.fd_base + t)
                emit(job.start, ProbeKind.RECV_ENTRY, transport_fd, payload_len=17,
                     worker=job.worker)
                emit(max(job.start, job.end - 1000), ProbeKind.SEND_ENTRY, transport_fd,
                     worker=job.worker)
            emit(job.end, ProbeKind.TRAILING_META_DONE, rid, worker=job.worker)
            truth.requests.append(
                TrueRequest(start_ts=job.arrive, end_ts=job.end, rid=rid, worker=job.worker)
            )
    else:  # pragma: no cover - validate() rejects AUTO
        raise InvalidConfigError(f"unsupported protocol {config.protocol}")

    if config.arrival_jitter_ns > 0:
        staged.sort(key=lambda item: (item[0] + rng.randint(0, config.arrival_jitter_ns),
                                      item[1]))
    else:
        staged.sort(key=lambda item: (item[0], item[1]))
    return [ev for _, _, ev in staged], truth


@dataclass
class SweepRun:
    rate_rps: float
    events: List[TraceEvent]
    truth: GroundTruthLog


def sweep(config: SimConfig, rates: Sequence[float]) -> List[SweepRun]:
    """One open-loop run per rate, with per-rate derived seeds."""
    if not rates:
        raise InvalidConfigError("rates must be nonempty")
    runs = []
    for i, rate in enumerate(rates):
        cfg = dataclasses.replace(
            config,
            rate_rps=float(rate),
            closed_concurrency=None,
            seed=config.seed + 7919 * (i + 1),
        )
        events, truth = simulate(cfg)
        runs.append(SweepRun(rate_rps=float(rate), events=events, truth=truth))
    return runs

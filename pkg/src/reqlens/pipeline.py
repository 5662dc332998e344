"""End-to-end wiring: event stream -> matcher -> record ring -> metrics engine.

Shared by the CLI commands and the acceptance suite. Polling is interleaved
with production the way a live deployment would run, so ring capacity and drop
accounting are exercised for real.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

from .disambiguator import Disambiguator, MatchStats, ProtocolPattern
from .events import RequestRecord, TraceEvent
from .metrics import MetricsEngine


@dataclass
class PipelineResult:
    engine: MetricsEngine
    matcher: Disambiguator
    records: List[RequestRecord] = field(default_factory=list)
    ring_dropped: int = 0
    pids: List[int] = field(default_factory=list)

    @property
    def stats(self) -> MatchStats:
        return self.matcher.stats


def run_trace(
    events: Iterable[TraceEvent],
    pattern: ProtocolPattern = ProtocolPattern.AUTO,
    *,
    engine: Optional[MetricsEngine] = None,
    reorder_window_ns: Optional[int] = None,
    calibration_window: Optional[int] = None,
    open_table_capacity: Optional[int] = None,
    history_capacity: Optional[int] = None,
    ring_capacity_bytes: Optional[int] = None,
    maintained_percentile: float = 99.0,
    poll_every: int = 256,
) -> PipelineResult:
    """Run a finite event stream through the full pipeline.

    Targets are registered lazily per pid encountered; every target stays
    registered afterwards so metric queries remain answerable.
    """
    matcher_kwargs = {}
    if reorder_window_ns is not None:
        matcher_kwargs["reorder_window_ns"] = reorder_window_ns
    if calibration_window is not None:
        matcher_kwargs["calibration_window"] = calibration_window
    if open_table_capacity is not None:
        matcher_kwargs["open_table_capacity"] = open_table_capacity
    matcher = Disambiguator(pattern, **matcher_kwargs)
    engine = engine or MetricsEngine()
    result = PipelineResult(engine=engine, matcher=matcher)
    handles: Dict[int, object] = {}

    def deliver(records: List[RequestRecord]) -> None:
        for record in records:
            handle = handles.get(record.pid)
            if handle is None:
                handle = engine.start_tracing(
                    record.pid,
                    maintained_percentile=maintained_percentile,
                    history_capacity=history_capacity,
                    ring_capacity_bytes=ring_capacity_bytes,
                )
                handle.stats_source = lambda: matcher.stats
                handles[record.pid] = handle
                result.pids.append(record.pid)
            result.records.append(record)
            handle.ring.push(record)

    seen = 0
    for event in events:
        deliver(matcher.ingest(event))
        seen += 1
        if seen % poll_every == 0:
            for pid in result.pids:
                while engine.poll_loop_step(pid):
                    pass
    deliver(matcher.flush())
    for pid in result.pids:
        while engine.poll_loop_step(pid):
            pass
    result.ring_dropped = sum(handles[pid].ring.dropped for pid in result.pids)
    return result

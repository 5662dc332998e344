"""reqlens: per-request latency and throughput reconstructed from kernel-level
trace events, with no application instrumentation and no client feedback.

The pipeline: trace events (captured, replayed, or simulated) are matched into
request records by identifier-keyed boundary pairing, streamed over a bounded
record ring, and aggregated into queryable QoS metrics per traced process.
"""

from .disambiguator import (
    Disambiguator,
    MatchStats,
    ProtocolPattern,
    calibrate,
)
from .errors import (
    CalibrationInconclusive,
    CapabilityError,
    DuplicateTargetError,
    InvalidConfigError,
    MalformedRecordError,
    NoDataError,
    NotTracedError,
    ReqLensError,
    TraceParseError,
    UndefinedRateError,
)
from .events import (
    WIRE_RECORD_SIZE,
    FdId,
    ProbeKind,
    RequestId,
    RequestRecord,
    StreamId,
    TraceEvent,
    wire_decode,
    wire_encode,
)
from .metrics import (
    DEFAULT_HISTORY_CAPACITY,
    MetricsEngine,
    MetricsState,
    nearest_rank,
)
from .pipeline import PipelineResult, run_trace
from .ring import DEFAULT_RING_BYTES, RecordRing
from .simulator import GroundTruthLog, SimConfig, SweepRun, TrueRequest, simulate, sweep
from .traceio import TraceLine, parse_line, read_trace, write_trace

__version__ = "0.1.0"

__all__ = [
    "CalibrationInconclusive",
    "CapabilityError",
    "DEFAULT_HISTORY_CAPACITY",
    "DEFAULT_RING_BYTES",
    "Disambiguator",
    "DuplicateTargetError",
    "FdId",
    "GroundTruthLog",
    "InvalidConfigError",
    "MalformedRecordError",
    "MatchStats",
    "MetricsEngine",
    "MetricsState",
    "NoDataError",
    "NotTracedError",
    "PipelineResult",
    "ProbeKind",
    "ProtocolPattern",
    "RecordRing",
    "ReqLensError",
    "RequestId",
    "RequestRecord",
    "SimConfig",
    "StreamId",
    "SweepRun",
    "TraceEvent",
    "TraceLine",
    "TraceParseError",
    "TrueRequest",
    "UndefinedRateError",
    "WIRE_RECORD_SIZE",
    "calibrate",
    "nearest_rank",
    "parse_line",
    "read_trace",
    "run_trace",
    "simulate",
    "sweep",
    "wire_decode",
    "wire_encode",
    "write_trace",
]

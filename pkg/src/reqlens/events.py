"""Canonical event and record types shared by capture, replay, simulation and metrics.

All timestamps are integer nanoseconds on a single monotonic clock per trace.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Optional, Union

from .errors import MalformedRecordError

_U32_MAX = 2**32 - 1
_U64_MAX = 2**64 - 1

# Fixed little-endian record layout: start_ts u64, latency u64, pid u32, reserved u32.
# This is the contract shared with the in-kernel capture component.
WIRE_RECORD_SIZE = 24
_WIRE = struct.Struct("<QQII")


class ProbeKind(enum.Enum):
    """Which probe fired. Each kind plays one role per protocol pattern:
    start signal, end signal, or auxiliary."""

    ACCEPT_RETURN = "accept_return"
    CLOSE_ENTRY = "close_entry"
    CLOSE_RETURN = "close_return"
    READ_ENTRY = "read_entry"
    READV_ENTRY = "readv_entry"
    WRITEV_ENTRY = "writev_entry"
    SEND_ENTRY = "send_entry"
    SENDMSG_ENTRY = "sendmsg_entry"
    RECV_ENTRY = "recv_entry"
    STREAM_CTOR = "stream_ctor"
    TRAILING_META_DONE = "trailing_meta_done"


#: Kinds whose identifier is a socket file descriptor.
SOCKET_KINDS = frozenset(
    {
        ProbeKind.ACCEPT_RETURN,
        ProbeKind.CLOSE_ENTRY,
        ProbeKind.CLOSE_RETURN,
        ProbeKind.READ_ENTRY,
        ProbeKind.READV_ENTRY,
        ProbeKind.WRITEV_ENTRY,
        ProbeKind.SEND_ENTRY,
        ProbeKind.SENDMSG_ENTRY,
        ProbeKind.RECV_ENTRY,
    }
)

#: Kinds whose identifier is a (transport, stream) pair from a multiplexed connection.
STREAM_KINDS = frozenset({ProbeKind.STREAM_CTOR, ProbeKind.TRAILING_META_DONE})


@dataclass(frozen=True)
class FdId:
    """Request identifier: a socket file descriptor."""

    fd: int

    def __post_init__(self):
        # -1 is a syscall error return, never an identifier
        if self.fd < 0:
            raise ValueError(f"fd must be >= 0, got {self.fd}")


@dataclass(frozen=True)
class StreamId:
    """Request identifier: stream within a multiplexed transport connection.

    Stream ids are unique per live transport, so the pair identifies one
    in-flight request.
    """

    transport: int  # opaque 64-bit connection id
    stream: int  # 32-bit stream id

    def __post_init__(self):
        if not 0 <= self.transport <= _U64_MAX:
            raise ValueError(f"transport id out of u64 range: {self.transport}")
        if not 0 <= self.stream <= _U32_MAX:
            raise ValueError(f"stream id out of u32 range: {self.stream}")


RequestId = Union[FdId, StreamId]


@dataclass(frozen=True)
class TraceEvent:
    """One probe firing.

    tid is optional: live syscall capture only preserves the process id, which
    is the whole reason identifier matching exists. The simulator may fill it
    for debugging, but matching logic must never read it.
    """

    timestamp: int  # ns since capture epoch
    pid: int
    kind: ProbeKind
    rid: RequestId
    tid: Optional[int] = None
    payload_len: Optional[int] = None

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError(f"timestamp must be >= 0, got {self.timestamp}")
        if self.kind in STREAM_KINDS:
            if not isinstance(self.rid, StreamId):
                raise ValueError(f"{self.kind.name} requires a StreamId identifier")
        elif not isinstance(self.rid, FdId):
            raise ValueError(f"{self.kind.name} requires an FdId identifier")


@dataclass(frozen=True)
class RequestRecord:
    """A completed request: start timestamp plus computed latency."""

    start_ts: int  # ns
    latency: int  # ns
    pid: int

    def __post_init__(self):
        if not 0 <= self.start_ts <= _U64_MAX:
            raise ValueError(f"start_ts out of u64 range: {self.start_ts}")
        if self.latency < 0:
            raise ValueError(f"latency must be >= 0, got {self.latency}")
        if self.start_ts + self.latency > _U64_MAX:
            raise ValueError("start_ts + latency overflows u64")
        if not 0 <= self.pid <= _U32_MAX:
            raise ValueError(f"pid out of u32 range: {self.pid}")

    @property
    def end_ts(self) -> int:
        return self.start_ts + self.latency


def wire_encode(record: RequestRecord) -> bytes:
    """Encode a record into its fixed 24-byte little-endian layout."""
    return _WIRE.pack(record.start_ts, record.latency, record.pid, 0)


def wire_decode(buf: bytes) -> RequestRecord:
    """Decode a 24-byte buffer produced by :func:`wire_encode`.

    The reserved tail word is ignored on read.
    """
    if len(buf) != WIRE_RECORD_SIZE:
        raise MalformedRecordError(
            f"wire record must be {WIRE_RECORD_SIZE} bytes, got {len(buf)}"
        )
    start_ts, latency, pid, _reserved = _WIRE.unpack(buf)
    return RequestRecord(start_ts=start_ts, latency=latency, pid=pid)

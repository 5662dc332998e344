import random

import pytest

from reqlens import (
    FdId,
    MalformedRecordError,
    ProbeKind,
    RequestRecord,
    StreamId,
    TraceEvent,
    WIRE_RECORD_SIZE,
    wire_decode,
    wire_encode,
)


def test_wire_encode_zero_record():
    assert wire_encode(RequestRecord(0, 0, 0)) == b"\x00" * 24


def test_wire_encode_layout():
    wire = wire_encode(RequestRecord(start_ts=1, latency=2, pid=3))
    assert wire == (
        b"\x01" + b"\x00" * 7 + b"\x02" + b"\x00" * 7 + b"\x03\x00\x00\x00" + b"\x00" * 4
    )
    assert len(wire) == WIRE_RECORD_SIZE == 24


def test_wire_decode_zero():
    assert wire_decode(b"\x00" * 24) == RequestRecord(0, 0, 0)


def test_wire_decode_inverse_of_encode():
    assert wire_decode(wire_encode(RequestRecord(5, 7, 9))) == RequestRecord(5, 7, 9)


def test_wire_reserved_ignored_on_read():
    wire = bytearray(wire_encode(RequestRecord(5, 7, 9)))
    wire[20:24] = b"\xff\xff\xff\xff"
    assert wire_decode(bytes(wire)) == RequestRecord(5, 7, 9)


@pytest.mark.parametrize("size", [0, 23, 25, 48])
def test_wire_decode_rejects_bad_length(size):
    with pytest.raises(MalformedRecordError):
        wire_decode(b"\x00" * size)


def test_wire_round_trip_random_records():
    rng = random.Random(20240)
    for _ in range(1000):
        start = rng.randrange(2**63)
        record = RequestRecord(
            start_ts=start,
            latency=rng.randrange(2**62),
            pid=rng.randrange(2**32),
        )
        assert wire_decode(wire_encode(record)) == record


def test_record_invariants():
    with pytest.raises(ValueError):
        RequestRecord(start_ts=-1, latency=0, pid=0)
    with pytest.raises(ValueError):
        RequestRecord(start_ts=0, latency=-5, pid=0)
    with pytest.raises(ValueError):
        RequestRecord(start_ts=2**64 - 1, latency=1, pid=0)  # end overflows
    with pytest.raises(ValueError):
        RequestRecord(start_ts=0, latency=0, pid=2**32)
    record = RequestRecord(start_ts=10, latency=4, pid=1)
    assert record.end_ts == 14


def test_fd_identifier_rejects_error_returns():
    with pytest.raises(ValueError):
        FdId(-1)
    assert FdId(0).fd == 0


def test_stream_identifier_ranges():
    StreamId(transport=2**64 - 1, stream=2**32 - 1)
    with pytest.raises(ValueError):
        StreamId(transport=2**64, stream=0)
    with pytest.raises(ValueError):
        StreamId(transport=0, stream=2**32)


def test_event_kind_and_identifier_must_agree():
    with pytest.raises(ValueError):
        TraceEvent(timestamp=0, pid=1, kind=ProbeKind.STREAM_CTOR, rid=FdId(3))
    with pytest.raises(ValueError):
        TraceEvent(timestamp=0, pid=1, kind=ProbeKind.CLOSE_ENTRY,
                   rid=StreamId(transport=1, stream=1))
    with pytest.raises(ValueError):
        TraceEvent(timestamp=-1, pid=1, kind=ProbeKind.CLOSE_ENTRY, rid=FdId(3))


def test_event_timestamp_ties_permitted():
    a = TraceEvent(timestamp=5, pid=1, kind=ProbeKind.ACCEPT_RETURN, rid=FdId(1))
    b = TraceEvent(timestamp=5, pid=1, kind=ProbeKind.CLOSE_ENTRY, rid=FdId(1))
    assert a.timestamp == b.timestamp  # multi-CPU capture produces ties

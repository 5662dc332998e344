import random

import pytest

from reqlens import (
    FdId,
    ProbeKind,
    StreamId,
    TraceEvent,
    TraceParseError,
    parse_line,
    read_trace,
    write_trace,
)

ACCEPT_LINE = (
    'tritonserver-479413 [008] d...1 13485159.107110: bpf_trace_printk: '
    'accept4: pid=478966 retval=63 buf="..."'
)
CLOSE_LINE = (
    "tritonserver-479405 [009] d...1 13485159.172001: bpf_trace_printk: "
    "close: pid=478966 fd=63"
)


def test_parse_accept_return_line():
    event = parse_line(ACCEPT_LINE)
    assert event is not None
    assert event.timestamp == 13_485_159_107_110_000
    assert event.pid == 478966
    assert event.tid == 479413
    assert event.kind is ProbeKind.ACCEPT_RETURN
    assert event.rid == FdId(63)


def test_parse_close_entry_line():
    event = parse_line(CLOSE_LINE)
    assert event is not None
    assert event.pid == 478966
    assert event.kind is ProbeKind.CLOSE_ENTRY
    assert event.rid == FdId(63)
    assert event.timestamp == 13_485_159_172_001_000


def test_parse_close_return_line():
    event = parse_line(
        "tritonserver-479405 [009] d...1 13485159.172009: bpf_trace_printk: "
        "close return: pid=478966 retval=0"
    )
    assert event is not None
    assert event.kind is ProbeKind.CLOSE_RETURN
    assert event.rid == FdId(0)


def test_parse_skips_non_matching_lines():
    assert parse_line("# a comment") is None
    assert parse_line("") is None
    assert parse_line("anything else entirely") is None
    # recognized grammar but unknown probe name
    assert parse_line(
        "srv-1 [000] d...1 1.000000: bpf_trace_printk: epoll_wait: pid=3 fd=2"
    ) is None


def test_parse_skips_error_returns():
    line = "srv-1 [000] d...1 1.000000: bpf_trace_printk: accept4: pid=3 retval=-1"
    assert parse_line(line) is None


def test_parse_len_attribute_with_spacing():
    # trace pipes emit both "len=17" and "len =17"
    event = parse_line(
        "srv-1 [000] d...1 1.500000: bpf_trace_printk: sendto: pid=3 fd=10 len =17"
    )
    assert event is not None
    assert event.kind is ProbeKind.SEND_ENTRY
    assert event.payload_len == 17


def test_parse_malformed_numeric_field_raises():
    line = "srv-1 [000] d...1 1.000000: bpf_trace_printk: close: pid=3 fd=banana"
    with pytest.raises(TraceParseError):
        parse_line(line)


def test_read_trace_sample_file(sample_trace_lines):
    events = list(read_trace(sample_trace_lines))
    assert len(events) == 13
    # arrival order is preserved, not sorted: the readv/close pair near the end
    # of the excerpt arrives timestamp-inverted
    kinds = [e.kind for e in events]
    assert kinds[6] is ProbeKind.READV_ENTRY
    assert kinds[7] is ProbeKind.CLOSE_ENTRY
    assert events[6].timestamp > events[7].timestamp


def test_read_trace_empty_input():
    assert list(read_trace([])) == []


def test_read_trace_error_names_line():
    lines = [
        CLOSE_LINE,
        "srv-1 [000] d...1 2.000000: bpf_trace_printk: close: pid=3 fd=oops",
    ]
    with pytest.raises(TraceParseError) as excinfo:
        list(read_trace(lines))
    assert excinfo.value.line_no == 2
    assert "line 2" in str(excinfo.value)


def _random_event(rng):
    kind = rng.choice(list(ProbeKind))
    ts = rng.randrange(10**15)
    pid = rng.randrange(1, 2**22)
    payload = rng.choice([None, rng.randrange(1, 10**6)])
    if kind in (ProbeKind.STREAM_CTOR, ProbeKind.TRAILING_META_DONE):
        rid = StreamId(transport=rng.randrange(2**40), stream=rng.randrange(2**31))
    else:
        rid = FdId(rng.randrange(2**20))
    return TraceEvent(timestamp=ts, pid=pid, kind=kind, rid=rid, payload_len=payload)


def test_write_read_round_trip_random_events():
    rng = random.Random(777)
    events = [_random_event(rng) for _ in range(500)]
    back = list(read_trace(write_trace(events)))
    assert len(back) == len(events)
    for original, parsed in zip(events, back):
        assert (original.timestamp, original.pid, original.kind, original.rid) == (
            parsed.timestamp,
            parsed.pid,
            parsed.kind,
            parsed.rid,
        )
        assert original.payload_len == parsed.payload_len


def test_write_trace_empty():
    assert write_trace([]) == []


def test_write_trace_accept_line_shape():
    event = TraceEvent(timestamp=1_500_000_000, pid=42, kind=ProbeKind.ACCEPT_RETURN,
                       rid=FdId(7))
    (line,) = write_trace([event])
    assert "accept4: pid=42 retval=7" in line
    assert "1.500000000" in line
    reparsed = parse_line(line)
    assert reparsed is not None
    assert reparsed.rid == FdId(7)
    assert reparsed.kind is ProbeKind.ACCEPT_RETURN

import os
import sys

import pytest

from reqlens import FdId, ProbeKind, StreamId, TraceEvent

sys.path.insert(0, os.path.dirname(__file__))  # make oracles importable

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
SAMPLE_TRACE = os.path.join(DATA_DIR, "sample_http1_trace.txt")

# acceptance-criterion lines, echoed after the run so capture cannot hide them
_acceptance_lines = []


def record_acceptance(line):
    _acceptance_lines.append(line)


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


def ev(ts, kind, fd=None, transport=None, stream=None, pid=1000, payload_len=None):
    """Compact TraceEvent builder for tests."""
    if transport is not None:
        rid = StreamId(transport=transport, stream=stream)
    else:
        rid = FdId(fd)
    return TraceEvent(timestamp=ts, pid=pid, kind=kind, rid=rid,
                      payload_len=payload_len)


def accept(ts, fd, pid=1000):
    return ev(ts, ProbeKind.ACCEPT_RETURN, fd=fd, pid=pid)


def close(ts, fd, pid=1000):
    return ev(ts, ProbeKind.CLOSE_ENTRY, fd=fd, pid=pid)


def read(ts, fd, pid=1000):
    return ev(ts, ProbeKind.READ_ENTRY, fd=fd, pid=pid)


def sendmsg(ts, fd, pid=1000):
    return ev(ts, ProbeKind.SENDMSG_ENTRY, fd=fd, pid=pid)


def ctor(ts, transport, stream, pid=1000):
    return ev(ts, ProbeKind.STREAM_CTOR, transport=transport, stream=stream, pid=pid)


def done(ts, transport, stream, pid=1000):
    return ev(ts, ProbeKind.TRAILING_META_DONE, transport=transport, stream=stream,
              pid=pid)


@pytest.fixture
def sample_trace_lines():
    with open(SAMPLE_TRACE) as fh:
        return fh.readlines()

"""Parsing and serialization of the text trace-pipe line format.

Grammar per line:

    <comm>-<tid> [<cpu>] <flags> <secs>.<frac>: bpf_trace_printk: <name>: pid=<n> \
(fd=<n>|retval=<n>|transport=<n> stream=<n>)[ len=<n>][ buf="..."]

``close return`` lines carry ``retval`` instead of ``fd``. Unrecognized lines
are skipped, never errors: extra probes get pruned, not forbidden. The parser
preserves arrival order and never sorts; cross-CPU timestamp inversion is
handled downstream by the matcher's reorder window.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Optional

from .errors import TraceParseError
from .events import FdId, ProbeKind, StreamId, TraceEvent

_LINE_RE = re.compile(
    r"^\s*(?P<comm>\S+)-(?P<tid>\d+)\s+\[(?P<cpu>\d+)\]\s+(?P<flags>\S+)\s+"
    r"(?P<ts>\d+\.\d+):\s+bpf_trace_printk:\s+(?P<name>[a-z0-9_]+(?: return)?):\s*"
    r"(?P<attrs>.*)$"
)

# key=value pairs; whitespace tolerated around '=' (trace pipes emit e.g. "len =17"),
# values either quoted strings with escapes or bare tokens
_ATTR_RE = re.compile(r'(\w+)\s*=\s*("(?:[^"\\]|\\.)*"|\S+)')

# syscall name -> (probe kind, attribute carrying the identifier)
_SYSCALL_TABLE = {
    "accept4": (ProbeKind.ACCEPT_RETURN, "retval"),
    "close": (ProbeKind.CLOSE_ENTRY, "fd"),
    "close return": (ProbeKind.CLOSE_RETURN, "retval"),
    "read": (ProbeKind.READ_ENTRY, "fd"),
    "readv": (ProbeKind.READV_ENTRY, "fd"),
    "writev": (ProbeKind.WRITEV_ENTRY, "fd"),
    "sendto": (ProbeKind.SEND_ENTRY, "fd"),
    "sendmsg": (ProbeKind.SENDMSG_ENTRY, "fd"),
    "recvfrom": (ProbeKind.RECV_ENTRY, "fd"),
}

# user-space probe names for multiplexed transports
_STREAM_TABLE = {
    "stream_ctor": ProbeKind.STREAM_CTOR,
    "trailing_metadata_done": ProbeKind.TRAILING_META_DONE,
}

_WRITE_NAMES = {kind: name for name, (kind, _) in _SYSCALL_TABLE.items()}
_WRITE_NAMES.update({kind: name for name, kind in _STREAM_TABLE.items()})


@dataclass
class TraceLine:
    """Lexical fields of one recognized trace-pipe line."""

    comm: str
    tid: int
    cpu: int
    flags: str
    timestamp_s: str  # decimal seconds, kept as text for lossless conversion
    syscall_name: str
    attrs: Dict[str, str]


def _timestamp_ns(text: str) -> int:
    """Exact decimal-seconds to integer nanoseconds, no float round-trip."""
    secs, _, frac = text.partition(".")
    frac = frac or "0"
    if len(frac) > 9:
        ns = int(frac[:9])
        if frac[9] >= "5":
            ns += 1
        return int(secs) * 1_000_000_000 + ns
    return int(secs) * 1_000_000_000 + int(frac.ljust(9, "0"))


def split_line(line: str) -> Optional[TraceLine]:
    """Lex one line; None when the line does not match the grammar."""
    m = _LINE_RE.match(line.rstrip("\n"))
    if m is None:
        return None
    attrs = {k: v for k, v in _ATTR_RE.findall(m.group("attrs"))}
    return TraceLine(
        comm=m.group("comm"),
        tid=int(m.group("tid")),
        cpu=int(m.group("cpu")),
        flags=m.group("flags"),
        timestamp_s=m.group("ts"),
        syscall_name=m.group("name"),
        attrs=attrs,
    )


def _int_attr(parsed: TraceLine, key: str) -> int:
    raw = parsed.attrs[key]
    try:
        return int(raw)
    except ValueError:
        raise TraceParseError(
            f"{parsed.syscall_name}: malformed numeric field {key}={raw!r}"
        ) from None


def parse_line(line: str) -> Optional[TraceEvent]:
    """Map one text line to a TraceEvent, or None for lines to skip.

    Skipped: lines not matching the grammar, unrecognized probe names,
    recognized probes missing their identifier attribute, and error returns
    (negative retval), which carry no identifier. A recognized probe with a
    present but non-numeric field raises TraceParseError.
    """
    parsed = split_line(line)
    if parsed is None:
        return None

    name = parsed.syscall_name
    if name in _SYSCALL_TABLE:
        kind, id_key = _SYSCALL_TABLE[name]
    elif name in _STREAM_TABLE:
        kind, id_key = _STREAM_TABLE[name], None
    else:
        return None

    if "pid" not in parsed.attrs:
        raise TraceParseError(f"{name}: missing pid attribute")
    pid = _int_attr(parsed, "pid")

    if kind in (ProbeKind.STREAM_CTOR, ProbeKind.TRAILING_META_DONE):
        if "transport" not in parsed.attrs or "stream" not in parsed.attrs:
            return None
        rid = StreamId(
            transport=_int_attr(parsed, "transport"),
            stream=_int_attr(parsed, "stream"),
        )
    else:
        if id_key not in parsed.attrs:
            return None
        fd = _int_attr(parsed, id_key)
        if fd < 0:
            return None  # error return, not an identifier
        rid = FdId(fd)

    payload_len = _int_attr(parsed, "len") if "len" in parsed.attrs else None
    return TraceEvent(
        timestamp=_timestamp_ns(parsed.timestamp_s),
        pid=pid,
        kind=kind,
        rid=rid,
        tid=parsed.tid,
        payload_len=payload_len,
    )


def read_trace(lines: Iterable[str]) -> Iterator[TraceEvent]:
    """Parse a line sequence into events, skips removed, arrival order kept.

    Parse errors are re-raised with the 1-based line number.
    """
    for line_no, line in enumerate(lines, start=1):
        try:
            event = parse_line(line)
        except TraceParseError as exc:
            raise TraceParseError(str(exc), line_no=line_no, line=line) from None
        if event is not None:
            yield event


def format_event(event: TraceEvent, comm: str = "server") -> str:
    """Render one event as a trace-pipe line that parse_line maps back."""
    name = _WRITE_NAMES[event.kind]
    if event.kind in (ProbeKind.STREAM_CTOR, ProbeKind.TRAILING_META_DONE):
        assert isinstance(event.rid, StreamId)
        ident = f"transport={event.rid.transport} stream={event.rid.stream}"
    elif event.kind in (ProbeKind.ACCEPT_RETURN, ProbeKind.CLOSE_RETURN):
        assert isinstance(event.rid, FdId)
        ident = f"retval={event.rid.fd}"
    else:
        assert isinstance(event.rid, FdId)
        ident = f"fd={event.rid.fd}"
    length = f" len={event.payload_len}" if event.payload_len is not None else ""
    tid = event.tid if event.tid is not None else event.pid
    secs, ns = divmod(event.timestamp, 1_000_000_000)
    return (
        f"{comm}-{tid} [000] d...1 {secs}.{ns:09d}: "
        f"bpf_trace_printk: {name}: pid={event.pid} {ident}{length}"
    )


def write_trace(events: Iterable[TraceEvent], comm: str = "server") -> List[str]:
    """Serialize events to text lines; round-trips (ts, pid, kind, rid)."""
    return [format_event(ev, comm=comm) for ev in events]

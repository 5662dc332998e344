#!/usr/bin/env python3
"""Attach the in-kernel capture programs to a pid and stream 24-byte request
records to stdout.

Requires root, a ring-buffer-capable kernel (5.8+), and BCC
(apt: python3-bpfcc). Counter totals go to stderr on exit. The stdout stream
is the wire-record contract consumed by `reqlens live`.

Exit codes: 0 clean stop, 2 usage error, 3 capability missing.
"""

import argparse
import ctypes
import os
import signal
import sys

try:
    from bcc import BPF
except ImportError:
    BPF = None

CAPTURE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
BPF_DIR = os.path.join(CAPTURE_DIR, "bpf")
INCLUDE_DIR = os.path.join(CAPTURE_DIR, "include")

COUNTER_NAMES = ["matched", "unmatched_end", "duplicate_start", "dropped_order",
                 "table_full"]

# Known gRPC C-core symbol spellings per release line; override with
# --symbol-ctor/--symbol-done when the target build differs (see README).
GRPC_SYMBOLS = {
    "v1.46+": ("grpc_chttp2_parsing_accept_stream", "grpc_chttp2_complete_closure_step"),
    "v1.30-1.45": ("init_stream", "grpc_chttp2_mark_stream_closed"),
}


def parse_args():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pid", type=int, required=True, help="process to trace")
    parser.add_argument("--pattern", default="http1-accept-close",
                        choices=["auto", "http1-accept-close", "http1-read-sendmsg",
                                 "grpc-socket", "grpc-mux"])
    parser.add_argument("--binary", default=None,
                        help="target binary for uprobes (grpc-mux)")
    parser.add_argument("--symbol-ctor", default=GRPC_SYMBOLS["v1.46+"][0])
    parser.add_argument("--symbol-done", default=GRPC_SYMBOLS["v1.46+"][1])
    parser.add_argument("--table-capacity", type=int, default=65536)
    parser.add_argument("--ring-pages", type=int, default=32,
                        help="ring size in 4 KiB pages (32 = 128 KiB)")
    return parser.parse_args()


def capability_error(message):
    print(f"live_capture: {message}", file=sys.stderr)
    raise SystemExit(3)


def load_program(args):
    pattern = args.pattern
    if pattern == "auto":
        # in-kernel programs carry no calibrator; start from the plain
        # connection lifecycle and let the operator pick the fallback
        pattern = "http1-accept-close"
    cflags = [
        f"-I{INCLUDE_DIR}",
        f"-DTARGET_PID={args.pid}",
        f"-DTABLE_CAPACITY={args.table_capacity}",
        f"-DRING_PAGES={args.ring_pages}",
    ]
    if pattern == "grpc-mux":
        if not args.binary:
            capability_error("--binary is required for grpc-mux uprobes")
        source = os.path.join(BPF_DIR, "grpc_streams.c")
        bpf = BPF(src_file=source, cflags=cflags)
        bpf.attach_uprobe(name=args.binary, sym=args.symbol_ctor,
                          fn_name="on_stream_ctor", pid=args.pid)
        bpf.attach_uprobe(name=args.binary, sym=args.symbol_done,
                          fn_name="on_trailing_metadata_done", pid=args.pid)
        return bpf
    mode = 1 if pattern == "http1-read-sendmsg" else 0
    source = os.path.join(BPF_DIR, "socket_lifecycle.c")
    return BPF(src_file=source, cflags=cflags + [f"-DPATTERN_MODE={mode}"])


def main():
    args = parse_args()
    if BPF is None:
        capability_error("BCC (python3-bpfcc) is not installed")
    if os.geteuid() != 0:
        capability_error("loading eBPF programs requires root")

    try:
        bpf = load_program(args)
    except Exception as exc:  # BCC raises plain Exception on load failures
        capability_error(f"failed to load/attach probes: {exc}")

    out = sys.stdout.buffer
    stop = {"flag": False}

    def emit(_ctx, data, size):
        if size >= 24:
            out.write(ctypes.string_at(data, 24))
            out.flush()

    bpf["records"].open_ring_buffer(emit)

    def on_signal(_sig, _frame):
        stop["flag"] = True

    signal.signal(signal.SIGINT, on_signal)
    signal.signal(signal.SIGTERM, on_signal)
    print(f"live_capture: tracing pid {args.pid} ({args.pattern})", file=sys.stderr)
    while not stop["flag"]:
        try:
            bpf.ring_buffer_poll(timeout=200)
        except KeyboardInterrupt:
            break

    counters = bpf["match_counters"]
    totals = {}
    for i, name in enumerate(COUNTER_NAMES):
        try:
            totals[name] = counters[counters.Key(i)].value
        except KeyError:
            totals[name] = 0
    print("live_capture: " + " ".join(f"{k}={v}" for k, v in totals.items()),
          file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())

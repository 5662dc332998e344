"""Command-line pipeline runner.

Subcommands:
    simulate  sweep synthetic workloads through the pipeline, report accuracy
    replay    run a captured text trace through the pipeline
    watch     poll and print metrics from a paced simulation (demo SMR loop)
    live      consume records from the kernel capture component, if built

Exit codes: 0 success, 1 runtime error, 2 usage error. Set REQLENS_LOG to
debug/info/warning to adjust verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import subprocess
import sys
import threading
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence

from .disambiguator import ProtocolPattern
from .errors import CapabilityError, NoDataError, ReqLensError, UndefinedRateError
from .events import WIRE_RECORD_SIZE, wire_encode
from .metrics import MetricsEngine
from .pipeline import PipelineResult, run_trace
from .simulator import GroundTruthLog, SimConfig, simulate, sweep
from .traceio import read_trace, write_trace

log = logging.getLogger("reqlens")

_PROTOCOLS = {
    p.value: p
    for p in (
        ProtocolPattern.HTTP1_ACCEPT_CLOSE,
        ProtocolPattern.HTTP1_READ_SENDMSG,
        ProtocolPattern.GRPC_SOCKET_PER_STREAM,
        ProtocolPattern.GRPC_MULTIPLEXED,
    )
}
_PATTERNS = {p.value: p for p in ProtocolPattern}

_CSV_COLUMNS = [
    "rate_rps",
    "truth_rps",
    "measured_rps",
    "requests",
    "matched",
    "unmatched_end",
    "duplicate_start",
    "dropped_reorder",
    "ring_dropped",
    "p50_ms",
    "p95_ms",
    "p99_ms",
    "truth_p50_ms",
    "truth_p95_ms",
    "truth_p99_ms",
    "client_p95_ms",
]


@dataclass
class RunRow:
    rate_rps: float
    truth_rps: float
    measured_rps: float
    requests: int
    matched: int
    unmatched_end: int
    duplicate_start: int
    dropped_reorder: int
    ring_dropped: int
    p50_ms: float
    p95_ms: float
    p99_ms: float
    truth_p50_ms: float
    truth_p95_ms: float
    truth_p99_ms: float
    client_p95_ms: float

    def csv_values(self) -> List[str]:
        out = []
        for col in _CSV_COLUMNS:
            value = getattr(self, col)
            out.append(f"{value:.6f}" if isinstance(value, float) else str(value))
        return out


@dataclass
class RunReport:
    rows: List[RunRow]

    def to_csv(self) -> str:
        lines = [",".join(_CSV_COLUMNS)]
        lines.extend(",".join(row.csv_values()) for row in self.rows)
        return "\n".join(lines) + "\n"


def _duration_s(value) -> float:
    """Parse '10s', '500ms', '2m', or a bare number of seconds."""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip().lower()
    try:
        for suffix, scale in (("ms", 1e-3), ("s", 1.0), ("m", 60.0)):
            if text.endswith(suffix):
                return float(text[: -len(suffix)]) * scale
        return float(text)
    except ValueError:
        raise ValueError(f"cannot parse duration {value!r}") from None


def _parse_rates(value) -> List[float]:
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    parts = [p for p in str(value).replace(" ", "").split(",") if p]
    return [float(p) for p in parts]


def _sim_config(args: argparse.Namespace) -> SimConfig:
    duration = _duration_s(args.duration) if args.requests is None else None
    return SimConfig(
        protocol=_PROTOCOLS[args.protocol],
        workers=args.workers,
        rate_rps=1.0,  # overwritten per sweep rate
        duration_s=duration,
        num_requests=args.requests,
        service_dist=args.service_dist,
        service_ms=args.service_ms,
        service_sigma=args.service_sigma,
        pid=args.sim_pid,
        reads_per_request=args.reads_per_request,
        arrival_jitter_ns=int(round(args.jitter_ms * 1e6)),
        client_network_offset_ms=args.client_offset_ms,
        grpc_transports=args.grpc_transports,
        seed=args.seed,
    )


def _pipeline_kwargs(args: argparse.Namespace) -> dict:
    kwargs = {}
    if getattr(args, "reorder_window_ms", None) is not None:
        kwargs["reorder_window_ns"] = int(round(args.reorder_window_ms * 1e6))
    if getattr(args, "history_capacity", None) is not None:
        kwargs["history_capacity"] = args.history_capacity
    if getattr(args, "ring_bytes", None) is not None:
        kwargs["ring_capacity_bytes"] = args.ring_bytes
    if getattr(args, "percentile", None) is not None:
        kwargs["maintained_percentile"] = args.percentile
    return kwargs


def _percentile_ms(result: PipelineResult, pid: int, p: float) -> float:
    try:
        return result.engine.get_latency_percentile(pid, p) / 1e6
    except NoDataError:
        return float("nan")


def _build_row(rate: float, result: PipelineResult, truth: GroundTruthLog,
               client_offset_ms: float) -> RunRow:
    stats = result.stats
    pid = result.pids[0] if result.pids else None
    if pid is not None:
        try:
            measured_rps = result.engine.get_RPS(pid)
        except (NoDataError, UndefinedRateError):
            measured_rps = float("nan")
        p50, p95, p99 = (_percentile_ms(result, pid, p) for p in (50, 95, 99))
    else:
        measured_rps = p50 = p95 = p99 = float("nan")
    truth_p95_ms = truth.percentile(95) / 1e6
    return RunRow(
        rate_rps=rate,
        truth_rps=truth.rate_rps(),
        measured_rps=measured_rps,
        requests=len(truth),
        matched=stats.matched,
        unmatched_end=stats.unmatched_end,
        duplicate_start=stats.duplicate_start,
        dropped_reorder=stats.dropped_reorder,
        ring_dropped=result.ring_dropped,
        p50_ms=p50,
        p95_ms=p95,
        p99_ms=p99,
        truth_p50_ms=truth.percentile(50) / 1e6,
        truth_p95_ms=truth_p95_ms,
        truth_p99_ms=truth.percentile(99) / 1e6,
        client_p95_ms=truth_p95_ms + client_offset_ms,
    )


def _print_table(report: RunReport, out) -> None:
    headers = ["rate", "truth_rps", "meas_rps", "req", "match", "unmatch",
               "p95_ms", "truth_p95", "drops"]
    print(" ".join(f"{h:>10}" for h in headers), file=out)
    for r in report.rows:
        cells = [f"{r.rate_rps:10.1f}", f"{r.truth_rps:10.3f}", f"{r.measured_rps:10.3f}",
                 f"{r.requests:10d}", f"{r.matched:10d}", f"{r.unmatched_end:10d}",
                 f"{r.p95_ms:10.3f}", f"{r.truth_p95_ms:10.3f}", f"{r.ring_dropped:10d}"]
        print(" ".join(cells), file=out)


_GNUPLOT_TEMPLATE = """set datafile separator ','
set key left top
set term pngcairo size 900,380
set output '{prefix}_report.png'
set multiplot layout 1,2
set xlabel 'offered load (req/s)'
set ylabel 'p95 latency (ms)'
plot '{prefix}_latency.csv' skip 1 using 1:2 with linespoints title 'pipeline', \\
     '' skip 1 using 1:3 with linespoints title 'ground truth', \\
     '' skip 1 using 1:4 with linespoints title 'client view'
set xlabel 'ground-truth throughput (req/s)'
set ylabel 'measured throughput (req/s)'
plot '{prefix}_throughput.csv' skip 1 using 1:2 with points pt 7 title 'measured', \\
     x with lines dt 2 title 'ideal'
unset multiplot
"""


def _write_plot_data(report: RunReport, prefix: str) -> None:
    with open(f"{prefix}_latency.csv", "w") as fh:
        fh.write("rate_rps,p95_ms,truth_p95_ms,client_p95_ms\n")
        for r in report.rows:
            fh.write(f"{r.rate_rps:.6f},{r.p95_ms:.6f},{r.truth_p95_ms:.6f},"
                     f"{r.client_p95_ms:.6f}\n")
    with open(f"{prefix}_throughput.csv", "w") as fh:
        fh.write("truth_rps,measured_rps\n")
        for r in report.rows:
            fh.write(f"{r.truth_rps:.6f},{r.measured_rps:.6f}\n")
    with open(f"{prefix}.gp", "w") as fh:
        fh.write(_GNUPLOT_TEMPLATE.format(prefix=prefix))


def cmd_simulate(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    rates = _parse_rates(args.rates)
    if not rates:
        parser.error("--rates must list at least one rate")
    config = _sim_config(args)
    runs = sweep(config, rates)
    if args.trace_out:
        with open(args.trace_out, "w") as fh:
            for run in runs:
                for line in write_trace(run.events):
                    fh.write(line + "\n")
    rows = []
    for run in runs:
        result = run_trace(run.events, _PATTERNS[args.pattern], **_pipeline_kwargs(args))
        rows.append(_build_row(run.rate_rps, result, run.truth, args.client_offset_ms))
    report = RunReport(rows=rows)
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(report.to_csv())
    if args.plot_data:
        _write_plot_data(report, args.plot_data)
    if not args.quiet:
        _print_table(report, sys.stdout)
    return 0


def cmd_replay(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    with open(args.trace) as fh:
        events = list(read_trace(fh))
    result = run_trace(events, _PATTERNS[args.pattern], **_pipeline_kwargs(args))
    if args.records_out:
        with open(args.records_out, "wb") as fh:
            for record in result.records:
                fh.write(wire_encode(record))
    limit = args.max_print if args.max_print > 0 else len(result.records)
    for record in result.records[:limit]:
        print(f"pid={record.pid} start_ns={record.start_ts} "
              f"latency_ms={record.latency / 1e6:.3f}")
    if limit < len(result.records):
        print(f"... {len(result.records) - limit} more records")
    stats = result.stats
    print(f"events={len(events)} matched={stats.matched} "
          f"unmatched_end={stats.unmatched_end} duplicate_start={stats.duplicate_start} "
          f"dropped_reorder={stats.dropped_reorder} ring_dropped={result.ring_dropped}")
    for pid in result.pids:
        engine = result.engine
        n = engine.handle(pid).state.n
        try:
            avg = f"{engine.get_average_latency(pid) / 1e6:.3f}"
            p99 = f"{engine.get_latency_percentile(pid, 99) / 1e6:.3f}"
        except NoDataError:
            avg = p99 = "n/a"
        print(f"pid={pid} n={n} avg_ms={avg} p99_ms={p99}")
    if not result.pids:
        print("pid=n/a n=0")
    return 0


def _watch_line(engine: MetricsEngine, pid: Optional[int], elapsed: float,
                percentile: float) -> str:
    if pid is None:
        return f"t={elapsed:7.2f}s n=0 rps=n/a avg_ms=n/a p{percentile:g}_ms=n/a"
    try:
        rps = f"{engine.get_RPS(pid):.2f}"
    except (NoDataError, UndefinedRateError):
        rps = "n/a"
    try:
        n = engine.handle(pid).state.n
        avg = f"{engine.get_average_latency(pid) / 1e6:.3f}"
        pxx = f"{engine.get_latency_percentile(pid, percentile) / 1e6:.3f}"
    except NoDataError:
        n, avg, pxx = 0, "n/a", "n/a"
    return f"t={elapsed:7.2f}s n={n} rps={rps} avg_ms={avg} p{percentile:g}_ms={pxx}"


def cmd_watch(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    if args.interval <= 0:
        parser.error("--interval must be > 0")
    if args.speed <= 0:
        parser.error("--speed must be > 0")
    rates = _parse_rates(args.rates)
    if len(rates) != 1:
        parser.error("watch takes exactly one --rates value")
    config = _sim_config(args)
    config.rate_rps = rates[0]
    config.closed_concurrency = None
    events, _truth = simulate(config)

    from .disambiguator import Disambiguator

    engine = MetricsEngine()
    handle = engine.start_tracing(config.pid, maintained_percentile=args.percentile)
    matcher = Disambiguator(_PATTERNS[args.pattern], **{
        k: v for k, v in _pipeline_kwargs(args).items() if k == "reorder_window_ns"
    })
    handle.stats_source = lambda: matcher.stats
    done = threading.Event()

    def produce() -> None:
        wall0 = time.monotonic()
        t0 = events[0].timestamp if events else 0
        for event in events:
            lag = (event.timestamp - t0) / 1e9 / args.speed - (time.monotonic() - wall0)
            if lag > 0:
                time.sleep(lag)
            for record in matcher.ingest(event):
                handle.ring.push(record)
        for record in matcher.flush():
            handle.ring.push(record)
        done.set()

    producer = threading.Thread(target=produce, daemon=True)
    producer.start()
    wall0 = time.monotonic()
    try:
        while True:
            time.sleep(args.interval)
            engine.poll_loop_step(config.pid, max_batch=1_000_000)
            print(_watch_line(engine, config.pid, time.monotonic() - wall0,
                              args.percentile), flush=True)
            if done.is_set() and len(handle.ring) == 0:
                break
    except KeyboardInterrupt:
        pass
    engine.stop_tracing(config.pid)
    return 0


def _default_loader() -> str:
    env = os.environ.get("REQLENS_CAPTURE_LOADER")
    if env:
        return env
    return os.path.join("capture", "loader", "live_capture.py")


def cmd_live(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    if args.interval <= 0:
        parser.error("--interval must be > 0")
    loader = args.loader or _default_loader()
    if not os.path.exists(loader):
        raise CapabilityError(
            f"capture loader not found at {loader!r}; build the capture "
            "component or point --loader/REQLENS_CAPTURE_LOADER at it"
        )
    cmd = [sys.executable, loader, "--pid", str(args.pid), "--pattern", args.pattern]
    log.info("spawning capture loader: %s", " ".join(cmd))
    proc = subprocess.Popen(cmd, stdout=subprocess.PIPE)
    engine = MetricsEngine()
    handle = engine.start_tracing(args.pid, maintained_percentile=args.percentile)

    def pump() -> None:
        assert proc.stdout is not None
        while True:
            chunk = proc.stdout.read(WIRE_RECORD_SIZE)
            if len(chunk) < WIRE_RECORD_SIZE:
                return
            handle.ring.push_wire(chunk)

    pump_thread = threading.Thread(target=pump, daemon=True)
    pump_thread.start()
    wall0 = time.monotonic()
    try:
        while proc.poll() is None:
            time.sleep(args.interval)
            engine.poll_loop_step(args.pid, max_batch=1_000_000)
            print(_watch_line(engine, args.pid, time.monotonic() - wall0,
                              args.percentile), flush=True)
    except KeyboardInterrupt:
        proc.terminate()
    proc.wait()
    pump_thread.join(timeout=2.0)
    state = engine.stop_tracing(args.pid)
    if state.n == 0 and proc.returncode not in (0, None):
        raise CapabilityError(
            f"capture loader exited with status {proc.returncode} before "
            "producing records (missing privileges or eBPF support?)"
        )
    print(f"final n={state.n}")
    return 0 if proc.returncode == 0 else 1


def _add_sim_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--protocol", choices=sorted(_PROTOCOLS), default="http1-accept-close",
                     help="simulated server protocol lifecycle")
    sub.add_argument("--pattern", choices=sorted(_PATTERNS), default="auto",
                     help="matcher pattern (auto calibrates per pid)")
    sub.add_argument("--workers", type=int, default=8)
    sub.add_argument("--service-ms", type=float, default=2.0,
                     help="median (lognormal) or constant service time")
    sub.add_argument("--service-sigma", type=float, default=0.5)
    sub.add_argument("--service-dist", choices=["lognormal", "constant"],
                     default="lognormal")
    sub.add_argument("--reads-per-request", type=int, default=1)
    sub.add_argument("--grpc-transports", type=int, default=1)
    sub.add_argument("--jitter-ms", type=float, default=0.0,
                     help="bounded arrival-order jitter, models trace-pipe inversion")
    sub.add_argument("--client-offset-ms", type=float, default=0.0,
                     help="constant client-side network delta shown in reports")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--sim-pid", type=int, default=478966)
    sub.add_argument("--reorder-window-ms", type=float, default=None)
    sub.add_argument("--history-capacity", type=int, default=None)
    sub.add_argument("--ring-bytes", type=int, default=None)
    sub.add_argument("--percentile", type=float, default=99.0,
                     help="maintained percentile")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reqlens",
        description="Reconstructs per-request latency and throughput for "
                    "request-response servers from kernel-level trace events.",
    )
    parser.add_argument("--config", default=None,
                        help="JSON file of flag defaults (keys = flag dest names)")
    commands = parser.add_subparsers(dest="command", required=True)

    sim = commands.add_parser("simulate", help="sweep synthetic workloads")
    _add_sim_flags(sim)
    sim.add_argument("--rates", default="100", help="comma-separated request rates")
    sim.add_argument("--duration", default="10s", help="per-rate simulated duration")
    sim.add_argument("--requests", type=int, default=None,
                     help="per-rate request count (overrides --duration)")
    sim.add_argument("--csv", default=None, help="write the report as CSV")
    sim.add_argument("--plot-data", default=None,
                     help="prefix for plot-ready CSV files and a gnuplot script")
    sim.add_argument("--trace-out", default=None, help="export the trace as text")
    sim.add_argument("--quiet", action="store_true")
    sim.set_defaults(func=cmd_simulate)

    rep = commands.add_parser("replay", help="replay a captured text trace")
    rep.add_argument("trace", help="trace file in trace-pipe text format")
    rep.add_argument("--pattern", choices=sorted(_PATTERNS), default="auto")
    rep.add_argument("--reorder-window-ms", type=float, default=None)
    rep.add_argument("--history-capacity", type=int, default=None)
    rep.add_argument("--ring-bytes", type=int, default=None)
    rep.add_argument("--percentile", type=float, default=99.0)
    rep.add_argument("--records-out", default=None,
                     help="write matched records as raw 24-byte wire records")
    rep.add_argument("--max-print", type=int, default=0,
                     help="print at most N per-request records (0 = all)")
    rep.set_defaults(func=cmd_replay)

    watch = commands.add_parser("watch", help="periodic metrics from a paced simulation")
    _add_sim_flags(watch)
    watch.add_argument("--rates", default="100", help="single simulated request rate")
    watch.add_argument("--duration", default="5s")
    watch.add_argument("--requests", type=int, default=None)
    watch.add_argument("--interval", type=float, default=1.0, help="wall seconds")
    watch.add_argument("--speed", type=float, default=1.0,
                       help="time compression factor for the simulated source")
    watch.set_defaults(func=cmd_watch)

    live = commands.add_parser("live", help="consume the kernel capture component")
    live.add_argument("--pid", type=int, required=True)
    live.add_argument("--pattern", choices=sorted(_PATTERNS), default="auto")
    live.add_argument("--loader", default=None,
                      help="path to the capture loader script")
    live.add_argument("--interval", type=float, default=1.0)
    live.add_argument("--percentile", type=float, default=99.0)
    live.set_defaults(func=cmd_live)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    if "--config" not in argv:
        return
    path = argv[list(argv).index("--config") + 1]
    with open(path) as fh:
        config = json.load(fh)
    if not isinstance(config, dict):
        raise ReqLensError(f"config file {path!r} must hold a JSON object")
    subparsers = next(a for a in parser._actions
                      if isinstance(a, argparse._SubParsersAction))
    for sub in set(subparsers.choices.values()):
        valid = {action.dest for action in sub._actions}
        sub.set_defaults(**{k: v for k, v in config.items() if k in valid})


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(
        level=getattr(logging, os.environ.get("REQLENS_LOG", "WARNING").upper(),
                      logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except (OSError, json.JSONDecodeError, ReqLensError) as exc:
        print(f"reqlens: {exc}", file=sys.stderr)
        return 1
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except (ReqLensError, OSError, ValueError) as exc:
        print(f"reqlens: {exc}", file=sys.stderr)
        return 1


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()

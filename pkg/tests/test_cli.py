import json
import os

import pytest

from conftest import SAMPLE_TRACE
from reqlens import WIRE_RECORD_SIZE, wire_decode
from reqlens.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_simulate_single_rate_report(tmp_path, capsys):
    csv_path = tmp_path / "report.csv"
    code, out, _ = run_cli(
        capsys, "simulate", "--protocol", "http1-accept-close", "--rates", "100",
        "--duration", "2s", "--seed", "3", "--csv", str(csv_path),
    )
    assert code == 0
    lines = csv_path.read_text().strip().splitlines()
    assert len(lines) == 2  # header plus one row per swept rate
    header = lines[0].split(",")
    row = dict(zip(header, lines[1].split(",")))
    assert row["matched"] == row["requests"]
    assert row["unmatched_end"] == "0"
    assert abs(float(row["measured_rps"]) - float(row["truth_rps"])) <= \
        0.01 * float(row["truth_rps"])


def test_simulate_multiple_rates_row_count(tmp_path, capsys):
    csv_path = tmp_path / "report.csv"
    code, _, _ = run_cli(
        capsys, "simulate", "--protocol", "grpc-mux", "--rates", "50,100",
        "--duration", "1s", "--csv", str(csv_path), "--quiet",
    )
    assert code == 0
    assert len(csv_path.read_text().strip().splitlines()) == 3


def test_simulate_empty_rates_is_usage_error(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["simulate", "--rates", ""])
    assert excinfo.value.code == 2


def test_simulate_csv_deterministic(tmp_path, capsys):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for path in paths:
        code, _, _ = run_cli(
            capsys, "simulate", "--rates", "200", "--duration", "2s",
            "--seed", "11", "--csv", str(path), "--quiet",
        )
        assert code == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_simulate_trace_out_round_trips(tmp_path, capsys):
    trace_path = tmp_path / "trace.txt"
    code, _, _ = run_cli(
        capsys, "simulate", "--rates", "100", "--duration", "1s", "--seed", "4",
        "--trace-out", str(trace_path), "--quiet",
    )
    assert code == 0
    code, out, _ = run_cli(
        capsys, "replay", str(trace_path), "--pattern", "http1-accept-close",
        "--max-print", "1",
    )
    assert code == 0
    assert "unmatched_end=0" in out


def test_replay_sample_trace(capsys, tmp_path):
    records_path = tmp_path / "records.bin"
    code, out, _ = run_cli(
        capsys, "replay", SAMPLE_TRACE, "--pattern", "http1-accept-close",
        "--records-out", str(records_path),
    )
    assert code == 0
    assert "latency_ms=64.891" in out
    assert "matched=1" in out
    assert "unmatched_end=2" in out
    wire = records_path.read_bytes()
    assert len(wire) == WIRE_RECORD_SIZE
    record = wire_decode(wire)
    assert record.latency == 64_891_000
    assert record.pid == 478966


def test_replay_empty_file(tmp_path, capsys):
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    code, out, _ = run_cli(capsys, "replay", str(empty))
    assert code == 0
    assert "n=0" in out


def test_replay_missing_file(capsys):
    code, _, err = run_cli(capsys, "replay", "/no/such/trace.txt")
    assert code == 1
    assert "trace.txt" in err


def test_replay_malformed_field_names_line(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text(
        "srv-1 [000] d...1 1.000000: bpf_trace_printk: close: pid=3 fd=17\n"
        "srv-1 [000] d...1 2.000000: bpf_trace_printk: close: pid=3 fd=bogus\n"
    )
    code, _, err = run_cli(capsys, "replay", str(bad))
    assert code == 1
    assert "line 2" in err


def test_watch_reports_configured_rate(capsys):
    code, out, _ = run_cli(
        capsys, "watch", "--rates", "500", "--duration", "2s", "--interval", "0.1",
        "--speed", "20", "--seed", "5",
    )
    assert code == 0
    lines = [l for l in out.strip().splitlines() if l.startswith("t=")]
    assert lines
    final = lines[-1]
    rps = float(final.split("rps=")[1].split()[0])
    assert abs(rps - 500) <= 50  # sim-clock rate, pacing-independent
    assert "avg_ms=" in final and "p99_ms=" in final


def test_watch_rejects_bad_interval(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["watch", "--interval", "0"])
    assert excinfo.value.code == 2


def test_watch_no_data_prints_placeholders(capsys):
    # one request arriving at the very end: early polls have nothing to show
    code, out, _ = run_cli(
        capsys, "watch", "--rates", "1", "--duration", "0.5s", "--requests", "1",
        "--interval", "0.05", "--speed", "4", "--seed", "6",
    )
    assert code == 0
    assert "rps=n/a" in out or "n=1" in out


def test_live_without_loader_is_capability_error(capsys):
    code, _, err = run_cli(capsys, "live", "--pid", "123", "--loader",
                           "/no/such/loader.py")
    assert code == 1
    assert "loader" in err


def test_config_file_sets_defaults(tmp_path, capsys):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"rates": "75", "duration": "1s", "seed": 42,
                                  "quiet": True}))
    csv_path = tmp_path / "report.csv"
    code, _, _ = run_cli(capsys, "--config", str(config), "simulate",
                         "--csv", str(csv_path))
    assert code == 0
    row = csv_path.read_text().strip().splitlines()[1]
    assert row.startswith("75.0")


def test_config_file_must_be_object(tmp_path, capsys):
    config = tmp_path / "run.json"
    config.write_text("[1, 2]")
    code, _, err = run_cli(capsys, "--config", str(config), "simulate")
    assert code == 1
    assert "JSON object" in err

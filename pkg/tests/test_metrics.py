import random

import pytest

from oracles import WindowOracle, percentile_of
from reqlens import (
    CapabilityError,
    DuplicateTargetError,
    MetricsEngine,
    MetricsState,
    NoDataError,
    NotTracedError,
    RequestRecord,
    UndefinedRateError,
    nearest_rank,
)


def rec(start_ts, latency, pid=1):
    return RequestRecord(start_ts=start_ts, latency=latency, pid=pid)


def fill(state, latencies, start=0, step=1_000_000):
    for i, lat in enumerate(latencies):
        state.absorb(rec(start + i * step, lat))


# -- nearest rank -------------------------------------------------------------


def test_nearest_rank_basics():
    assert nearest_rank(99, 100) == 99
    assert nearest_rank(100, 3) == 3
    assert nearest_rank(50, 4) == 2
    assert nearest_rank(99.9, 1000) == 999  # decimal reading, no float ceil slip
    assert nearest_rank(0.1, 5) == 1


def test_nearest_rank_validation():
    with pytest.raises(ValueError):
        nearest_rank(0, 5)
    with pytest.raises(ValueError):
        nearest_rank(100.1, 5)
    with pytest.raises(ValueError):
        nearest_rank(50, 0)


# -- state absorb and window ---------------------------------------------------


def test_absorb_first_record():
    state = MetricsState(capacity=10)
    state.absorb(rec(0, 10))
    assert state.n == 1
    assert state.average_latency() == 10.0
    assert list(state._low) == [10]


def test_absorb_evicts_oldest_at_capacity():
    state = MetricsState(capacity=3)
    fill(state, [2, 4, 6])
    state.absorb(rec(3_000_000, 8))
    assert state.n == 3
    assert sorted(lat for _, lat in state._history) == [4, 6, 8]
    assert state._sum == 18
    assert state.average_latency() == 6.0


def test_multisets_track_sorted_window_at_every_step():
    rng = random.Random(11)
    capacity = 1000
    state = MetricsState(capacity=capacity, maintained_percentile=99)
    oracle = WindowOracle(capacity)
    for i in range(10_000):
        lat = rng.randrange(1, 1_000_000)
        state.absorb(rec(i * 1000, lat))
        oracle.absorb(i * 1000, lat)
        merged = sorted(list(state._low) + list(state._high))
        window = sorted(oracle.latencies())
        assert merged == window
        k = nearest_rank(99, oracle.n)
        assert len(state._low) == k
        if state._low and state._high:
            assert state._low[-1] <= state._high[0]
        assert state.latency_percentile(99) == window[k - 1]


def test_running_sum_exactness_no_drift():
    rng = random.Random(12)
    state = MetricsState(capacity=500)
    oracle = WindowOracle(500)
    for i in range(5_000):
        lat = rng.randrange(0, 2**40)
        state.absorb(rec(i, lat))
        oracle.absorb(i, lat)
        assert state._sum == sum(oracle.latencies())


# -- queries -------------------------------------------------------------------


def test_rps_formula():
    state = MetricsState()
    ns = 1_000_000_000
    for ts in (0, ns // 2, ns):
        state.absorb(rec(ts, 5))
    assert state.requests_per_second() == 3.0


def test_rps_errors():
    state = MetricsState()
    with pytest.raises(NoDataError):
        state.requests_per_second()
    state.absorb(rec(100, 5))
    with pytest.raises(UndefinedRateError):
        state.requests_per_second()  # single record spans zero time
    state.absorb(rec(100, 7))
    with pytest.raises(UndefinedRateError):
        state.requests_per_second()  # identical timestamps


def test_latest_latency():
    state = MetricsState()
    with pytest.raises(NoDataError):
        state.latest_latency()
    state.absorb(rec(0, 7))
    assert state.latest_latency() == 7
    state.absorb(rec(1, 9))
    assert state.latest_latency() == 9


def test_latest_latency_random_sequence_matches_oracle():
    rng = random.Random(13)
    state = MetricsState(capacity=100)
    oracle = WindowOracle(100)
    for i in range(1_000):
        lat = rng.randrange(10**6)
        state.absorb(rec(i, lat))
        oracle.absorb(i, lat)
        assert state.latest_latency() == oracle.latest()


def test_average_latency_examples():
    state = MetricsState()
    fill(state, [2, 4, 6])
    assert state.average_latency() == 4.0
    single = MetricsState()
    single.absorb(rec(0, 5))
    assert single.average_latency() == 5.0


def test_average_over_window_exact_after_many_evictions():
    rng = random.Random(14)
    capacity = 10_000
    state = MetricsState(capacity=capacity)
    log = []
    for i in range(50_000):
        lat = rng.randrange(10**9)
        log.append(lat)
        state.absorb(rec(i, lat))
    window = log[-capacity:]
    assert state.average_latency() == sum(window) / len(window)


def test_percentile_examples():
    state = MetricsState(maintained_percentile=99)
    ms = 1_000_000
    fill(state, [i * ms for i in range(1, 101)])
    assert state.latency_percentile(99) == percentile_of([i * ms for i in range(1, 101)], 99)
    assert state.latency_percentile(99) == 99 * ms

    single = MetricsState()
    single.absorb(rec(0, 5))
    for p in (0.5, 50, 99, 100):
        assert single.latency_percentile(p) == 5

    state3 = MetricsState()
    fill(state3, [3, 1, 2])
    assert state3.latency_percentile(100) == 3


def test_percentile_errors():
    state = MetricsState()
    with pytest.raises(NoDataError):
        state.latency_percentile(99)
    state.absorb(rec(0, 5))
    for bad in (0, -1, 100.5):
        with pytest.raises(ValueError):
            state.latency_percentile(bad)


def test_maintained_and_scan_paths_agree():
    rng = random.Random(15)
    state = MetricsState(capacity=2_000, maintained_percentile=95)
    lats = []
    for i in range(6_000):
        lat = rng.randrange(10**7)
        lats.append(lat)
        state.absorb(rec(i, lat))
    window = lats[-2_000:]
    assert state.latency_percentile(95) == percentile_of(window, 95)
    for p in (50, 90, 99, 99.9):
        assert state.latency_percentile(p) == percentile_of(window, p)


def test_window_semantics_only_last_capacity_records_matter():
    a = MetricsState(capacity=100)
    b = MetricsState(capacity=100)
    rng = random.Random(16)
    tail = [(i, rng.randrange(10**6)) for i in range(100)]
    for i in range(500):  # prefix that must be forgotten
        a.absorb(rec(i * 7, rng.randrange(10**6)))
    for ts, lat in tail:
        a.absorb(rec(10**9 + ts, lat))
        b.absorb(rec(10**9 + ts, lat))
    assert a.n == b.n
    assert a.average_latency() == b.average_latency()
    assert a.latest_latency() == b.latest_latency()
    assert a.requests_per_second() == b.requests_per_second()
    for p in (50, 99):
        assert a.latency_percentile(p) == b.latency_percentile(p)


# -- engine --------------------------------------------------------------------


def test_start_tracing_fresh_and_duplicate():
    engine = MetricsEngine()
    handle = engine.start_tracing(42)
    assert handle.state.n == 0
    with pytest.raises(DuplicateTargetError):
        engine.start_tracing(42)


def test_start_tracing_live_needs_backend():
    engine = MetricsEngine()
    with pytest.raises(CapabilityError):
        engine.start_tracing(42, live=True)


def test_feed_records_through_ring():
    engine = MetricsEngine()
    handle = engine.start_tracing(42)
    for i in range(3):
        handle.ring.push(rec(i, i + 1, pid=42))
    assert engine.poll_loop_step(42) == 3
    assert handle.state.n == 3
    assert engine.poll_loop_step(42) == 0


def test_stop_tracing_drains_pending_records():
    engine = MetricsEngine()
    handle = engine.start_tracing(42)
    for i in range(5):
        handle.ring.push(rec(i, 10, pid=42))
    state = engine.stop_tracing(42)
    assert state.n == 5
    with pytest.raises(NotTracedError):
        engine.stop_tracing(42)
    engine.start_tracing(42)  # pid usable again


def test_stop_tracing_zero_records():
    engine = MetricsEngine()
    engine.start_tracing(7)
    assert engine.stop_tracing(7).n == 0


def test_engine_query_api_routes_to_state():
    engine = MetricsEngine()
    handle = engine.start_tracing(9, maintained_percentile=99)
    ns = 1_000_000_000
    for i, lat in enumerate([10, 20, 30]):
        handle.ring.push(rec(i * ns, lat, pid=9))
    engine.poll_loop_step(9)
    assert engine.get_RPS(9) == pytest.approx(3 / 2)
    assert engine.get_latest_latency(9) == 30
    assert engine.get_average_latency(9) == 20.0
    assert engine.get_latency_percentile(9, 100) == 30
    with pytest.raises(NotTracedError):
        engine.get_RPS(10)


def test_get_match_stats_defaults_and_wiring():
    from reqlens import MatchStats

    engine = MetricsEngine()
    handle = engine.start_tracing(3)
    assert engine.get_match_stats(3) == MatchStats()
    stats = MatchStats(matched=5)
    handle.stats_source = lambda: stats
    assert engine.get_match_stats(3).matched == 5


def test_engine_capacity_setters_apply_to_new_targets():
    engine = MetricsEngine()
    engine.set_history_capacity(10)
    engine.set_ring_capacity(24 * 8)
    handle = engine.start_tracing(1)
    assert handle.state.capacity == 10
    assert handle.ring.slots == 8
    with pytest.raises(ValueError):
        engine.set_history_capacity(0)
    with pytest.raises(ValueError):
        engine.set_ring_capacity(10)


def test_poll_interleaving_is_linearizable():
    rng = random.Random(17)
    produced = [rec(i, rng.randrange(10**6), pid=5) for i in range(2_000)]
    engine = MetricsEngine()
    handle = engine.start_tracing(5)
    reference = MetricsState()
    i = 0
    while i < len(produced):
        burst = rng.randrange(1, 16)
        for record in produced[i:i + burst]:
            handle.ring.push(record)
        i += burst
        if rng.random() < 0.7:
            engine.poll_loop_step(5, max_batch=rng.randrange(1, 40))
    while engine.poll_loop_step(5):
        pass
    for record in produced:
        reference.absorb(record)
    assert handle.state.n == reference.n
    assert handle.state.average_latency() == reference.average_latency()
    assert handle.state.latency_percentile(99) == reference.latency_percentile(99)

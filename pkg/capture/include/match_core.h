#ifndef CAPTURE_MATCH_CORE_H
#define CAPTURE_MATCH_CORE_H

/*
 * Identifier-keyed request-boundary matching, shared verbatim between the
 * in-kernel programs and the user-space harness so both sides pair events
 * identically. A start probe stores (key -> timestamp); the matching end
 * probe computes the latency, emits one record, and releases the key.
 * Anomalies are counted, never fatal.
 *
 * The host must define, before including this header:
 *
 *   match_key_t                        key type accepted by the map ops
 *   MATCH_LOOKUP(key_ptr) -> u64*      NULL when absent
 *   MATCH_UPDATE(key_ptr, ts_ptr) -> int   0 on success, nonzero when full
 *   MATCH_DELETE(key_ptr)
 *   MATCH_EMIT(start_ts, latency, pid)
 *   MATCH_COUNT(counter)               one of enum match_counter
 *
 * All arithmetic is integer nanoseconds: no floating point in kernel context.
 */

#ifndef __always_inline
#define __always_inline inline __attribute__((always_inline))
#endif

enum match_counter {
    MATCH_COUNTER_MATCHED = 0,
    MATCH_COUNTER_UNMATCHED_END = 1,
    MATCH_COUNTER_DUPLICATE_START = 2,
    MATCH_COUNTER_DROPPED_ORDER = 3,
    MATCH_COUNTER_TABLE_FULL = 4,
    MATCH_COUNTER_MAX = 5,
};

/* Start signal (accept4 return / stream constructor). An identifier already
 * in flight means its release was not observed; the newest start wins, since
 * keeping the stale one would inflate the latency. */
static __always_inline void match_on_start(match_key_t *key, u64 ts)
{
    u64 *existing = MATCH_LOOKUP(key);
    if (existing)
        MATCH_COUNT(MATCH_COUNTER_DUPLICATE_START);
    if (MATCH_UPDATE(key, &ts) != 0)
        MATCH_COUNT(MATCH_COUNTER_TABLE_FULL);
}

/* End signal (close entry / trailing-metadata completion). A lookup miss
 * emits nothing. */
static __always_inline void match_on_end(match_key_t *key, u64 ts, u32 pid)
{
    u64 *start = MATCH_LOOKUP(key);
    u64 start_ts;

    if (!start) {
        MATCH_COUNT(MATCH_COUNTER_UNMATCHED_END);
        return;
    }
    start_ts = *start;
    MATCH_DELETE(key);
    if (ts < start_ts) {
        MATCH_COUNT(MATCH_COUNTER_DROPPED_ORDER);
        return;
    }
    MATCH_COUNT(MATCH_COUNTER_MATCHED);
    MATCH_EMIT(start_ts, ts - start_ts, pid);
}

/* Cycle variant for persistent connections with deferred closures: the first
 * read of a cycle is the request start, sendmsg completes it, close only
 * clears state. */
static __always_inline void match_on_cycle_read(match_key_t *key, u64 ts)
{
    u64 *existing = MATCH_LOOKUP(key);
    if (existing)
        return; /* first read wins */
    if (MATCH_UPDATE(key, &ts) != 0)
        MATCH_COUNT(MATCH_COUNTER_TABLE_FULL);
}

static __always_inline void match_on_cycle_clear(match_key_t *key)
{
    MATCH_DELETE(key);
}

#endif /* CAPTURE_MATCH_CORE_H */

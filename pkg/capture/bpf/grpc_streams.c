/*
 * Multiplexed-transport request matching via user-space probes on the gRPC
 * C-core runtime. Stream construction starts a request; trailing-metadata
 * completion ends it. The transport and stream pointers are opaque ids: a
 * stream cannot be reused until the preceding request on it completes, so
 * the pair identifies one in-flight RPC.
 *
 * Symbol names vary by gRPC build; loader/live_capture.py resolves them (see
 * the lookup table in ../README.md) and attaches:
 *   uprobe  <stream ctor symbol>        -> on_stream_ctor
 *   uprobe  <trailing md done symbol>   -> on_trailing_metadata_done
 */

#include <uapi/linux/ptrace.h>

#include "wire_record.h"

struct stream_key {
    u32 pid;
    u32 pad;
    u64 transport;
    u64 stream;
};

BPF_HASH(open_streams, struct stream_key, u64, TABLE_CAPACITY);
BPF_ARRAY(match_counters, u64, 8);
BPF_RINGBUF_OUTPUT(records, RING_PAGES);

static inline void count(int idx)
{
    int slot = idx;
    u64 *value = match_counters.lookup(&slot);
    if (value)
        __sync_fetch_and_add(value, 1);
}

static inline void emit(u64 start_ts, u64 latency, u32 pid)
{
    struct wire_record rec = {};
    rec.start_ts = start_ts;
    rec.latency = latency;
    rec.pid = pid;
    rec.reserved = 0;
    records.ringbuf_output(&rec, sizeof(rec), 0);
}

typedef struct stream_key match_key_t;
#define MATCH_LOOKUP(key_ptr) open_streams.lookup(key_ptr)
#define MATCH_UPDATE(key_ptr, ts_ptr) open_streams.update(key_ptr, ts_ptr)
#define MATCH_DELETE(key_ptr) open_streams.delete(key_ptr)
#define MATCH_EMIT(start_ts, latency, pid) emit(start_ts, latency, pid)
#define MATCH_COUNT(counter) count(counter)

#include "match_core.h"

static inline int target_pid(u32 *pid)
{
    *pid = bpf_get_current_pid_tgid() >> 32;
    return *pid == TARGET_PID;
}

/* args: (transport*, stream*) per the C-core constructor convention; both are
 * treated as opaque identifiers */
int on_stream_ctor(struct pt_regs *ctx)
{
    u32 pid;
    if (!target_pid(&pid))
        return 0;
    struct stream_key key = {
        .pid = pid,
        .pad = 0,
        .transport = PT_REGS_PARM1(ctx),
        .stream = PT_REGS_PARM2(ctx),
    };
    match_on_start(&key, bpf_ktime_get_ns());
    return 0;
}

int on_trailing_metadata_done(struct pt_regs *ctx)
{
    u32 pid;
    if (!target_pid(&pid))
        return 0;
    struct stream_key key = {
        .pid = pid,
        .pad = 0,
        .transport = PT_REGS_PARM1(ctx),
        .stream = PT_REGS_PARM2(ctx),
    };
    match_on_end(&key, bpf_ktime_get_ns(), pid);
    return 0;
}

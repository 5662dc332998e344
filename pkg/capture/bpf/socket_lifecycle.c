/*
 * Socket-lifecycle request matching in kernel context. Compiled and attached
 * by loader/live_capture.py (BCC); only 24-byte records cross to user space.
 *
 * PATTERN_MODE 0: accept4 return starts a request, close entry ends it.
 * PATTERN_MODE 1: first read starts a cycle, sendmsg ends it, close clears
 *                 (persistent connections with deferred/bulk closures).
 *
 * The loader injects TARGET_PID, PATTERN_MODE, and TABLE_CAPACITY. Requires a
 * ring-buffer-capable kernel (5.8+) and root.
 */

#include <uapi/linux/ptrace.h>

#include "wire_record.h"

struct sock_key {
    u32 pid;
    u32 fd;
};

BPF_HASH(open_requests, struct sock_key, u64, TABLE_CAPACITY);
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

typedef struct sock_key match_key_t;
#define MATCH_LOOKUP(key_ptr) open_requests.lookup(key_ptr)
#define MATCH_UPDATE(key_ptr, ts_ptr) open_requests.update(key_ptr, ts_ptr)
#define MATCH_DELETE(key_ptr) open_requests.delete(key_ptr)
#define MATCH_EMIT(start_ts, latency, pid) emit(start_ts, latency, pid)
#define MATCH_COUNT(counter) count(counter)

#include "match_core.h"

static inline int target_pid(u32 *pid)
{
    *pid = bpf_get_current_pid_tgid() >> 32;
    return *pid == TARGET_PID;
}

#if PATTERN_MODE == 0

TRACEPOINT_PROBE(syscalls, sys_exit_accept4)
{
    u32 pid;
    if (!target_pid(&pid))
        return 0;
    if (args->ret < 0)
        return 0; /* error return, not an identifier */
    struct sock_key key = {.pid = pid, .fd = (u32)args->ret};
    match_on_start(&key, bpf_ktime_get_ns());
    return 0;
}

TRACEPOINT_PROBE(syscalls, sys_enter_close)
{
    u32 pid;
    if (!target_pid(&pid))
        return 0;
    struct sock_key key = {.pid = pid, .fd = (u32)args->fd};
    match_on_end(&key, bpf_ktime_get_ns(), pid);
    return 0;
}

#else /* PATTERN_MODE == 1: read/sendmsg cycles */

TRACEPOINT_PROBE(syscalls, sys_enter_read)
{
    u32 pid;
    if (!target_pid(&pid))
        return 0;
    struct sock_key key = {.pid = pid, .fd = (u32)args->fd};
    match_on_cycle_read(&key, bpf_ktime_get_ns());
    return 0;
}

TRACEPOINT_PROBE(syscalls, sys_enter_sendmsg)
{
    u32 pid;
    if (!target_pid(&pid))
        return 0;
    struct sock_key key = {.pid = pid, .fd = (u32)args->fd};
    match_on_end(&key, bpf_ktime_get_ns(), pid);
    return 0;
}

TRACEPOINT_PROBE(syscalls, sys_enter_close)
{
    u32 pid;
    if (!target_pid(&pid))
        return 0;
    struct sock_key key = {.pid = pid, .fd = (u32)args->fd};
    match_on_cycle_clear(&key);
    return 0;
}

#endif /* PATTERN_MODE */

/*
 * User-space harness around the shared kernel matching step (match_core.h),
 * so the in-kernel pairing logic can be exercised and compared against the
 * library's matcher without privileges.
 *
 * stdin:  one event per line: "<op> <ts_ns> <pid> <id>"
 *         ops: S start, E end, R cycle-read, M cycle-sendmsg, C cycle-clear,
 *              A auxiliary (ignored). Lines starting with '#' are skipped.
 * stdout: 24-byte little-endian wire records, in completion order
 * stderr: counter summary at EOF
 */

#include <inttypes.h>
#include <stdint.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

typedef uint32_t u32;
typedef uint64_t u64;

#include "wire_record.h"

#define TABLE_CAPACITY 65536u /* matches the kernel map default */
#define TABLE_SLOTS (TABLE_CAPACITY * 2u) /* open addressing head room */

struct harness_key {
    u32 pid;
    u64 id;
};

typedef struct harness_key match_key_t;

enum slot_state { SLOT_EMPTY = 0, SLOT_USED = 1, SLOT_DEAD = 2 };

static struct harness_key table_keys[TABLE_SLOTS];
static u64 table_values[TABLE_SLOTS];
static unsigned char table_state[TABLE_SLOTS];
static u32 table_used;
static u64 counters[8]; /* sized like the kernel counter array */

static u32 key_hash(const struct harness_key *key)
{
    u64 h = 1469598103934665603ull; /* FNV-1a over the key bytes */
    const unsigned char *bytes = (const unsigned char *)key;
    for (size_t i = 0; i < sizeof(*key); i++) {
        h ^= bytes[i];
        h *= 1099511628211ull;
    }
    return (u32)(h % TABLE_SLOTS);
}

static int key_eq(const struct harness_key *a, const struct harness_key *b)
{
    return a->pid == b->pid && a->id == b->id;
}

static u64 *map_lookup(match_key_t *key)
{
    u32 slot = key_hash(key);
    for (u32 probe = 0; probe < TABLE_SLOTS; probe++) {
        u32 i = (slot + probe) % TABLE_SLOTS;
        if (table_state[i] == SLOT_EMPTY)
            return NULL;
        if (table_state[i] == SLOT_USED && key_eq(&table_keys[i], key))
            return &table_values[i];
    }
    return NULL;
}

static int map_update(match_key_t *key, u64 *ts)
{
    u64 *existing = map_lookup(key);
    if (existing) {
        *existing = *ts;
        return 0;
    }
    if (table_used >= TABLE_CAPACITY)
        return -1; /* full: skip insertion, caller counts it */
    u32 slot = key_hash(key);
    for (u32 probe = 0; probe < TABLE_SLOTS; probe++) {
        u32 i = (slot + probe) % TABLE_SLOTS;
        if (table_state[i] != SLOT_USED) {
            table_state[i] = SLOT_USED;
            table_keys[i] = *key;
            table_values[i] = *ts;
            table_used++;
            return 0;
        }
    }
    return -1;
}

static void map_delete(match_key_t *key)
{
    u32 slot = key_hash(key);
    for (u32 probe = 0; probe < TABLE_SLOTS; probe++) {
        u32 i = (slot + probe) % TABLE_SLOTS;
        if (table_state[i] == SLOT_EMPTY)
            return;
        if (table_state[i] == SLOT_USED && key_eq(&table_keys[i], key)) {
            table_state[i] = SLOT_DEAD;
            table_used--;
            return;
        }
    }
}

static void emit_record(u64 start_ts, u64 latency, u32 pid)
{
    unsigned char buf[WIRE_RECORD_SIZE];
    for (int i = 0; i < 8; i++)
        buf[i] = (unsigned char)(start_ts >> (8 * i));
    for (int i = 0; i < 8; i++)
        buf[8 + i] = (unsigned char)(latency >> (8 * i));
    for (int i = 0; i < 4; i++)
        buf[16 + i] = (unsigned char)(pid >> (8 * i));
    memset(buf + 20, 0, 4);
    fwrite(buf, 1, sizeof(buf), stdout);
}

#define MATCH_LOOKUP(key_ptr) map_lookup(key_ptr)
#define MATCH_UPDATE(key_ptr, ts_ptr) map_update(key_ptr, ts_ptr)
#define MATCH_DELETE(key_ptr) map_delete(key_ptr)
#define MATCH_EMIT(start_ts, latency, pid) emit_record(start_ts, latency, pid)
#define MATCH_COUNT(counter) (counters[counter]++)

#include "match_core.h"

int main(void)
{
    char line[256];
    while (fgets(line, sizeof(line), stdin)) {
        char op;
        u64 ts, id;
        u32 pid;
        if (line[0] == '#' || line[0] == '\n')
            continue;
        if (sscanf(line, " %c %" SCNu64 " %" SCNu32 " %" SCNu64,
                   &op, &ts, &pid, &id) != 4) {
            fprintf(stderr, "match_harness: bad line: %s", line);
            return 2;
        }
        struct harness_key key = {.pid = pid, .id = id};
        switch (op) {
        case 'S':
            match_on_start(&key, ts);
            break;
        case 'E':
            match_on_end(&key, ts, pid);
            break;
        case 'R':
            match_on_cycle_read(&key, ts);
            break;
        case 'M':
            match_on_end(&key, ts, pid);
            break;
        case 'C':
            match_on_cycle_clear(&key);
            break;
        case 'A':
            break;
        default:
            fprintf(stderr, "match_harness: unknown op %c\n", op);
            return 2;
        }
    }
    fflush(stdout);
    fprintf(stderr,
            "matched=%" PRIu64 " unmatched_end=%" PRIu64
            " duplicate_start=%" PRIu64 " dropped_order=%" PRIu64
            " table_full=%" PRIu64 "\n",
            counters[MATCH_COUNTER_MATCHED],
            counters[MATCH_COUNTER_UNMATCHED_END],
            counters[MATCH_COUNTER_DUPLICATE_START],
            counters[MATCH_COUNTER_DROPPED_ORDER],
            counters[MATCH_COUNTER_TABLE_FULL]);
    return 0;
}

#ifndef CAPTURE_WIRE_RECORD_H
#define CAPTURE_WIRE_RECORD_H

/*
 * Fixed 24-byte little-endian record shared with the user-space library:
 * start_ts u64, latency u64, pid u32, reserved u32 = 0.
 *
 * The host must provide u32/u64 typedefs before including this header
 * (the kernel side gets them from linux/types.h, the harness from stdint.h).
 */

struct wire_record {
    u64 start_ts; /* ns, kernel monotonic clock */
    u64 latency;  /* ns */
    u32 pid;
    u32 reserved;
};

#define WIRE_RECORD_SIZE 24

#endif /* CAPTURE_WIRE_RECORD_H */

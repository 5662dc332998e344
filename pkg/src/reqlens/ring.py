"""Bounded FIFO ring carrying 24-byte request records between pipeline stages.

Mirrors the kernel-to-user ring semantics: fixed byte capacity, drop-newest on
overflow with a visible counter, exactly one producer and one consumer.
"""

from __future__ import annotations

import threading
from collections import deque
from typing import Deque, List

from .events import WIRE_RECORD_SIZE, RequestRecord, wire_decode, wire_encode

DEFAULT_RING_BYTES = 128 * 1024


class RecordRing:
    """Single-producer single-consumer ring of encoded request records."""

    def __init__(self, capacity_bytes: int = DEFAULT_RING_BYTES):
        if capacity_bytes < WIRE_RECORD_SIZE:
            raise ValueError(
                f"capacity_bytes must be >= {WIRE_RECORD_SIZE}, got {capacity_bytes}"
            )
        self.capacity_bytes = capacity_bytes
        self.slots = capacity_bytes // WIRE_RECORD_SIZE
        self._buf: Deque[bytes] = deque()
        self._lock = threading.Lock()
        self._dropped = 0

    @property
    def dropped(self) -> int:
        """Records discarded because the ring was full. Monotonic."""
        return self._dropped

    def __len__(self) -> int:
        with self._lock:
            return len(self._buf)

    def push(self, record: RequestRecord) -> bool:
        """Enqueue one record; False (and a counted drop) when the ring is full."""
        return self.push_wire(wire_encode(record))

    def push_wire(self, wire: bytes) -> bool:
        """Enqueue an already-encoded 24-byte record (live capture path)."""
        if len(wire) != WIRE_RECORD_SIZE:
            raise ValueError(f"wire record must be {WIRE_RECORD_SIZE} bytes")
        with self._lock:
            if len(self._buf) >= self.slots:
                self._dropped += 1
                return False
            self._buf.append(wire)
            return True

    def poll(self, max_records: int) -> List[RequestRecord]:
        """Dequeue up to max_records oldest records in FIFO order."""
        if max_records < 1:
            raise ValueError("max_records must be >= 1")
        with self._lock:
            take = min(max_records, len(self._buf))
            wires = [self._buf.popleft() for _ in range(take)]
        return [wire_decode(w) for w in wires]

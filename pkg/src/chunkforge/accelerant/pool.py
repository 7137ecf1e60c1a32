"""Reusable staging buffers grouped in power-of-two size classes."""

from __future__ import annotations

import threading
from collections import defaultdict
from typing import Callable, Optional

from ..errors import CapacityError, ConfigError, OwnershipError

POOL = "pool"
CLIENT = "client"
TASK = "task"
DROPPED = "dropped"


def size_class(size: int, smallest: int = 4096) -> int:
    return max(smallest, 1 << (size - 1).bit_length())


class BufferHandle:
    """A staging buffer. Exactly one party owns it at a time."""

    __slots__ = ("buf", "capacity", "used", "generation", "_owner", "_pool")

    def __init__(self, capacity: int, generation: int, pool: "BufferPool"):
        self.buf = bytearray(capacity)
        self.capacity = capacity
        self.used = 0
        self.generation = generation
        self._owner = CLIENT
        self._pool = pool

    @property
    def owner(self) -> str:
        return self._owner

    def view(self) -> memoryview:
        return memoryview(self.buf)[: self.used]

    def write(self, data, offset: int = 0) -> None:
        n = len(data)
        if offset + n > self.capacity:
            raise CapacityError(f"{offset + n} bytes exceed buffer capacity {self.capacity}")
        self.buf[offset : offset + n] = data
        self.used = max(self.used, offset + n) if offset else n

    def __repr__(self):
        return f"<BufferHandle cap={self.capacity} used={self.used} owner={self._owner}>"


class BufferPool:
    """Free lists per size class, ``depth`` buffers deep.

    ``on_allocate`` is called with the class size on every fresh allocation;
    the simulated backend uses it to charge an allocation cost.
    """

    def __init__(
        self,
        depth: int = 4,
        max_size: int = 64 * 1024 * 1024,
        reuse: bool = True,
        smallest: int = 4096,
        on_allocate: Optional[Callable[[int], None]] = None,
    ):
        if depth < 0:
            raise ConfigError("pool depth must be >= 0")
        self.depth = depth
        self.max_size = max_size
        self.reuse = reuse
        self.smallest = smallest
        self.on_allocate = on_allocate
        self.allocations_total = 0
        self.pool_hits = 0
        self._free: dict[int, list[BufferHandle]] = defaultdict(list)
        self._generation = 0
        self._closed = False
        self._lock = threading.Lock()

    def acquire(self, size: int) -> BufferHandle:
        if size <= 0:
            raise ConfigError("buffer size must be positive")
        if size > self.max_size:
            raise CapacityError(f"{size} bytes exceeds the largest size class ({self.max_size})")
        cls = size_class(size, self.smallest)
        with self._lock:
            free = self._free[cls]
            if self.reuse and free:
                handle = free.pop()
                handle._owner = CLIENT
                handle.used = 0
                self.pool_hits += 1
                return handle
            self.allocations_total += 1
            generation = self._generation
        if self.on_allocate is not None:
            self.on_allocate(cls)
        return BufferHandle(cls, generation, self)

    def release(self, handle: BufferHandle) -> None:
        if handle._pool is not self:
            raise OwnershipError("buffer belongs to a different pool")
        with self._lock:
            if self._closed or handle.generation != self._generation:
                return
            if handle._owner == TASK:
                raise OwnershipError("buffer is in flight")
            if handle._owner != CLIENT:
                raise OwnershipError(f"double release (buffer is {handle._owner})")
            free = self._free[handle.capacity]
            if self.reuse and len(free) < self.depth:
                handle._owner = POOL
                free.append(handle)
            else:
                handle._owner = DROPPED

    def prewarm(self, size: int, count: Optional[int] = None) -> None:
        """Allocate buffers up front, as at application start-up."""
        handles = [self.acquire(size) for _ in range(self.depth if count is None else count)]
        for h in handles:
            self.release(h)

    def idle_count(self, size: int) -> int:
        with self._lock:
            return len(self._free[size_class(size, self.smallest)])

    def close(self) -> None:
        with self._lock:
            self._closed = True
            self._generation += 1
            self._free.clear()

    # used by the pipeline to move ownership in and out of tasks
    def _lend(self, handle: BufferHandle) -> None:
        with self._lock:
            if handle._owner != CLIENT:
                raise OwnershipError(f"cannot submit a buffer owned by {handle._owner}")
            handle._owner = TASK

    def _return(self, handle: BufferHandle) -> None:
        with self._lock:
            if handle._owner == TASK:
                handle._owner = CLIENT

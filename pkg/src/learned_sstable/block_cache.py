"""Thread-safe LRU cache for table blocks with single-flight loading.

A miss runs the caller's loader exactly once per key, even when many threads
ask for the same block at once; the others wait on the in-flight load.  An
optional per-miss sleep emulates a remote fetch so that cache pressure shows
up in measured latency.
"""

from __future__ import annotations

import threading
import time
from collections import OrderedDict
from concurrent.futures import Future
from dataclasses import asdict, dataclass
from typing import Any, Callable, Hashable


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    evictions: int = 0
    bytes_fetched: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def block_nbytes(value: Any) -> int:
    """Charged size of a cached value: ``value.nbytes`` if present, else ``len``."""
    n = getattr(value, "nbytes", None)
    return len(value) if n is None else int(n)


class BlockCache:
    """LRU over whole blocks, bounded by total block bytes.

    Blocks larger than ``capacity_bytes`` pass through uncached.  Waiters on
    an in-flight load count as hits; every loader call counts as a miss.
    """

    def __init__(self, capacity_bytes: int, fetch_latency: float = 0.0):
        if capacity_bytes < 0:
            raise ValueError("capacity_bytes must be >= 0")
        self.capacity_bytes = capacity_bytes
        self.fetch_latency = fetch_latency
        self.stats = CacheStats()
        self._entries: OrderedDict[Hashable, tuple[Any, int]] = OrderedDict()
        self._inflight: dict[Hashable, Future] = {}
        self._used = 0
        self._lock = threading.Lock()

    @property
    def used_bytes(self) -> int:
        return self._used

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key) -> bool:
        return key in self._entries

    def get_block(self, table_id: Hashable, block_id: Hashable, loader: Callable[[], Any]) -> Any:
        key = (table_id, block_id)
        with self._lock:
            entry = self._entries.get(key)
            if entry is not None:
                self._entries.move_to_end(key)
                self.stats.hits += 1
                return entry[0]
            fut = self._inflight.get(key)
            if fut is not None:
                self.stats.hits += 1
                owner = False
            else:
                fut = Future()
                self._inflight[key] = fut
                self.stats.misses += 1
                owner = True
        if not owner:
            return fut.result()

        try:
            if self.fetch_latency > 0:
                time.sleep(self.fetch_latency)
            value = loader()
        except BaseException as exc:
            with self._lock:
                del self._inflight[key]
            fut.set_exception(exc)
            raise
        size = block_nbytes(value)
        with self._lock:
            del self._inflight[key]
            self.stats.bytes_fetched += size
            if size <= self.capacity_bytes:
                self._entries[key] = (value, size)
                self._used += size
                while self._used > self.capacity_bytes:
                    _, (_, evicted) = self._entries.popitem(last=False)
                    self._used -= evicted
                    self.stats.evictions += 1
        fut.set_result(value)
        return value

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()
            self._used = 0

    def reset_stats(self) -> None:
        with self._lock:
            self.stats = CacheStats()

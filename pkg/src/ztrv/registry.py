"""Consume-once nonce registry with sliding expiration.

The registry is the replay barrier: ``consume_once`` atomically claims a key
for a TTL window, and any second claim inside the window fails.  Expired
entries count as absent.  All operations take the current time as an
argument so the registry can run on a virtual clock in simulations and on
the wall clock in the gateway, with identical behavior.
"""

from __future__ import annotations

import heapq
import threading
from dataclasses import dataclass

# Rough per-entry footprint (key bytes + dict/heap overhead) used for the
# memory estimate reported by stats(); it is an estimate, not an accounting.
DEFAULT_PER_ENTRY_BYTES = 125

DEFAULT_SWEEP_INTERVAL_MS = 250


@dataclass(frozen=True)
class RegistryStats:
    live_count: int
    peak_count: int
    evicted_total: int
    bytes_estimate: int


class NonceRegistry:
    """Thread-safe set-if-absent store keyed by nonce, expiring entries by TTL."""

    def __init__(self, *, per_entry_bytes: int = DEFAULT_PER_ENTRY_BYTES,
                 sweep_interval_ms: int = DEFAULT_SWEEP_INTERVAL_MS):
        if per_entry_bytes <= 0:
            raise ValueError("per_entry_bytes must be positive")
        if sweep_interval_ms <= 0:
            raise ValueError("sweep_interval_ms must be positive")
        self._per_entry_bytes = per_entry_bytes
        self._sweep_interval_ms = sweep_interval_ms
        self._lock = threading.Lock()
        self._expiry: dict[str, int] = {}
        # lazy-deletion min-heap of (expiry, key); stale tags are skipped
        self._heap: list[tuple[int, str]] = []
        self._peak = 0
        self._evicted = 0
        self._last_sweep: int | None = None

    def consume_once(self, key: str, now: int, ttl_ms: int) -> bool:
        """Claim ``key`` until ``now + ttl_ms``.

        Returns True iff the key was absent (or expired, i.e. expiry <= now).
        Check and insert happen under one lock, so exactly one of any set of
        racing claims for the same key wins.
        """
        if ttl_ms <= 0:
            raise ValueError("ttl_ms must be positive")
        with self._lock:
            if self._last_sweep is None:
                self._last_sweep = now
            elif now - self._last_sweep >= self._sweep_interval_ms:
                self._sweep_locked(now)
            current = self._expiry.get(key)
            if current is not None:
                if current > now:
                    return False
                # expired entry: treat as absent, replace in place
                self._evicted += 1
            expiry = now + ttl_ms
            self._expiry[key] = expiry
            heapq.heappush(self._heap, (expiry, key))
            if len(self._expiry) > self._peak:
                self._peak = len(self._expiry)
            return True

    def sweep(self, now: int) -> int:
        """Remove every entry with expiry <= now; returns how many were removed."""
        with self._lock:
            return self._sweep_locked(now)

    def stats(self) -> RegistryStats:
        with self._lock:
            live = len(self._expiry)
            return RegistryStats(
                live_count=live,
                peak_count=self._peak,
                evicted_total=self._evicted,
                bytes_estimate=live * self._per_entry_bytes,
            )

    def __len__(self) -> int:
        with self._lock:
            return len(self._expiry)

    def _sweep_locked(self, now: int) -> int:
        removed = 0
        heap = self._heap
        while heap and heap[0][0] <= now:
            _, key = heapq.heappop(heap)
            current = self._expiry.get(key)
            # the tag may be stale: the key may have been reclaimed with a
            # later expiry, or already removed under an older tag
            if current is not None and current <= now:
                del self._expiry[key]
                removed += 1
        self._evicted += removed
        self._last_sweep = now
        return removed

import random
import threading
from concurrent.futures import ThreadPoolExecutor

import pytest

from ztrv import NonceRegistry


class ReferenceRegistry:
    """Brute-force oracle: a plain dict with the same stated semantics."""

    def __init__(self):
        self.entries = {}

    def consume_once(self, key, now, ttl):
        current = self.entries.get(key)
        if current is not None and current > now:
            return False
        self.entries[key] = now + ttl
        return True

    def sweep(self, now):
        dead = [k for k, exp in self.entries.items() if exp <= now]
        for k in dead:
            del self.entries[k]
        return len(dead)

    def live(self, now):
        return {k for k, exp in self.entries.items() if exp > now}


# ---------------------------------------------------------------------------
# basic semantics
# ---------------------------------------------------------------------------

def test_first_consume_on_empty_registry():
    reg = NonceRegistry()
    assert reg.consume_once("nonce:aa", now=0, ttl_ms=60_000) is True


def test_second_consume_within_window_fails():
    reg = NonceRegistry()
    assert reg.consume_once("k", now=0, ttl_ms=60_000)
    assert reg.consume_once("k", now=1_000, ttl_ms=60_000) is False


def test_consume_after_expiry_succeeds():
    reg = NonceRegistry()
    assert reg.consume_once("k", now=0, ttl_ms=60_000)
    assert reg.consume_once("k", now=61_000, ttl_ms=60_000) is True


def test_expiry_boundary_is_dead_at_exact_expiry():
    # expiry <= now counts as absent
    reg = NonceRegistry()
    assert reg.consume_once("k", now=0, ttl_ms=10_000)
    assert reg.consume_once("k", now=9_999, ttl_ms=10_000) is False
    assert reg.consume_once("k", now=10_000, ttl_ms=10_000) is True


def test_ttl_must_be_positive():
    reg = NonceRegistry()
    with pytest.raises(ValueError):
        reg.consume_once("k", now=0, ttl_ms=0)
    with pytest.raises(ValueError):
        reg.consume_once("k", now=0, ttl_ms=-5)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def test_sweep_empty_registry():
    assert NonceRegistry().sweep(now=100) == 0


def test_sweep_removes_all_expired():
    reg = NonceRegistry()
    for k in ("a", "b", "c"):
        reg.consume_once(k, now=0, ttl_ms=5_000)
    assert reg.sweep(now=6_000) == 3
    assert len(reg) == 0
    assert reg.stats().evicted_total == 3


def test_sweep_partial():
    reg = NonceRegistry()
    reg.consume_once("old", now=0, ttl_ms=60_000)
    reg.consume_once("new", now=50_000, ttl_ms=60_000)
    assert reg.sweep(now=61_000) == 1
    assert len(reg) == 1
    assert reg.consume_once("new", now=61_000, ttl_ms=60_000) is False


def test_sweep_completeness():
    # after sweep(now), no entry has expiry <= now
    reg = NonceRegistry()
    rng = random.Random(3)
    for i in range(500):
        reg.consume_once(f"k{i}", now=rng.randrange(0, 10_000),
                         ttl_ms=rng.randrange(1, 5_000))
    reg.sweep(now=7_500)
    assert all(exp > 7_500 for exp in reg._expiry.values())


def test_stale_heap_tag_does_not_kill_reclaimed_entry():
    # expire, reclaim with later expiry, then sweep past the old tag
    reg = NonceRegistry()
    assert reg.consume_once("k", now=0, ttl_ms=1_000)
    assert reg.consume_once("k", now=1_000, ttl_ms=60_000)  # reclaim
    reg.sweep(now=1_500)  # old tag (expiry=1000) pops here
    assert reg.consume_once("k", now=2_000, ttl_ms=60_000) is False


# ---------------------------------------------------------------------------
# stats
# ---------------------------------------------------------------------------

def test_fresh_registry_stats_all_zero():
    stats = NonceRegistry().stats()
    assert (stats.live_count, stats.peak_count, stats.evicted_total,
            stats.bytes_estimate) == (0, 0, 0, 0)


def test_stats_after_bulk_insert():
    reg = NonceRegistry(sweep_interval_ms=10 ** 9)
    for i in range(100_000):
        assert reg.consume_once(f"nonce:{i:032x}", now=0, ttl_ms=10 ** 9)
    stats = reg.stats()
    assert stats.live_count == 100_000
    assert stats.peak_count == 100_000
    assert stats.bytes_estimate == 100_000 * 125


def test_bytes_estimate_uses_configured_cost():
    reg = NonceRegistry(per_entry_bytes=200)
    reg.consume_once("a", now=0, ttl_ms=1_000)
    reg.consume_once("b", now=0, ttl_ms=1_000)
    assert reg.stats().bytes_estimate == 400


def test_peak_never_decreases_across_sweep():
    reg = NonceRegistry()
    for i in range(10):
        reg.consume_once(f"k{i}", now=0, ttl_ms=1_000)
    before = reg.stats().peak_count
    reg.sweep(now=5_000)
    assert reg.stats().live_count == 0
    assert reg.stats().peak_count == before == 10


def test_lazy_reclaim_counts_as_eviction():
    reg = NonceRegistry()
    reg.consume_once("k", now=0, ttl_ms=1_000)
    assert reg.consume_once("k", now=2_000, ttl_ms=1_000)
    assert reg.stats().evicted_total == 1


def test_constructor_validation():
    with pytest.raises(ValueError):
        NonceRegistry(per_entry_bytes=0)
    with pytest.raises(ValueError):
        NonceRegistry(sweep_interval_ms=0)


# ---------------------------------------------------------------------------
# reference-oracle equivalence
# ---------------------------------------------------------------------------

def test_matches_brute_force_reference_under_random_schedule():
    rng = random.Random(20260815)
    reg = NonceRegistry(sweep_interval_ms=10 ** 12)  # only explicit sweeps
    ref = ReferenceRegistry()
    now = 0
    keys = [f"k{i}" for i in range(40)]
    for step in range(5_000):
        now += rng.randrange(0, 200)
        op = rng.random()
        if op < 0.85:
            key = rng.choice(keys)
            ttl = rng.randrange(1, 2_000)
            assert (reg.consume_once(key, now, ttl)
                    == ref.consume_once(key, now, ttl)), f"step {step}"
        else:
            assert reg.sweep(now) == ref.sweep(now), f"step {step}"
    reg.sweep(now)
    ref.sweep(now)
    assert set(reg._expiry) == set(ref.entries)


def test_expiry_safety_against_oracle():
    # a true consume at t implies false at every probed t' in (t, t+ttl)
    rng = random.Random(7)
    reg = NonceRegistry(sweep_interval_ms=10 ** 12)
    for _ in range(200):
        key = f"k{rng.randrange(10 ** 9):x}"
        t = rng.randrange(0, 10 ** 6)
        ttl = rng.randrange(1, 10_000)
        assert reg.consume_once(key, t, ttl)
        for _ in range(5):
            probe = t + rng.randrange(1, ttl + 1) if ttl > 1 else t + 1
            if probe < t + ttl:
                assert reg.consume_once(key, probe, ttl) is False
        assert reg.consume_once(key, t + ttl, ttl) is True


# ---------------------------------------------------------------------------
# concurrency
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("n_threads,trials", [(2, 300), (16, 100), (256, 15)])
def test_exactly_once_under_concurrency(n_threads, trials):
    rng = random.Random(n_threads)
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        for trial in range(trials):
            reg = NonceRegistry()
            barrier = threading.Barrier(n_threads)
            key = f"trial-{trial}"

            def attempt(jitter):
                barrier.wait()
                if jitter:
                    # widen the interleaving space a little
                    threading.Event().wait(jitter / 1e6)
                return reg.consume_once(key, now=1_000, ttl_ms=60_000)

            jitters = [rng.choice([0, 0, 1, 5, 20]) for _ in range(n_threads)]
            results = list(pool.map(attempt, jitters))
            assert sum(results) == 1, f"trial {trial}: {sum(results)} wins"


def test_concurrent_mixed_keys_all_single_winner():
    reg = NonceRegistry()
    keys = [f"k{i}" for i in range(50)]
    wins = {k: 0 for k in keys}
    lock = threading.Lock()

    def hammer(seed):
        rng = random.Random(seed)
        for _ in range(400):
            k = rng.choice(keys)
            if reg.consume_once(k, now=0, ttl_ms=10 ** 9):
                with lock:
                    wins[k] += 1

    threads = [threading.Thread(target=hammer, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(count == 1 for count in wins.values())


# ---------------------------------------------------------------------------
# memory bound
# ---------------------------------------------------------------------------

def test_memory_bound_under_sustained_insertion():
    # live_count <= rate x min(ttl, duration) x 1.05 given frequent sweeps
    rate, duration_s, ttl_s = 1_000, 10, 5
    reg = NonceRegistry()
    peak_seen = 0
    next_sweep = 100
    for i in range(rate * duration_s):
        now = int(i * 1000 / rate)
        while now >= next_sweep:
            reg.sweep(next_sweep)
            next_sweep += 100
        reg.consume_once(f"n{i}", now, ttl_s * 1000)
        peak_seen = max(peak_seen, reg.stats().live_count)
    bound = rate * min(ttl_s, duration_s) * 1.05
    assert peak_seen <= bound, (peak_seen, bound)
    assert reg.stats().peak_count <= bound

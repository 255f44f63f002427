"""Exit criteria, run at full scale (10^6 rows, 1 KiB values, 32 KiB blocks).

Every test carries a ``criterion`` marker; the terminal summary prints one
PASS/FAIL line per criterion with the measured figures.
"""

import bisect
import random
import threading
import time
from collections import OrderedDict

import mpmath
import numpy as np
import pytest

from learned_sstable import (
    LEARNED,
    TWO_LEVEL,
    BlockCache,
    BlockLocator,
    build_table,
    compress_locator,
    decompress_locator,
    fit_encoder,
    open_table,
    train_ols,
)
from learned_sstable.bench import WorkloadConfig, compare, generate_table, run_workload

pytestmark = pytest.mark.slow

ROWS = 1_000_000
SEED = 7


@pytest.fixture(scope="module")
def big(tmp_path_factory):
    cfg = WorkloadConfig(rows=ROWS, value_size=1024, tau=32768, seed=SEED)
    src = generate_table(cfg)
    d = tmp_path_factory.mktemp("acceptance")
    paths, reports = {}, {}
    for kind in (LEARNED, TWO_LEVEL):
        paths[kind] = d / f"{kind}.sst"
        reports[kind] = build_table(src, paths[kind], index_kind=kind, tau=cfg.tau)
    assert not reports[LEARNED].fell_back
    return cfg, src, paths, reports


@pytest.fixture(scope="module")
def oracle(big):
    """Sorted keys plus every value, concatenated; rebuilt from the generator."""
    cfg, src, _, _ = big
    blob = b"".join(r.value for r in src)
    return src.keys, blob, cfg.value_size


def _value(oracle, i):
    _, blob, vs = oracle
    return blob[i * vs : (i + 1) * vs]


@pytest.mark.criterion(1, "Correctness oracle: 10^5 gets and 10^4 100-row scans per index kind")
@pytest.mark.parametrize("kind", [LEARNED, TWO_LEVEL])
def test_correctness_oracle(big, oracle, kind, record_property):
    _, _, paths, _ = big
    keys = oracle[0]
    rng = random.Random(101)
    mismatches = 0
    t0 = time.perf_counter()
    with open_table(paths[kind], BlockCache(64 << 20)) as t:
        for _ in range(100_000):
            i = rng.randrange(ROWS)
            mismatches += t.get(keys[i]) != _value(oracle, i)
        for _ in range(10_000):
            if rng.random() < 0.5:
                start = keys[rng.randrange(ROWS)]
            else:
                start = b"%020d" % rng.getrandbits(64)
            i = bisect.bisect_left(keys, start)
            got = t.scan(start, 100)
            want = [(keys[j], _value(oracle, j)) for j in range(i, min(i + 100, ROWS))]
            mismatches += [tuple(r) for r in got] != want
    record_property("detail", f"{kind}: {mismatches} mismatches in {time.perf_counter() - t0:.0f}s")
    assert mismatches == 0


@pytest.mark.criterion(2, "Correct-block guarantee over all 10^6 records")
def test_correct_block_guarantee(big, record_property):
    _, _, paths, _ = big
    with open_table(paths[LEARNED]) as t:
        audit = t.audit()
    record_property("detail", f"{audit.records} records, {audit.mismatches} misplaced")
    assert audit.records == ROWS and audit.mismatches == 0


@pytest.mark.criterion(3, "Monotonicity: encoder pairs, slope >= 0, predict_block non-decreasing")
def test_monotonicity(big, oracle, record_property):
    _, _, paths, _ = big
    keys = oracle[0]
    rng = random.Random(303)
    with open_table(paths[LEARNED]) as t:
        enc, model, tau, n = t.encoder, t.model, t.tau, t.n_blocks
        bad_pairs = 0
        for _ in range(100_000):
            a, b = keys[rng.randrange(ROWS)], keys[rng.randrange(ROWS)]
            if a <= b:
                bad_pairs += enc.encode(a) > enc.encode(b)
            else:
                bad_pairs += enc.encode(b) > enc.encode(a)
        blocks = [model.predict_block(enc.encode(k), tau, n) for k in keys]
    steps_down = sum(1 for x, y in zip(blocks, blocks[1:]) if y < x)
    # the table's model plus fresh models on random comonotone subsets
    slopes = [model.slope]
    for s in range(50):
        sub = sorted(random.Random(s).sample(keys, 1000))
        e = fit_encoder(sub)
        slopes.append(train_ols([e.encode(k) for k in sub], [1040 * i for i in range(len(sub))]).slope)
    record_property(
        "detail", f"{bad_pairs} bad pairs, {steps_down} block decreases, min slope {min(slopes):.3g}"
    )
    assert bad_pairs == 0 and steps_down == 0 and min(slopes) >= 0


def _normal_equations(xs, ys):
    with mpmath.workdps(60):
        X = [mpmath.mpf(x) for x in xs]
        Y = [mpmath.mpf(y) for y in ys]
        sx, sy = mpmath.fsum(X), mpmath.fsum(Y)
        sxx = mpmath.fsum(x * x for x in X)
        sxy = mpmath.fsum(x * y for x, y in zip(X, Y))
        c, m = mpmath.lu_solve(mpmath.matrix([[len(X), sx], [sx, sxx]]), mpmath.matrix([sy, sxy]))
        return float(m), float(c)


@pytest.mark.criterion(4, "OLS vs normal-equations oracle (1e-9 rel) and residual sum (1e-6)")
def test_ols_oracle(record_property):
    rng = np.random.default_rng(404)
    worst_rel = worst_resid = 0.0
    for inst in range(100):
        n = int(rng.integers(2, 10_001))
        if inst % 2:
            xs = np.sort(rng.integers(0, 2**53, size=n)).tolist()
            ys = np.concatenate([[0], np.cumsum(rng.integers(10, 5000, size=n - 1))]).tolist()
        else:
            xs = rng.normal(0, 1e6, size=n).tolist()
            ys = (3.5 * np.asarray(xs) + rng.normal(0, 1e5, size=n)).tolist()
        m = train_ols(xs, ys)
        slope, intercept = _normal_equations(xs, ys)
        scale = float(np.mean(np.abs(ys)))
        rel_s = abs(m.slope - slope) / abs(slope)
        rel_c = abs(m.intercept - intercept) / max(abs(intercept), scale)
        resid = abs(mpmath.fsum(mpmath.mpf(y) - (mpmath.mpf(m.slope) * x + m.intercept) for x, y in zip(xs, ys)))
        resid_rel = float(resid / sum(abs(y) for y in ys))
        worst_rel = max(worst_rel, rel_s, rel_c)
        worst_resid = max(worst_resid, resid_rel)
    record_property("detail", f"worst relative error {worst_rel:.2e}, worst residual ratio {worst_resid:.2e}")
    assert worst_rel <= 1e-9
    assert worst_resid <= 1e-6


@pytest.mark.criterion(5, "Index size: learned < 50% of two-level")
def test_index_size(big, record_property):
    _, _, paths, reports = big
    with open_table(paths[LEARNED]) as a, open_table(paths[TWO_LEVEL]) as b:
        la, lb = a.stats().index_bytes, b.stats().index_bytes
    assert (la, lb) == (reports[LEARNED].index_bytes, reports[TWO_LEVEL].index_bytes)
    ratio = la / lb
    record_property("detail", f"learned {la} B, two-level {lb} B, ratio {ratio:.4f}")
    assert ratio < 0.5


@pytest.mark.criterion(6, "Block sizes: >= 90% of non-empty learned blocks within [0.5, 1.5] tau")
def test_block_size_distribution(big, record_property):
    _, _, paths, _ = big
    with open_table(paths[LEARNED]) as t:
        s = t.stats()
    frac = s.fraction_within(0.5, 1.5)
    record_property("detail", f"{frac:.4f} of {s.n_blocks - s.empty_blocks} non-empty blocks, {s.empty_blocks} empty")
    assert frac >= 0.9


@pytest.mark.criterion(7, "Cold-cache fetches: learned get = 1, two-level get = 2")
def test_fetch_counts(big, oracle, record_property):
    _, _, paths, _ = big
    keys = oracle[0]
    rng = random.Random(707)
    counts = {LEARNED: set(), TWO_LEVEL: set()}
    with open_table(paths[LEARNED]) as a, open_table(paths[TWO_LEVEL]) as b:
        for _ in range(1000):
            i = rng.randrange(ROWS)
            for kind, t in ((LEARNED, a), (TWO_LEVEL, b)):
                t.cache = BlockCache(8 << 20)
                assert t.get(keys[i]) == _value(oracle, i)
                counts[kind].add(t.cache.stats.misses)
    record_property("detail", f"learned fetches {sorted(counts[LEARNED])}, two-level {sorted(counts[TWO_LEVEL])}")
    assert counts == {LEARNED: {1}, TWO_LEVEL: {2}}


@pytest.mark.criterion(8, "Directional: learned >= 10% lower mean/p99 latency, >= 10% higher throughput")
def test_directional_latency_throughput(big, record_property):
    cfg, src, paths, _ = big
    cfg = WorkloadConfig(
        rows=ROWS, value_size=1024, tau=32768, seed=SEED, ops=100_000,
        cache_bytes=8 << 20, fetch_latency_us=500,
    )
    results = {}
    for kind in (TWO_LEVEL, LEARNED):
        with open_table(paths[kind], BlockCache(cfg.cache_bytes, cfg.fetch_latency_us / 1e6)) as t:
            results[kind] = run_workload(t, cfg, src.keys)
    assert results[LEARNED].query_digest == results[TWO_LEVEL].query_digest
    d = compare(results[TWO_LEVEL], results[LEARNED])
    record_property(
        "detail",
        f"mean {d['mean_latency']:+.1f}%, p99 {d['p99_latency']:+.1f}%, throughput {d['throughput']:+.1f}%",
    )
    assert d["mean_latency"] <= -10
    assert d["p99_latency"] <= -10
    assert d["throughput"] >= 10


@pytest.mark.criterion(9, "Locator compression round-trip on 10^4 random locators")
def test_locator_roundtrip(record_property):
    rng = random.Random(909)
    failures = 0
    for i in range(10_000):
        n = 1 if i % 10 == 0 else rng.randint(1, 300)
        tau = rng.choice([1, 512, 4096, 32768, rng.randint(1, 1 << 20)])
        offsets = [rng.randrange(1 << 40)]
        for _ in range(n):
            size = 0 if rng.random() < 0.15 else max(0, int(rng.gauss(tau, tau / 3)))
            offsets.append(offsets[-1] + size)
        loc = BlockLocator(tuple(offsets), tuple(rng.getrandbits(32) for _ in range(n)), tau)
        failures += decompress_locator(compress_locator(loc)) != loc
    record_property("detail", f"{failures} failures")
    assert failures == 0


def _reference_lru(trace, sizes, capacity):
    held, used, hits = OrderedDict(), 0, []
    for b in trace:
        if b in held:
            held.move_to_end(b)
            hits.append(True)
            continue
        hits.append(False)
        if sizes[b] <= capacity:
            held[b] = sizes[b]
            used += sizes[b]
            while used > capacity:
                used -= held.popitem(last=False)[1]
    return hits


@pytest.mark.criterion(10, "LRU oracle on 10^5-step traces; single-flight under 64 concurrent misses")
def test_lru_and_single_flight(record_property):
    rng = random.Random(1010)
    diverged = 0
    for trial in range(3):
        sizes = {b: rng.randint(1, 40_000) for b in range(2000)}
        trace = [int(rng.paretovariate(1.2)) % 2000 for _ in range(100_000)]
        cache = BlockCache(rng.choice([64_000, 1 << 20, 8 << 20]))
        got = []
        for b in trace:
            before = cache.stats.hits
            cache.get_block("t", b, lambda b=b: b"\0" * sizes[b])
            got.append(cache.stats.hits > before)
            assert cache.used_bytes <= cache.capacity_bytes
        diverged += got != _reference_lru(trace, sizes, cache.capacity_bytes)

    cache = BlockCache(1 << 20, fetch_latency=0.01)
    calls = []
    barrier = threading.Barrier(64)
    out = []

    def client():
        barrier.wait()
        out.append(cache.get_block("t", 42, lambda: calls.append(1) or b"blk"))

    threads = [threading.Thread(target=client) for _ in range(64)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    record_property("detail", f"{diverged} divergent traces, loader ran {len(calls)}x for 64 concurrent misses")
    assert diverged == 0
    assert len(calls) == 1 and out == [b"blk"] * 64

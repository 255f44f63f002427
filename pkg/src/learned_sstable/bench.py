"""Workload generation and measurement for learned vs two-level tables.

Tables hold uniformly random 64-bit integers rendered as 20-digit zero-padded
decimal keys with fixed-size pseudo-random values.  Point workloads issue
``get`` on uniformly chosen stored keys; scan workloads read ``scan_len``
consecutive rows from a uniformly chosen stored key.  ``workers`` clients
each keep ``inflight_per_worker`` requests outstanding.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

from .block_cache import BlockCache
from .record import Record
from .table import LEARNED, TWO_LEVEL, TableHandle, build_table, open_table

POINT = "point"
SCAN = "scan"
_VALUE_CHUNK = 4096


@dataclass(frozen=True)
class WorkloadConfig:
    rows: int = 1_000_000
    value_size: int = 1024
    tau: int = 32768
    workers: int = 4
    inflight_per_worker: int = 16
    ops: int = 100_000
    workload: str = POINT
    scan_len: int = 100
    seed: int = 0
    cache_bytes: int = 8 << 20
    fetch_latency_us: float = 0.0

    def __post_init__(self):
        for name in ("rows", "value_size", "tau", "workers", "inflight_per_worker", "ops", "scan_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.workload not in (POINT, SCAN):
            raise ValueError(f"unknown workload {self.workload!r}")


class SyntheticTable:
    """Re-iterable sorted record stream fully determined by the config seed."""

    def __init__(self, config: WorkloadConfig):
        self.config = config
        self._keys: list[bytes] | None = None

    @property
    def keys(self) -> list[bytes]:
        if self._keys is None:
            self._keys = generate_keys(self.config.rows, self.config.seed)
        return self._keys

    def __len__(self) -> int:
        return self.config.rows

    def __iter__(self) -> Iterator[Record]:
        keys = self.keys
        vs = self.config.value_size
        for c in range(0, len(keys), _VALUE_CHUNK):
            chunk_keys = keys[c : c + _VALUE_CHUNK]
            rng = np.random.default_rng([self.config.seed, 1, c // _VALUE_CHUNK])
            blob = rng.bytes(len(chunk_keys) * vs)
            for j, k in enumerate(chunk_keys):
                yield Record(k, blob[j * vs : (j + 1) * vs])


def generate_keys(rows: int, seed: int) -> list[bytes]:
    """``rows`` distinct uniform 64-bit integers as sorted 20-digit keys."""
    rng = np.random.default_rng([seed, 0])
    drawn = np.unique(rng.integers(0, 2**64, size=rows, dtype=np.uint64))
    while len(drawn) < rows:
        extra = rng.integers(0, 2**64, size=rows - len(drawn), dtype=np.uint64)
        drawn = np.unique(np.concatenate([drawn, extra]))
    return [b"%020d" % v for v in drawn.tolist()]


def generate_table(config: WorkloadConfig) -> SyntheticTable:
    return SyntheticTable(config)


def query_indices(config: WorkloadConfig) -> np.ndarray:
    """Row indices to query, identical for every index kind under one seed."""
    rng = np.random.default_rng([config.seed, 2])
    return rng.integers(0, config.rows, size=config.ops)


def percentile(sorted_values: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value."""
    n = len(sorted_values)
    if n == 0:
        raise ValueError("no samples")
    rank = math.ceil(Fraction(str(p)) * n / 100)
    return sorted_values[min(max(rank, 1), n) - 1]


class BenchCorrectnessError(RuntimeError):
    pass


@dataclass
class WorkloadResult:
    index_kind: str
    config: WorkloadConfig
    samples: int
    mean_us: float
    p50_us: float
    p95_us: float
    p99_us: float
    throughput: float
    wall_s: float
    index_bytes: int
    data_bytes: int
    cache: dict
    query_digest: str
    phase: str = "cold"

    @property
    def latency_unit(self) -> str:
        return "us/row" if self.config.workload == SCAN else "us"

    @property
    def throughput_unit(self) -> str:
        return "rows/s" if self.config.workload == SCAN else "ops/s"

    def metrics(self) -> list[tuple[str, float, str]]:
        lu = self.latency_unit
        return [
            ("mean_latency", self.mean_us, lu),
            ("p50_latency", self.p50_us, lu),
            ("p95_latency", self.p95_us, lu),
            ("p99_latency", self.p99_us, lu),
            ("throughput", self.throughput, self.throughput_unit),
            ("index_bytes", self.index_bytes, "bytes"),
            ("data_bytes", self.data_bytes, "bytes"),
            ("cache_hits", self.cache["hits"], "count"),
            ("cache_misses", self.cache["misses"], "count"),
            ("cache_evictions", self.cache["evictions"], "count"),
            ("bytes_fetched", self.cache["bytes_fetched"], "bytes"),
        ]


def run_workload(
    table: TableHandle,
    config: WorkloadConfig,
    keys: Sequence[bytes],
    *,
    phase: str = "cold",
) -> WorkloadResult:
    """Drive ``config.ops`` requests against ``table`` and summarize latency.

    Raises :class:`BenchCorrectnessError` if a stored key is not returned.
    """
    idx = query_indices(config).tolist()
    digest = hashlib.sha256(b"\n".join(keys[i] for i in idx)).hexdigest()
    n_rows = len(keys)
    scan_len = config.scan_len
    failures: list[str] = []
    per_thread: list[list[int]] = []

    def one_op(i: int) -> None:
        key = keys[i]
        if config.workload == POINT:
            if table.get(key) is None:
                failures.append(f"get {key!r} returned not_found")
        else:
            got = table.scan(key, scan_len)
            if not got or got[0].key != key or len(got) != min(scan_len, n_rows - i):
                failures.append(f"scan {key!r} returned {len(got)} rows")

    threads = []
    barrier = threading.Barrier(config.workers * config.inflight_per_worker + 1)
    for w in range(config.workers):
        mine = idx[w :: config.workers]
        cursor = iter(range(len(mine)))
        lock = threading.Lock()
        for _ in range(config.inflight_per_worker):
            lat: list[int] = []
            per_thread.append(lat)

            def client(mine=mine, cursor=cursor, lock=lock, lat=lat):
                barrier.wait()
                clock = time.perf_counter_ns
                while not failures:
                    with lock:
                        j = next(cursor, None)
                    if j is None:
                        return
                    t0 = clock()
                    one_op(mine[j])
                    lat.append(clock() - t0)

            threads.append(threading.Thread(target=client, daemon=True))
    for t in threads:
        t.start()
    barrier.wait()
    start = time.perf_counter()
    for t in threads:
        t.join()
    wall = time.perf_counter() - start
    if failures:
        raise BenchCorrectnessError(failures[0])

    scale = 1000.0 * (scan_len if config.workload == SCAN else 1)
    lat_us = sorted(ns / scale for lat in per_thread for ns in lat)
    rate = len(lat_us) * (scan_len if config.workload == SCAN else 1) / wall
    stats = table.stats()
    return WorkloadResult(
        index_kind=table.index_kind,
        config=config,
        samples=len(lat_us),
        mean_us=sum(lat_us) / len(lat_us),
        p50_us=percentile(lat_us, 50),
        p95_us=percentile(lat_us, 95),
        p99_us=percentile(lat_us, 99),
        throughput=rate,
        wall_s=wall,
        index_bytes=stats.index_bytes,
        data_bytes=stats.data_bytes,
        cache=table.cache.stats.as_dict(),
        query_digest=digest,
        phase=phase,
    )


def compare(baseline: WorkloadResult, candidate: WorkloadResult) -> dict[str, float]:
    """Percent change of each metric from ``baseline`` to ``candidate``."""
    if baseline.config != candidate.config or baseline.phase != candidate.phase:
        raise ValueError("reports come from different configurations")
    out = {}
    for (name, a, _), (_, b, _) in zip(baseline.metrics(), candidate.metrics()):
        out[name] = 0.0 if a == b else (math.nan if a == 0 else (b - a) / a * 100.0)
    return out


@dataclass
class BenchReport:
    config: WorkloadConfig
    results: list[WorkloadResult]
    started_at: float
    finished_at: float
    comparisons: dict[str, dict[str, float]] = field(default_factory=dict)

    def rows(self) -> list[tuple[str, str, float, str]]:
        out = []
        for r in self.results:
            prefix = "" if r.phase == "cold" else f"{r.phase}_"
            for name, value, unit in r.metrics():
                out.append((prefix + name, r.index_kind, value, unit))
        for phase, deltas in self.comparisons.items():
            prefix = "" if phase == "cold" else f"{phase}_"
            for name, value in deltas.items():
                out.append((prefix + name, "learned_vs_two_level", value, "%"))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "index_kind", "value", "unit"])
        for metric, kind, value, unit in self.rows():
            w.writerow([metric, kind, f"{value:.6g}" if isinstance(value, float) else value, unit])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "config": asdict(self.config),
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "results": {},
            "comparison": self.comparisons,
        }
        for r in self.results:
            d = {name: value for name, value, _ in r.metrics()}
            d.update(samples=r.samples, wall_s=r.wall_s, query_digest=r.query_digest)
            doc["results"].setdefault(r.phase, {})[r.index_kind] = d
        return json.dumps(doc, indent=2, default=_nan_safe)


def _nan_safe(o):
    return str(o)


def run_bench(
    config: WorkloadConfig,
    workdir: str | os.PathLike | None = None,
    *,
    warm: bool = False,
) -> BenchReport:
    """Build both index kinds from one seed and measure each from a cold cache."""
    started = time.time()
    source = generate_table(config)
    results = []
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        for kind in (TWO_LEVEL, LEARNED):
            path = os.path.join(tmp, f"{kind}.sst")
            build_table(source, path, index_kind=kind, tau=config.tau)
            cache = BlockCache(config.cache_bytes, config.fetch_latency_us / 1e6)
            with open_table(path, cache) as table:
                results.append(run_workload(table, config, source.keys))
                if warm:
                    cache.reset_stats()
                    results.append(run_workload(table, config, source.keys, phase="warm"))
    by = {(r.phase, r.index_kind): r for r in results}
    comparisons = {
        phase: compare(by[(phase, TWO_LEVEL)], by[(phase, LEARNED)])
        for phase in ("cold", "warm")
        if (phase, LEARNED) in by
    }
    return BenchReport(config, results, started, time.time(), comparisons)


def with_overrides(config: WorkloadConfig, **kw) -> WorkloadConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})

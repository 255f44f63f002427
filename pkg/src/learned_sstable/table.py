"""Immutable block-partitioned table files.

File layout, all integers little-endian::

    [data blocks][index section][footer: 40 bytes]

    footer: magic "LIDXSST1" | u16 version | u8 index kind | u8 reserved
            | u64 index offset | u64 index length | u32 index crc
            | u32 reserved | u32 footer crc (over the preceding 36 bytes)

    learned index section:
        u64 record count | key encoder | linear model | compressed locator

    two-level index section:
        u64 record count | u32 index block size | u32 level-0 length
        | u32 level-1 length | level-0 block | level-1 blocks | compressed locator

The index crc covers the whole learned section.  For two-level tables it
covers everything except the level-1 blocks, which carry their own crc in
level 0 and are verified when fetched.

A data block is a run of framed records (varint key length, key, varint value
length, value) with no block trailer, so block sizes sum to the framed record
bytes.  Block start offsets and crcs live in the locator.

For learned tables the writer places record ``r`` in block
``predict_block(encode(r.key))``; the reader computes the same expression, so
a lookup reads exactly one data block and no index blocks.
"""

from __future__ import annotations

import itertools
import logging
import math
import os
import struct
from bisect import bisect_left
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from crc32c import crc32c

from .baseline_index import (
    DEFAULT_INDEX_BLOCK_SIZE,
    IndexBlock,
    TwoLevelIndex,
    build_two_level,
    lookup_two_level,
    parse_level0,
    parse_level1,
)
from .block_cache import BlockCache
from .errors import CorruptBlock, CorruptIndex, DegenerateModel, NotATableFile, UnsortedKeys
from .key_codec import DEFAULT_MAX_PREFIX, KeyEncoder, fit_encoder
from .learned_model import LinearModel, supervision_from_sizes, train_model
from .locator import BlockLocator, compress_locator, decompress_locator
from .record import Record, frame, record_size

log = logging.getLogger(__name__)

MAGIC = b"LIDXSST1"
VERSION = 1
LEARNED = "learned"
TWO_LEVEL = "two_level"
INDEX_KINDS = (LEARNED, TWO_LEVEL)
_KIND_CODE = {LEARNED: 0, TWO_LEVEL: 1}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}

DEFAULT_TAU = 32768
DEFAULT_CACHE_BYTES = 64 << 20

_FOOTER = struct.Struct("<8sHBBQQIII")
FOOTER_SIZE = _FOOTER.size
_U64 = struct.Struct("<Q")
_TWO_LEVEL_HEAD = struct.Struct("<QIII")

_table_ids = itertools.count()


@dataclass
class BuildReport:
    index_kind: str
    n_blocks: int
    record_count: int
    index_bytes: int
    data_bytes: int
    fell_back: bool = False


@dataclass
class DataBlock:
    keys: list[bytes]
    values: list[bytes]
    nbytes: int


def parse_block(buf: bytes) -> DataBlock:
    keys = []
    values = []
    pos = 0
    end = len(buf)
    try:
        while pos < end:
            n = buf[pos]
            if n < 0x80:
                pos += 1
            else:
                n, pos = _varint_slow(buf, pos)
            keys.append(buf[pos : pos + n])
            pos += n
            n = buf[pos]
            if n < 0x80:
                pos += 1
            else:
                n, pos = _varint_slow(buf, pos)
            values.append(buf[pos : pos + n])
            pos += n
    except IndexError as exc:
        raise CorruptBlock() from exc
    if pos != end:
        raise CorruptBlock()
    return DataBlock(keys, values, end)


def _varint_slow(buf, pos):
    result = 0
    shift = 0
    while True:
        b = buf[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if b < 0x80:
            return result, pos
        shift += 7


# -- writing -----------------------------------------------------------------


class _DataWriter:
    def __init__(self, f):
        self.f = f
        self.buf = bytearray()
        self.offsets = [0]
        self.checksums: list[int] = []

    @property
    def block_index(self) -> int:
        return len(self.checksums)

    def add(self, framed: bytes) -> None:
        self.buf += framed

    def pending(self) -> int:
        return len(self.buf)

    def close_block(self) -> None:
        data = bytes(self.buf)
        self.f.write(data)
        self.checksums.append(crc32c(data))
        self.offsets.append(self.offsets[-1] + len(data))
        self.buf.clear()


def _reiterable(records: Iterable[Record]) -> Iterable[Record]:
    if iter(records) is records:
        return list(records)
    return records


def _write_footer(f, kind: str, index_offset: int, index: bytes, index_crc: int) -> None:
    head = _FOOTER.pack(MAGIC, VERSION, _KIND_CODE[kind], 0, index_offset, len(index), index_crc, 0, 0)
    f.write(head[:-4] + struct.pack("<I", crc32c(head[:-4])))


def build_table(
    records: Iterable[Record],
    path: str | os.PathLike,
    *,
    index_kind: str = LEARNED,
    tau: int = DEFAULT_TAU,
    block_size: int | None = None,
    index_block_size: int = DEFAULT_INDEX_BLOCK_SIZE,
    max_prefix: int = DEFAULT_MAX_PREFIX,
) -> BuildReport:
    """Write a table from records sorted strictly ascending by key.

    ``records`` is iterated twice for learned tables (sizes first, then
    placement); a one-shot iterator is materialized.  A learned build whose
    encoded keys have zero variance falls back to a two-level table and sets
    ``fell_back`` in the report.
    """
    if index_kind not in INDEX_KINDS:
        raise ValueError(f"unknown index kind {index_kind!r}")
    if tau <= 0:
        raise ValueError("tau must be positive")
    block_size = tau if block_size is None else block_size
    records = _reiterable(records)

    if index_kind == TWO_LEVEL:
        return _build_two_level(records, path, block_size, index_block_size)

    keys: list[bytes] = []
    sizes: list[int] = []
    for key, value in records:
        keys.append(key)
        sizes.append(record_size(key, value))
    if not keys:
        raise ValueError("no records")
    encoder = fit_encoder(keys, max_prefix)
    sup = supervision_from_sizes(keys, sizes, encoder)
    try:
        model = train_model(sup)
    except DegenerateModel:
        log.warning("degenerate model for %s; writing a two-level table", path)
        report = _build_two_level(records, path, block_size, index_block_size)
        report.fell_back = True
        return report
    assert model.slope >= 0, "comonotone supervision must give a non-negative slope"

    n_blocks = max(1, math.ceil(sup.total_bytes / tau))
    predict = model.predict_block
    targets = [predict(x, tau, n_blocks) for x in sup.xs]
    del sup

    with open(path, "wb") as f:
        w = _DataWriter(f)
        i = -1
        for i, (key, value) in enumerate(records):
            if i >= len(keys) or key != keys[i]:
                raise ValueError("record stream changed between passes")
            target = targets[i]
            while w.block_index < target:
                w.close_block()
            assert w.block_index == target, "predicted blocks must be non-decreasing"
            w.add(frame(key, value))
        if i + 1 != len(keys):
            raise ValueError("record stream changed between passes")
        while w.block_index < n_blocks:
            w.close_block()
        locator = BlockLocator(tuple(w.offsets), tuple(w.checksums), tau)
        index = b"".join(
            (_U64.pack(len(keys)), encoder.to_bytes(), model.to_bytes(), compress_locator(locator))
        )
        index_offset = w.offsets[-1]
        f.write(index)
        _write_footer(f, LEARNED, index_offset, index, crc32c(index))
    return BuildReport(LEARNED, n_blocks, len(keys), len(index), locator.data_bytes)


def _build_two_level(records, path, block_size: int, index_block_size: int) -> BuildReport:
    entries: list[tuple[bytes, int]] = []
    count = 0
    prev = None
    with open(path, "wb") as f:
        w = _DataWriter(f)
        for key, value in records:
            if prev is not None and key <= prev:
                raise UnsortedKeys()
            framed = frame(key, value)
            if w.pending() and w.pending() + len(framed) > block_size:
                entries.append((prev, w.block_index))
                w.close_block()
            w.add(framed)
            prev = key
            count += 1
        if not count:
            raise ValueError("no records")
        entries.append((prev, w.block_index))
        w.close_block()
        locator = BlockLocator(tuple(w.offsets), tuple(w.checksums), block_size)
        level0, level1 = build_two_level(entries, index_block_size)
        head = _TWO_LEVEL_HEAD.pack(count, index_block_size, len(level0), len(level1))
        loc = compress_locator(locator)
        index = b"".join((head, level0, level1, loc))
        index_crc = crc32c(loc, crc32c(head + level0))
        index_offset = w.offsets[-1]
        f.write(index)
        _write_footer(f, TWO_LEVEL, index_offset, index, index_crc)
    return BuildReport(TWO_LEVEL, locator.n_blocks, count, len(index), locator.data_bytes)


# -- reading -----------------------------------------------------------------


@dataclass
class TableStats:
    index_kind: str
    index_bytes: int
    data_bytes: int
    n_blocks: int
    record_count: int
    tau: int
    block_sizes: list[int] = field(repr=False)
    histogram: dict[int, int] = field(default_factory=dict)

    @property
    def empty_blocks(self) -> int:
        return sum(1 for s in self.block_sizes if s == 0)

    def fraction_within(self, lo: float, hi: float) -> float:
        """Share of non-empty blocks whose size lies in ``[lo*tau, hi*tau]``."""
        sizes = [s for s in self.block_sizes if s > 0]
        if not sizes:
            return 0.0
        a, b = lo * self.tau, hi * self.tau
        return sum(1 for s in sizes if a <= s <= b) / len(sizes)

    def as_dict(self) -> dict:
        return {
            "index_kind": self.index_kind,
            "index_bytes": self.index_bytes,
            "data_bytes": self.data_bytes,
            "n_blocks": self.n_blocks,
            "record_count": self.record_count,
            "tau": self.tau,
            "empty_blocks": self.empty_blocks,
            "within_half_tau": self.fraction_within(0.5, 1.5),
            "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
        }


@dataclass
class AuditResult:
    records: int
    mismatches: int


class TableHandle:
    """An open table.  Safe to share between threads for get and scan."""

    def __init__(self, path, cache: BlockCache | None = None, *, prefetch: bool = True):
        self.path = os.fspath(path)
        self.cache = cache if cache is not None else BlockCache(DEFAULT_CACHE_BYTES)
        self.table_id = next(_table_ids)
        self._prefetch = prefetch
        self._pool: ThreadPoolExecutor | None = None
        self.encoder: KeyEncoder | None = None
        self.model: LinearModel | None = None
        self.index: TwoLevelIndex | None = None
        self._fd = os.open(self.path, os.O_RDONLY)
        try:
            self._load()
        except BaseException:
            os.close(self._fd)
            raise

    def _pread(self, n: int, offset: int) -> bytes:
        return os.pread(self._fd, n, offset)

    def _load(self) -> None:
        size = os.fstat(self._fd).st_size
        if size < FOOTER_SIZE:
            raise NotATableFile()
        raw = self._pread(FOOTER_SIZE, size - FOOTER_SIZE)
        magic, version, kind, _, ioff, ilen, icrc, _, fcrc = _FOOTER.unpack(raw)
        if magic != MAGIC or version != VERSION or kind not in _CODE_KIND:
            raise NotATableFile()
        if crc32c(raw[:-4]) != fcrc or ioff + ilen != size - FOOTER_SIZE:
            raise NotATableFile()
        self.index_kind = _CODE_KIND[kind]
        self.index_bytes = ilen
        try:
            if self.index_kind == LEARNED:
                self._load_learned(ioff, ilen, icrc)
            else:
                self._load_two_level(ioff, ilen, icrc)
        except (struct.error, ValueError, IndexError) as exc:
            raise CorruptIndex() from exc
        if self.locator.offsets[-1] != ioff or self.locator.offsets[0] != 0:
            raise CorruptIndex()

    def _load_learned(self, ioff: int, ilen: int, icrc: int) -> None:
        buf = self._pread(ilen, ioff)
        if len(buf) != ilen or crc32c(buf) != icrc:
            raise CorruptIndex()
        (self.record_count,) = _U64.unpack_from(buf, 0)
        self.encoder, pos = KeyEncoder.from_bytes(buf, _U64.size)
        self.model, pos = LinearModel.from_bytes(buf, pos)
        self.locator = decompress_locator(buf, pos)
        self.tau = self.locator.tau

    def _load_two_level(self, ioff: int, ilen: int, icrc: int) -> None:
        head = self._pread(_TWO_LEVEL_HEAD.size, ioff)
        count, ibs, l0, l1 = _TWO_LEVEL_HEAD.unpack(head)
        level0 = self._pread(l0, ioff + len(head))
        loc_off = len(head) + l0 + l1
        loc = self._pread(ilen - loc_off, ioff + loc_off)
        if loc_off > ilen or crc32c(loc, crc32c(head + level0)) != icrc:
            raise CorruptIndex()
        self.record_count = count
        self.index = parse_level0(level0, ibs)
        self._level1_base = ioff + len(head) + l0
        self.locator = decompress_locator(loc)
        self.tau = self.locator.tau

    # -- block access --------------------------------------------------------

    @property
    def n_blocks(self) -> int:
        return self.locator.n_blocks

    def _read_block(self, b: int) -> DataBlock:
        off, length = self.locator.span(b)
        buf = self._pread(length, off)
        if len(buf) != length or crc32c(buf) != self.locator.checksums[b]:
            raise CorruptBlock()
        return parse_block(buf)

    def data_block(self, b: int) -> DataBlock:
        return self.cache.get_block(self.table_id, ("d", b), lambda: self._read_block(b))

    def _read_level1(self, j: int) -> IndexBlock:
        off, length, crc = self.index.level1_handles[j]
        return parse_level1(self._pread(length, self._level1_base + off), crc)

    def level1_block(self, j: int) -> IndexBlock:
        return self.cache.get_block(self.table_id, ("i", j), lambda: self._read_level1(j))

    def locate(self, key: bytes) -> int | None:
        """Block that holds ``key`` if present; ``None`` if past the last key."""
        if self.index_kind == LEARNED:
            return self.model.predict_block(self.encoder.encode(key), self.tau, self.locator.n_blocks)
        return lookup_two_level(self.index, key, self.level1_block)

    def _prefetch_block(self, b: int) -> None:
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=4, thread_name_prefix="prefetch")
        fut = self._pool.submit(self.data_block, b)
        fut.add_done_callback(_log_prefetch_failure)

    # -- queries -------------------------------------------------------------

    def get(self, key: bytes) -> bytes | None:
        b = self.locate(key)
        if b is None:
            return None
        off, length = self.locator.span(b)
        if length == 0:
            return None
        blk = self.data_block(b)
        i = bisect_left(blk.keys, key)
        if i < len(blk.keys) and blk.keys[i] == key:
            return blk.values[i]
        return None

    def scan(self, start_key: bytes, n: int) -> list[Record]:
        """Up to ``n`` consecutive records starting at the first key >= ``start_key``."""
        if n < 1:
            raise ValueError("n must be >= 1")
        b = self.locate(start_key)
        out: list[Record] = []
        if b is None:
            return out
        sizes = self.locator.offsets
        avg = max(1.0, self.locator.data_bytes / max(1, self.record_count))
        first = True
        while b < self.n_blocks and len(out) < n:
            length = sizes[b + 1] - sizes[b]
            if length == 0:
                b += 1
                continue
            need = n - len(out)
            if self._prefetch and not first and b + 1 < self.n_blocks and need > length / avg:
                self._prefetch_block(b + 1)
            blk = self.data_block(b)
            i = bisect_left(blk.keys, start_key) if first else 0
            first = False
            stop = min(len(blk.keys), i + need)
            out.extend(Record(blk.keys[j], blk.values[j]) for j in range(i, stop))
            b += 1
        return out

    def __iter__(self) -> Iterator[Record]:
        for b in range(self.n_blocks):
            if self.locator.offsets[b + 1] == self.locator.offsets[b]:
                continue
            blk = self._read_block(b)
            yield from map(Record, blk.keys, blk.values)

    def stats(self) -> TableStats:
        sizes = self.locator.block_sizes()
        width = max(1, self.tau // 8)
        hist = Counter((s // width) * width for s in sizes)
        return TableStats(
            self.index_kind,
            self.index_bytes,
            self.locator.data_bytes,
            self.n_blocks,
            self.record_count,
            self.tau,
            sizes,
            dict(hist),
        )

    def audit(self) -> AuditResult:
        """Check that the index routes every stored key to the block holding it.

        Reads blocks directly, bypassing the cache.
        """
        seen = 0
        bad = 0
        for b in range(self.n_blocks):
            if self.locator.offsets[b + 1] == self.locator.offsets[b]:
                continue
            for key in self._read_block(b).keys:
                seen += 1
                if self.index_kind == LEARNED:
                    got = self.model.predict_block(self.encoder.encode(key), self.tau, self.n_blocks)
                else:
                    got = lookup_two_level(self.index, key, self._read_level1)
                bad += got != b
        return AuditResult(seen, bad)

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _log_prefetch_failure(fut) -> None:
    exc = fut.exception()
    if exc is not None:
        log.debug("prefetch failed: %s", exc)


def open_table(path, cache: BlockCache | None = None, **kwargs) -> TableHandle:
    return TableHandle(path, cache, **kwargs)

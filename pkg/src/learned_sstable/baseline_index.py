"""Two-level block index keyed by the last key of each data block.

Level-1 blocks hold ``(last_key, block_id)`` entries for consecutive data
blocks.  The level-0 block holds, for each level-1 block, its last key, its
position inside the level-1 region, its length and its CRC32C.  Level 0 stays
in memory; level-1 blocks are read through the block cache.

Entry encodings (all varints are unsigned LEB128)::

    level-1 entry:  varint klen | key | varint block_id
    level-0 entry:  varint klen | key | varint offset | varint length | u32 crc
"""

from __future__ import annotations

import struct
from bisect import bisect_left
from dataclasses import dataclass
from typing import Callable, Sequence

from crc32c import crc32c

from .errors import CorruptIndexBlock, UnsortedKeys
from .varint import decode_varint, encode_varint

DEFAULT_INDEX_BLOCK_SIZE = 4096

_U32 = struct.Struct("<I")


@dataclass
class IndexBlock:
    """A decoded level-1 block."""

    keys: list[bytes]
    block_ids: list[int]
    nbytes: int


@dataclass
class TwoLevelIndex:
    level0_keys: list[bytes]
    # (offset within level-1 region, length, crc) per level-1 block
    level1_handles: list[tuple[int, int, int]]
    index_block_size: int = DEFAULT_INDEX_BLOCK_SIZE

    @property
    def n_level1(self) -> int:
        return len(self.level1_handles)


def _entry(key: bytes, block_id: int) -> bytes:
    return encode_varint(len(key)) + key + encode_varint(block_id)


def build_two_level(
    entries: Sequence[tuple[bytes, int]], index_block_size: int = DEFAULT_INDEX_BLOCK_SIZE
) -> tuple[bytes, bytes]:
    """Pack ``(last_key, block_id)`` entries into level-0 and level-1 bytes.

    A level-1 block takes entries until the next one would push it past
    ``index_block_size``; every block holds at least one entry.
    Returns ``(level0_bytes, level1_bytes)``.
    """
    if not entries:
        raise ValueError("no index entries")
    level1 = bytearray()
    level0 = bytearray()
    block = bytearray()
    last = None
    prev = None

    def flush():
        crc = crc32c(bytes(block))
        level0.extend(encode_varint(len(last)) + last)
        level0.extend(encode_varint(len(level1)) + encode_varint(len(block)))
        level0.extend(_U32.pack(crc))
        level1.extend(block)
        block.clear()

    for key, block_id in entries:
        if prev is not None and key <= prev:
            raise UnsortedKeys("index entries not strictly sorted")
        prev = key
        e = _entry(key, block_id)
        if block and len(block) + len(e) > index_block_size:
            flush()
        block.extend(e)
        last = key
    flush()
    return bytes(level0), bytes(level1)


def parse_level0(buf, index_block_size: int = DEFAULT_INDEX_BLOCK_SIZE) -> TwoLevelIndex:
    keys = []
    handles = []
    pos = 0
    end = len(buf)
    while pos < end:
        klen, pos = decode_varint(buf, pos)
        keys.append(bytes(buf[pos : pos + klen]))
        pos += klen
        off, pos = decode_varint(buf, pos)
        length, pos = decode_varint(buf, pos)
        (crc,) = _U32.unpack_from(buf, pos)
        pos += 4
        handles.append((off, length, crc))
    return TwoLevelIndex(keys, handles, index_block_size)


def parse_level1(buf, expected_crc: int) -> IndexBlock:
    if crc32c(buf) != expected_crc:
        raise CorruptIndexBlock()
    keys = []
    ids = []
    pos = 0
    end = len(buf)
    while pos < end:
        klen, pos = decode_varint(buf, pos)
        keys.append(buf[pos : pos + klen])
        pos += klen
        bid, pos = decode_varint(buf, pos)
        ids.append(bid)
    return IndexBlock(keys, ids, len(buf))


def lookup_two_level(index: TwoLevelIndex, key: bytes, fetch_level1: Callable[[int], IndexBlock]) -> int | None:
    """Data block that would hold ``key``, or ``None`` past the last block.

    ``fetch_level1(j)`` returns the decoded level-1 block ``j``, normally
    through the shared block cache.
    """
    j = bisect_left(index.level0_keys, key)
    if j == len(index.level0_keys):
        return None
    blk = fetch_level1(j)
    i = bisect_left(blk.keys, key)
    # level-0 separators are the last key of each level-1 block, so i is in range
    return blk.block_ids[i]

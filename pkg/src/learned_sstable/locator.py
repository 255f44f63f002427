"""Block locator: start offset and checksum of every data block.

Offsets are stored as residuals from an ideal uniform layout
``B[0] + i * tau``; with near-equal blocks the residuals stay small and
varint-encode compactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import CorruptLocator
from .varint import decode_varint, encode_varint, unzigzag, zigzag


@dataclass(frozen=True)
class BlockLocator:
    offsets: tuple[int, ...]
    checksums: tuple[int, ...]
    tau: int

    def __post_init__(self):
        if len(self.offsets) != len(self.checksums) + 1:
            raise ValueError("need exactly one more offset than checksums")
        if any(b > a for a, b in zip(self.offsets[1:], self.offsets)):
            raise ValueError("offsets must be non-decreasing")

    @property
    def n_blocks(self) -> int:
        return len(self.checksums)

    @property
    def data_bytes(self) -> int:
        return self.offsets[-1] - self.offsets[0]

    def span(self, block: int) -> tuple[int, int]:
        """``(offset, length)`` of ``block`` in the file."""
        start = self.offsets[block]
        return start, self.offsets[block + 1] - start

    def block_sizes(self) -> list[int]:
        o = self.offsets
        return [o[i + 1] - o[i] for i in range(len(o) - 1)]


def compress_locator(loc: BlockLocator) -> bytes:
    base = loc.offsets[0]
    tau = loc.tau
    out = bytearray()
    out += encode_varint(base)
    out += encode_varint(loc.n_blocks)
    out += encode_varint(tau)
    for i, off in enumerate(loc.offsets):
        out += encode_varint(zigzag(off - (base + i * tau)))
    out += struct.pack(f"<{loc.n_blocks}I", *loc.checksums)
    return bytes(out)


def decompress_locator(buf, pos: int = 0, end: int | None = None) -> BlockLocator:
    end = len(buf) if end is None else end
    try:
        base, pos = decode_varint(buf, pos)
        n, pos = decode_varint(buf, pos)
        tau, pos = decode_varint(buf, pos)
        offsets = []
        for i in range(n + 1):
            r, pos = decode_varint(buf, pos)
            offsets.append(base + i * tau + unzigzag(r))
    except (IndexError, ValueError) as exc:
        raise CorruptLocator() from exc
    if pos > end or end - pos != 4 * n:
        raise CorruptLocator()
    sums = struct.unpack_from(f"<{n}I", buf, pos)
    try:
        return BlockLocator(tuple(offsets), sums, tau)
    except ValueError as exc:
        raise CorruptLocator() from exc

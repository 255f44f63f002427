"""Mixed-radix encoding of byte-string keys into order-preserving integers.

Each character position gets its own base, sized to the range of byte values
seen at that position in the fitted key population.  A position where some
fitted key has already ended gets one extra code (0) meaning "key ends here",
so shorter keys sort before their extensions.

Encoded values are exact integers no larger than 2**53 - 1, so they survive
conversion to float64 without loss.
"""

from __future__ import annotations

import struct
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DEFAULT_MAX_PREFIX = 32
PRECISION_LIMIT = 2**53

_LOW = -1
_HIGH = -2

_HEAD = struct.Struct("<H")
_POS = struct.Struct("<BHB")


@dataclass(frozen=True)
class KeyEncoder:
    prefix_len: int
    mins: tuple[int, ...]
    bases: tuple[int, ...]
    has_absent: tuple[bool, ...]
    weights: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        if not (len(self.mins) == len(self.bases) == len(self.has_absent) == self.prefix_len):
            raise ValueError("per-position tables must have prefix_len entries")
        weights = [1] * self.prefix_len
        for i in range(self.prefix_len - 2, -1, -1):
            weights[i] = self.bases[i + 1] * weights[i + 1]
        object.__setattr__(self, "weights", tuple(weights))

        # Per-position lookup tables: byte -> code * weight, or a saturation
        # marker for bytes outside the fitted range.
        luts = []
        low = []
        high = []
        for i in range(self.prefix_len):
            w = weights[i]
            shift = 1 if self.has_absent[i] else 0
            lo = self.mins[i]
            hi = lo + self.bases[i] - shift - 1
            lut = [_LOW] * lo + [(b - lo + shift) * w for b in range(lo, hi + 1)]
            lut += [_HIGH] * (256 - len(lut))
            luts.append(lut)
            low.append(shift * w)
            # top code here, then top code at every later position
            high.append((self.bases[i] - 1) * w + w - 1)
        object.__setattr__(self, "_luts", luts)
        object.__setattr__(self, "_low", low)
        object.__setattr__(self, "_high", high)

    @property
    def max_code(self) -> int:
        """Largest value :meth:`encode` can return."""
        return (self.bases[0] * self.weights[0] - 1) if self.prefix_len else 0

    def encode(self, key: bytes) -> int:
        """Map ``key`` to a non-negative integer.

        Bytes outside a position's fitted range saturate: a byte below the
        minimum zeroes every later position, a byte above the maximum fills
        every later position with its top code.  This keeps the mapping
        monotone for arbitrary query keys, not just fitted ones.
        """
        total = 0
        luts = self._luts
        for i in range(min(len(key), self.prefix_len)):
            v = luts[i][key[i]]
            if v >= 0:
                total += v
            elif v == _LOW:
                return total + self._low[i]
            else:
                return total + self._high[i]
        return total

    def to_bytes(self) -> bytes:
        parts = [_HEAD.pack(self.prefix_len)]
        for lo, base, absent in zip(self.mins, self.bases, self.has_absent):
            parts.append(_POS.pack(lo, base, 1 if absent else 0))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf, pos: int = 0) -> tuple["KeyEncoder", int]:
        (p,) = _HEAD.unpack_from(buf, pos)
        pos += _HEAD.size
        mins, bases, absent = [], [], []
        for _ in range(p):
            lo, base, flag = _POS.unpack_from(buf, pos)
            pos += _POS.size
            mins.append(lo)
            bases.append(base)
            absent.append(bool(flag))
        return cls(p, tuple(mins), tuple(bases), tuple(absent)), pos


def fit_encoder(keys: Iterable[bytes], max_prefix: int = DEFAULT_MAX_PREFIX) -> KeyEncoder:
    """Fit per-position ranges over ``keys`` (any order).

    The number of positions used is the largest ``p <= max_prefix`` whose
    product of bases stays within 2**53.
    """
    if max_prefix < 1:
        raise ValueError("max_prefix must be >= 1")
    by_len: dict[int, list[bytes]] = defaultdict(list)
    for k in keys:
        by_len[len(k)].append(bytes(k))
    if not by_len:
        raise ValueError("no keys")

    width = min(max_prefix, max(by_len))
    min_len = min(by_len)
    mins = np.full(width, 255, dtype=np.int64)
    maxs = np.full(width, -1, dtype=np.int64)
    for length, group in by_len.items():
        cols = min(length, width)
        if cols == 0:
            continue
        arr = np.frombuffer(b"".join(group), dtype=np.uint8).reshape(len(group), length)[:, :cols]
        np.minimum(mins[:cols], arr.min(axis=0), out=mins[:cols])
        np.maximum(maxs[:cols], arr.max(axis=0), out=maxs[:cols])

    absent = [min_len <= i for i in range(width)]
    bases = [int(maxs[i] - mins[i] + 1) + int(absent[i]) for i in range(width)]

    p = 0
    product = 1
    while p < width and product * bases[p] <= PRECISION_LIMIT:
        product *= bases[p]
        p += 1
    return KeyEncoder(
        prefix_len=p,
        mins=tuple(int(m) for m in mins[:p]),
        bases=tuple(bases[:p]),
        has_absent=tuple(absent[:p]),
    )


def encode_all(encoder: KeyEncoder, keys: Sequence[bytes]) -> list[int]:
    enc = encoder.encode
    return [enc(k) for k in keys]

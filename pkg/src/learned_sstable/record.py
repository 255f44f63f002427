"""Key/value records and their on-disk framing."""

from __future__ import annotations

from typing import NamedTuple

from .varint import encode_varint


class Record(NamedTuple):
    key: bytes
    value: bytes


def varint_len(n: int) -> int:
    size = 1
    while n >= 0x80:
        n >>= 7
        size += 1
    return size


def record_size(key: bytes, value: bytes) -> int:
    """Framed length: varint key length, key, varint value length, value."""
    return varint_len(len(key)) + len(key) + varint_len(len(value)) + len(value)


def frame(key: bytes, value: bytes) -> bytes:
    return b"".join((encode_varint(len(key)), key, encode_varint(len(value)), value))

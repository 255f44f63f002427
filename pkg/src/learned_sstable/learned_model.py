"""Closed-form least-squares model from encoded keys to byte offsets."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from numbers import Integral
from typing import Iterable, Sequence

from .errors import DegenerateModel, UnsortedKeys
from .key_codec import KeyEncoder
from .record import Record, record_size

_MODEL = struct.Struct("<ddQ")


@dataclass(frozen=True)
class Supervision:
    """Encoded keys paired with the number of bytes preceding each record."""

    xs: list[int]
    ys: list[int]
    total_bytes: int

    def __post_init__(self):
        if len(self.xs) != len(self.ys):
            raise ValueError("xs and ys differ in length")


def supervision_from_sizes(keys: Sequence[bytes], sizes: Sequence[int], encoder: KeyEncoder) -> Supervision:
    """``ys[i]`` is the summed size of every record before ``keys[i]``."""
    if len(keys) != len(sizes):
        raise ValueError("keys and sizes differ in length")
    ys = []
    acc = 0
    prev = None
    for k, s in zip(keys, sizes):
        if prev is not None and k <= prev:
            raise UnsortedKeys()
        prev = k
        ys.append(acc)
        acc += s
    enc = encoder.encode
    return Supervision([enc(k) for k in keys], ys, acc)


def build_supervision(records: Iterable[Record], encoder: KeyEncoder) -> Supervision:
    keys = []
    sizes = []
    for key, value in records:
        keys.append(key)
        sizes.append(record_size(key, value))
    return supervision_from_sizes(keys, sizes, encoder)


def _exact(v):
    if isinstance(v, Integral):
        return int(v)
    return Fraction(v)


@dataclass(frozen=True)
class LinearModel:
    slope: float
    intercept: float
    clamp_max: int

    def predict_offset(self, x) -> float:
        y = self.slope * float(x) + self.intercept
        if y <= 0.0:
            return 0.0
        if y >= self.clamp_max:
            return float(self.clamp_max)
        return y

    def predict_block(self, x, tau: int, n_blocks: int) -> int:
        b = math.floor(self.predict_offset(x) / tau)
        return b if b < n_blocks else n_blocks - 1

    def to_bytes(self) -> bytes:
        return _MODEL.pack(self.slope, self.intercept, self.clamp_max)

    @classmethod
    def from_bytes(cls, buf, pos: int = 0) -> tuple["LinearModel", int]:
        slope, intercept, clamp_max = _MODEL.unpack_from(buf, pos)
        return cls(slope, intercept, clamp_max), pos + _MODEL.size


def train_ols(xs: Sequence, ys: Sequence, clamp_max: int | None = None) -> LinearModel:
    """Fit ``y ~ slope * x + intercept`` in one pass.

    The four moment sums are accumulated exactly (integers, or fractions for
    float inputs), so the only rounding is the final conversion of slope and
    intercept to float.  Raises :class:`DegenerateModel` if ``xs`` has zero
    variance.
    """
    n = len(xs)
    if n == 0:
        raise ValueError("empty supervision")
    if len(ys) != n:
        raise ValueError("xs and ys differ in length")
    sx = sy = sxx = sxy = 0
    for x, y in zip(xs, ys):
        x = _exact(x)
        y = _exact(y)
        sx += x
        sy += y
        sxx += x * x
        sxy += x * y
    var_n = n * sxx - sx * sx
    if var_n == 0:
        raise DegenerateModel("encoded keys have zero variance")
    cov_n = n * sxy - sx * sy
    slope = Fraction(cov_n) / var_n
    intercept = (Fraction(sy) - slope * sx) / n
    if clamp_max is None:
        clamp_max = max(0, math.ceil(max(ys)))
    return LinearModel(float(slope), float(intercept), int(clamp_max))


def train_model(sup: Supervision) -> LinearModel:
    """Train on a supervision set; the prediction ceiling is the table's total bytes."""
    return train_ols(sup.xs, sup.ys, clamp_max=sup.total_bytes)

"""Sorted block tables with a learned index that decides block boundaries."""

from .block_cache import BlockCache, CacheStats
from .errors import (
    CorruptBlock,
    CorruptIndex,
    CorruptIndexBlock,
    CorruptLocator,
    DegenerateModel,
    NotATableFile,
    TableError,
    UnsortedKeys,
)
from .key_codec import KeyEncoder, fit_encoder
from .learned_model import LinearModel, Supervision, build_supervision, train_ols
from .locator import BlockLocator, compress_locator, decompress_locator
from .record import Record
from .table import LEARNED, TWO_LEVEL, BuildReport, TableHandle, TableStats, build_table, open_table

__version__ = "0.1.0"

__all__ = [
    "BlockCache",
    "BlockLocator",
    "BuildReport",
    "CacheStats",
    "CorruptBlock",
    "CorruptIndex",
    "CorruptIndexBlock",
    "CorruptLocator",
    "DegenerateModel",
    "KeyEncoder",
    "LEARNED",
    "LinearModel",
    "NotATableFile",
    "Record",
    "Supervision",
    "TWO_LEVEL",
    "TableError",
    "TableHandle",
    "TableStats",
    "UnsortedKeys",
    "build_supervision",
    "build_table",
    "compress_locator",
    "decompress_locator",
    "fit_encoder",
    "open_table",
    "train_ols",
]

"""Command-line interface: build, get, scan, stats and bench.

Exit status is 0 on success, 1 on usage errors or a missing key, and 2 on
data or corruption errors.  Results go to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import mmap
import os
import sys
from typing import Iterator

from .bench import POINT, SCAN, SyntheticTable, WorkloadConfig, run_bench
from .block_cache import BlockCache
from .errors import TableError
from .record import Record
from .table import LEARNED, TWO_LEVEL, build_table, open_table
from .varint import decode_varint

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

_KINDS = {"learned": LEARNED, "two-level": TWO_LEVEL}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class FileRecords:
    """Re-iterable records from a length-prefixed binary file or a TSV file."""

    def __init__(self, path: str, text: bool = False):
        self.path = path
        self.text = text

    def __iter__(self) -> Iterator[Record]:
        return self._iter_text() if self.text else self._iter_binary()

    def _iter_text(self):
        with open(self.path, "rb") as f:
            for n, line in enumerate(f, 1):
                line = line.rstrip(b"\r\n")
                if not line:
                    continue
                key, sep, value = line.partition(b"\t")
                if not sep:
                    raise ValueError(f"{self.path}:{n}: expected key<TAB>value")
                yield Record(key, value)

    def _iter_binary(self):
        with open(self.path, "rb") as f:
            if os.fstat(f.fileno()).st_size == 0:
                return
            with mmap.mmap(f.fileno(), 0, access=mmap.ACCESS_READ) as m:
                pos, end = 0, len(m)
                try:
                    while pos < end:
                        n, pos = decode_varint(m, pos)
                        key = m[pos : pos + n]
                        pos += n
                        n, pos = decode_varint(m, pos)
                        value = m[pos : pos + n]
                        pos += n
                        if pos > end:
                            raise IndexError
                        yield Record(key, value)
                except IndexError:
                    raise ValueError(f"{self.path}: truncated record at byte {pos}") from None


def _mb(v: str) -> int:
    return int(float(v) * (1 << 20))


def _cache(args) -> BlockCache:
    return BlockCache(args.cache_mb, args.fetch_latency_us / 1e6)


def _emit(rows: list[tuple], fmt: str, header=("metric", "value")) -> None:
    if fmt == "json":
        json.dump({r[0]: r[1] for r in rows}, sys.stdout, indent=2)
        sys.stdout.write("\n")
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_build(args) -> int:
    if args.synthetic:
        cfg = WorkloadConfig(rows=args.rows, value_size=args.value_size, tau=args.tau, seed=args.seed)
        source = SyntheticTable(cfg)
    elif args.input:
        source = FileRecords(args.input, text=args.text)
    else:
        raise UsageError("build needs --input or --synthetic")
    report = build_table(
        source, args.table, index_kind=_KINDS[args.index_type], tau=args.tau, block_size=args.block_size
    )
    _emit(list(vars(report).items()), args.format)
    return EXIT_OK


def cmd_get(args) -> int:
    with open_table(args.table, _cache(args)) as t:
        value = t.get(args.key.encode())
    if value is None:
        print(f"key not found: {args.key}", file=sys.stderr)
        return EXIT_USAGE
    sys.stdout.buffer.write(value)
    sys.stdout.buffer.flush()
    return EXIT_OK


def cmd_scan(args) -> int:
    with open_table(args.table, _cache(args)) as t:
        rows = t.scan(args.start.encode(), args.count)
    out = sys.stdout.buffer
    for key, value in rows:
        out.write(key + b"\t" + (value.hex().encode() if args.hex else value) + b"\n")
    out.flush()
    return EXIT_OK


def cmd_stats(args) -> int:
    with open_table(args.table, _cache(args)) as t:
        stats = t.stats()
    if args.format == "json":
        json.dump(stats.as_dict(), sys.stdout, indent=2)
        sys.stdout.write("\n")
    else:
        d = stats.as_dict()
        hist = d.pop("histogram")
        rows = list(d.items()) + [(f"histogram[{k}]", v) for k, v in hist.items()]
        _emit(rows, "csv")
    if args.plot:
        from .plotting import plot_block_sizes

        plot_block_sizes(stats, args.plot)
        print(f"wrote {args.plot}", file=sys.stderr)
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = WorkloadConfig(
        rows=args.rows,
        value_size=args.value_size,
        tau=args.tau,
        workers=args.workers,
        inflight_per_worker=args.inflight,
        ops=args.ops,
        workload=args.workload,
        scan_len=args.scan_len,
        seed=args.seed,
        cache_bytes=args.cache_mb,
        fetch_latency_us=args.fetch_latency_us,
    )
    report = run_bench(cfg, args.workdir, warm=args.warm)
    sys.stdout.write(report.to_json() + "\n" if args.format == "json" else report.to_csv())
    sys.stdout.flush()
    if args.plot_dir:
        from .plotting import plot_bench

        for p in plot_bench(report, args.plot_dir):
            print(f"wrote {p}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="learned-sstable", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cache_flags(sp, default_mb="64"):
        sp.add_argument("--cache-mb", type=_mb, default=_mb(default_mb), help="block cache size in MiB")
        sp.add_argument("--fetch-latency-us", type=float, default=0.0, help="synthetic delay per cache miss")

    b = sub.add_parser("build", help="write a table file")
    b.add_argument("--table", required=True, help="output table path")
    src = b.add_mutually_exclusive_group()
    src.add_argument("--input", help="sorted records: length-prefixed binary, or TSV with --text")
    src.add_argument("--synthetic", action="store_true", help="generate random integer-string keys")
    b.add_argument("--text", action="store_true", help="input is key<TAB>value lines")
    b.add_argument("--rows", type=int, default=1_000_000)
    b.add_argument("--value-size", type=int, default=1024)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--tau", type=int, default=32768, help="target average block size in bytes")
    b.add_argument("--block-size", type=int, default=None, help="two-level block size (default: tau)")
    b.add_argument("--index-type", choices=sorted(_KINDS), default="learned")
    b.add_argument("--format", choices=("csv", "json"), default="csv")
    b.set_defaults(func=cmd_build)

    g = sub.add_parser("get", help="print the value stored under a key")
    g.add_argument("--table", required=True)
    g.add_argument("--key", required=True)
    cache_flags(g)
    g.set_defaults(func=cmd_get)

    s = sub.add_parser("scan", help="print consecutive records from a start key")
    s.add_argument("--table", required=True)
    s.add_argument("--start", required=True)
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--hex", action="store_true", help="hex-encode values")
    cache_flags(s)
    s.set_defaults(func=cmd_scan)

    st = sub.add_parser("stats", help="index size and block size distribution")
    st.add_argument("--table", required=True)
    st.add_argument("--format", choices=("csv", "json"), default="csv")
    st.add_argument("--plot", help="write a block-size histogram to this image path")
    cache_flags(st)
    st.set_defaults(func=cmd_stats)

    be = sub.add_parser("bench", help="compare learned and two-level tables")
    be.add_argument("--rows", type=int, default=1_000_000)
    be.add_argument("--value-size", type=int, default=1024)
    be.add_argument("--tau", type=int, default=32768)
    be.add_argument("--workers", type=int, default=4)
    be.add_argument("--inflight", type=int, default=16)
    be.add_argument("--ops", type=int, default=100_000)
    be.add_argument("--workload", choices=(POINT, SCAN), default=POINT)
    be.add_argument("--scan-len", type=int, default=100)
    be.add_argument("--seed", type=int, default=0)
    be.add_argument("--format", choices=("csv", "json"), default="csv")
    be.add_argument("--warm", action="store_true", help="also measure a warm-cache phase")
    be.add_argument("--workdir", help="directory for temporary table files")
    be.add_argument("--plot-dir", help="write comparison figures here")
    cache_flags(be, default_mb="8")
    be.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TableError, ValueError, OSError) as exc:
        print(f"{parser.prog}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

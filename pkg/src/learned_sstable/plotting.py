"""Figures for benchmark reports and table block-size distributions."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .bench import BenchReport  # noqa: E402
from .table import TableStats  # noqa: E402

KIND_COLORS = {"two_level": "#7f7f7f", "learned": "#1f77b4"}

RC = {
    "font.size": 9,
    "axes.spines.right": False,
    "axes.spines.top": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.dpi": 120,
}


def _bars(ax, labels, values, colors, fmt):
    bars = ax.bar(labels, values, color=colors)
    for b, v in zip(bars, values):
        ax.annotate(fmt.format(v), (b.get_x() + b.get_width() / 2, b.get_height()),
                    ha="center", va="bottom", fontsize=8)


def plot_bench(report: BenchReport, out_dir: str | os.PathLike) -> list[str]:
    """Write one latency/throughput panel figure per phase; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    phases = sorted({r.phase for r in report.results})
    for phase in phases:
        runs = [r for r in report.results if r.phase == phase]
        kinds = [r.index_kind for r in runs]
        colors = [KIND_COLORS.get(k, "C2") for k in kinds]
        with plt.rc_context(RC):
            fig, axes = plt.subplots(1, 4, figsize=(10, 2.8))
            panels = [
                ("p99 latency", [r.p99_us for r in runs], runs[0].latency_unit),
                ("mean latency", [r.mean_us for r in runs], runs[0].latency_unit),
                ("throughput", [r.throughput for r in runs], runs[0].throughput_unit),
                ("index size", [r.index_bytes / 1024 for r in runs], "KiB"),
            ]
            for ax, (title, values, unit) in zip(axes, panels):
                _bars(ax, kinds, values, colors, "{:.3g}")
                ax.set_title(title)
                ax.set_ylabel(unit)
            cfg = report.config
            fig.suptitle(
                f"{cfg.workload} workload, {cfg.rows} rows, {phase} cache "
                f"({cfg.cache_bytes >> 20} MiB, {cfg.fetch_latency_us:g} us/miss)"
            )
            fig.tight_layout()
            path = os.path.join(out_dir, f"bench_{cfg.workload}_{phase}.png")
            fig.savefig(path, bbox_inches="tight")
            plt.close(fig)
        paths.append(path)
    return paths


def plot_block_sizes(stats: TableStats, path: str | os.PathLike) -> str:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 3))
        sizes = [s / stats.tau for s in stats.block_sizes]
        ax.hist(sizes, bins=50, color=KIND_COLORS.get(stats.index_kind, "C2"))
        for edge in (0.5, 1.5):
            ax.axvline(edge, color="k", lw=0.8, ls="--")
        ax.set_xlabel("block size / tau")
        ax.set_ylabel("blocks")
        ax.set_title(f"{stats.index_kind}: {stats.n_blocks} blocks, {stats.empty_blocks} empty")
        fig.tight_layout()
        fig.savefig(path, bbox_inches="tight")
        plt.close(fig)
    return os.fspath(path)

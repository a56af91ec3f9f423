"""Figure rendering for run reports.

Renders to files only; the Agg backend is forced before pyplot is touched so
report generation works headless.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def _atomic_savefig(fig, path: Path, fmt: str, **kwargs) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        fig.savefig(tmp, format=fmt, **kwargs)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def render_oau_chart(
    policy_names: Sequence[str],
    oau_values: Sequence[float],
    png_path: str | Path,
    svg_path: str | Path,
) -> None:
    """Bar chart of utility per policy, written as PNG and SVG."""
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    positions = range(len(policy_names))
    bars = ax.bar(positions, oau_values, color="#4878a8", width=0.62)
    ax.set_xticks(list(positions))
    ax.set_xticklabels(policy_names, rotation=20, ha="right", fontsize=9)
    ax.set_ylabel("overcommitment-aware utility")
    ax.set_title("Policy comparison")
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.grid(axis="y", alpha=0.3)
    for bar, value in zip(bars, oau_values):
        ax.annotate(
            f"{value:.3f}",
            (bar.get_x() + bar.get_width() / 2, value),
            textcoords="offset points",
            xytext=(0, 3 if value >= 0 else -12),
            ha="center",
            fontsize=8,
        )
    fig.tight_layout()
    try:
        _atomic_savefig(fig, Path(png_path), "png", dpi=150)
        # The SVG writer stamps a creation date by default; drop it so equal
        # runs yield equal bytes.
        _atomic_savefig(fig, Path(svg_path), "svg", metadata={"Date": None})
    finally:
        plt.close(fig)

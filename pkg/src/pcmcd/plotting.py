"""Static SVG line charts from metrics CSV files."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

PANELS = (("loss", "train loss", True), ("psnr", "val PSNR (dB)", False), ("cond", "cond(Phi)", True))


def read_metrics(path) -> dict[str, list[float]]:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no metric rows")
    return {k: [float(r[k]) for r in rows] for k in rows[0]}


def plot_metrics(path, out_dir=None) -> list[Path]:
    """Write one SVG per panel (loss, PSNR, condition number)."""
    data = read_metrics(path)
    out_dir = Path(out_dir) if out_dir is not None else Path(path).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for key, label, logy in PANELS:
        if key not in data:
            continue
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(data["epoch"], data[key], lw=1.2)
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        target = out_dir / f"{key}.svg"
        # fixed metadata keeps the file byte-stable across runs
        fig.savefig(target, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(target)
    return written

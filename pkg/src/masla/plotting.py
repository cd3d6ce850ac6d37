"""PNG rendering of experiment outputs.

Reads the CSV files an experiment wrote, so plots can be redrawn from disk
without rerunning anything.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["render_experiment", "plot_trajectories", "plot_histograms", "plot_curves"]


def _read(path: Path):
    with path.open() as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def plot_trajectories(out: Path, labels) -> Path | None:
    files = [(lab, out / f"trajectory_{lab}.csv") for lab in labels]
    files = [(lab, p) for lab, p in files if p.exists()]
    if not files:
        return None
    fig, axes = plt.subplots(len(files), 1, figsize=(7, 2.4 * len(files)), squeeze=False)
    for ax, (lab, path) in zip(axes[:, 0], files):
        _, rows = _read(path)
        data = np.array([[float(v) for v in r] for r in rows])
        first = data[data[:, 0] == data[0, 0]]
        ax.plot(first[:, 1], first[:, 2], lw=0.5)
        ax.set_title(lab)
        ax.set_xlabel("iteration")
    fig.tight_layout()
    dest = out / "trajectories.png"
    fig.savefig(dest, dpi=120)
    plt.close(fig)
    return dest


def plot_histograms(out: Path, labels) -> Path | None:
    ref_path = out / "reference_histogram.csv"
    if not ref_path.exists():
        return None
    header, rows = _read(ref_path)
    if len(header) != 2:
        return None  # two-dimensional histograms are not drawn
    ref = np.array([[float(v) for v in r] for r in rows])
    width = ref[1, 0] - ref[0, 0]
    fig, ax = plt.subplots(figsize=(7, 4))
    for lab in labels:
        path = out / f"histogram_{lab}.csv"
        if path.exists():
            _, hr = _read(path)
            h = np.array([[float(v) for v in r] for r in hr])
            ax.step(h[:, 0], h[:, 1] / width, where="mid", label=lab)
    ax.plot(ref[:, 0], ref[:, 1] / width, "k--", label="reference")
    ax.set_xlabel("x")
    ax.set_ylabel("density")
    ax.legend()
    fig.tight_layout()
    dest = out / "histograms.png"
    fig.savefig(dest, dpi=120)
    plt.close(fig)
    return dest


def plot_curves(out: Path, labels) -> list[Path]:
    series = defaultdict(dict)
    for lab in labels:
        path = out / f"curve_{lab}.csv"
        if not path.exists():
            continue
        _, rows = _read(path)
        for it, kernel, metric, value in rows:
            series[metric].setdefault(kernel, []).append((int(it), float(value)))
    made = []
    for metric, kernels in series.items():
        if all(len(pts) < 2 for pts in kernels.values()):
            continue
        fig, ax = plt.subplots(figsize=(7, 4))
        for kernel, pts in kernels.items():
            pts = [(k, v) for k, v in pts if k > 0]
            ax.loglog([k for k, _ in pts], [v for _, v in pts], marker="o", ms=3, label=kernel)
        ax.set_xlabel("iteration")
        ax.set_ylabel(metric.upper())
        ax.legend(fontsize=7)
        fig.tight_layout()
        dest = out / f"curve_{metric}.png"
        fig.savefig(dest, dpi=120)
        plt.close(fig)
        made.append(dest)
    return made


def render_experiment(out, manifest) -> list[str]:
    """Draw every plot the experiment's files support; returns file names."""
    from .experiments import _slug

    out = Path(out)
    labels = [_slug(lab) for lab in manifest.timings]
    made = [plot_trajectories(out, labels), plot_histograms(out, labels), *plot_curves(out, labels)]
    return [p.name for p in made if p is not None]

"""Optional PNG figures for experiment outputs (matplotlib, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .geometry import FieldLayout, sample_path  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.6),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # fixed metadata keeps reruns byte-identical
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_layouts(layouts: dict[str, FieldLayout], path, tracks: dict | None = None) -> Path:
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(layouts), figsize=(3.2 * len(layouts), 3.4), squeeze=False)
        for ax, (name, lay) in zip(axes[0], layouts.items()):
            pts, _ = sample_path(lay, 0.05)
            ax.plot(pts[:, 0], pts[:, 1], lw=0.8, color="tab:green", label="path")
            for line in lay.tramlines:
                a, b = np.asarray(line[0]), np.asarray(line[-1])
                ax.plot([a[0], b[0]], [a[1], b[1]], "--", lw=0.8, color="tab:brown")
            if tracks and name in tracks:
                xy = np.array([(s.x, s.y) for s in tracks[name].trajectory])
                ax.plot(xy[:, 0], xy[:, 1], lw=0.5, color="k", alpha=0.7, label="executed")
            ax.set_title(name)
            ax.set_aspect("equal")
        return _save(fig, path)


def plot_waypoint_boxplots(distances: dict[str, list[float]], times: dict[str, list[float]], path) -> Path:
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(6.0, 3.2))
        names = list(distances)
        a1.boxplot([distances[n] for n in names], tick_labels=names)
        a1.set_ylabel("distance per batch (m)")
        a2.boxplot([times[n] for n in names], tick_labels=names)
        a2.set_ylabel("time per batch (s)")
        return _save(fig, path)


def plot_allocation(summary: list[dict], path) -> Path:
    """Average batch time and mean CV against batch size, one line per (method, m)."""
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(7.0, 3.2))
        keys = sorted({(r["method"], r["m"]) for r in summary})
        for method, m in keys:
            rows = sorted((r for r in summary if r["method"] == method and r["m"] == m), key=lambda r: r["batch_size"])
            x = [r["batch_size"] for r in rows]
            a1.plot(x, [r["avg_batch_time"] for r in rows], marker="o", label=f"{method} m={m}")
            a2.plot(x, [r["mean_cv"] for r in rows], marker="o", label=f"{method} m={m}")
        a1.set_xlabel("batch size")
        a1.set_ylabel("avg batch time (s)")
        a2.set_xlabel("batch size")
        a2.set_ylabel("mean CV")
        a1.legend()
        return _save(fig, path)


def plot_scaling(loops, dist, times, fit, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(loops, dist, "o", label="mean distance (m)")
        xs = np.linspace(min(loops), max(loops), 50)
        ax.plot(xs, fit[0] * xs + fit[1], "-", lw=0.8, label=f"fit, R2={fit[2]:.3f}")
        ax.plot(loops, times, "s", label="mean time (s)")
        ax.set_xlabel("loops")
        ax.legend()
        return _save(fig, path)


def plot_epsilon(sigmas, eps, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(sigmas, eps, marker="o")
        ax.set_xlabel("pixel noise sigma (px)")
        ax.set_ylabel("mean epsilon")
        return _save(fig, path)

"""Figure rendering for the report path.

Each function takes already-computed rows (the same data the CSVs hold)
and writes a PNG next to the delimited output. Headless backend; no
function ever shows a window.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_epoch_curves(epoch_log: list[dict], path: str | Path) -> Path:
    """mAP and loss components over adaptation epochs."""
    epochs = [row["epoch"] for row in epoch_log]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(epochs, [row["mAP"] for row in epoch_log], marker="o", ms=3)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("mAP")
    ax1.set_title("held-out target mAP")
    ax1.grid(alpha=0.3)
    for key in ("L_h", "L_pst", "L_lscl"):
        ax2.plot(epochs, [row[key] for row in epoch_log], label=key)
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("loss")
    ax2.set_title("training losses")
    ax2.legend(fontsize=8)
    ax2.grid(alpha=0.3)
    return _save(fig, path)


def plot_study_bars(
    names: list[str], means: list[float], stds: list[float], path: str | Path,
    title: str = "mAP by variant",
) -> Path:
    fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(names), 3.5))
    x = range(len(names))
    ax.bar(x, means, yerr=stds, capsize=3, color="#4878a8")
    ax.set_xticks(list(x))
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("mAP")
    ax.set_title(title)
    ax.grid(axis="y", alpha=0.3)
    return _save(fig, path)


def plot_sweep_curve(
    values: list[float], means: list[float], stds: list[float], param: str,
    path: str | Path,
) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.errorbar(values, means, yerr=stds, marker="o", ms=4, capsize=3)
    ax.set_xlabel(param)
    ax.set_ylabel("mAP")
    ax.set_title(f"mAP vs {param}")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_bins(bins, path: str | Path) -> Path:
    """Assignment accuracy per confidence bin; empty bins are skipped."""
    centers = [(b.lo + b.hi) / 2 for b in bins if b.n > 0]
    accs = [b.accuracy for b in bins if b.n > 0]
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.bar(centers, accs, width=0.08, color="#4878a8")
    ax.set_xlabel("pseudo-label confidence")
    ax.set_ylabel("assignment accuracy")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.05)
    ax.set_title("foreground assignment accuracy by confidence")
    ax.grid(axis="y", alpha=0.3)
    return _save(fig, path)


def plot_slide(curve: list[tuple[int, float, float]], path: str | Path) -> Path:
    """Max category probability while a box slides away from its object."""
    offsets = [offset for _, offset, _ in curve]
    probs = [p for _, _, p in curve]
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.plot(offsets, probs, marker="o", ms=4)
    ax.set_xlabel("horizontal offset")
    ax.set_ylabel("max category probability")
    ax.set_title("confidence under box displacement")
    ax.grid(alpha=0.3)
    return _save(fig, path)

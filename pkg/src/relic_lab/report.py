"""Tab-separated tables and matplotlib figures written next to each other in a run directory."""

from __future__ import annotations

import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.4),
    "figure.dpi": 120,
    "font.size": 9,
    "axes.grid": True,
    "axes.linewidth": 0.6,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "grid.color": "0.85",
    "grid.linewidth": 0.5,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "savefig.bbox": "tight",
}


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "nan" if math.isnan(v) else "-inf")
    return str(v)


def write_tsv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(v) for v in row) + "\n")


def _save(fig, path) -> None:
    fig.savefig(path)
    plt.close(fig)


def lda_histogram(report, path, label: str = "") -> None:
    """Histogram of per-pair F values with the median marked."""
    values = report.values
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if values.size:
            ax.hist(values, bins=min(20, max(5, values.size)), color="#4c72b0", alpha=0.8)
            ax.axvline(report.median, color="#262626", lw=1.0, ls="--", label=f"median {report.median:.3g}")
            ax.legend(frameon=False)
        ax.set_xlabel("F_LDA per ordered class pair")
        ax.set_ylabel("count")
        if label:
            ax.set_title(label)
        _save(fig, path)


def robustness_curves(errors: dict, clean: float, path) -> None:
    """Top-1 error against severity, one line per corruption kind."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for kind, row in errors.items():
            ax.plot(range(1, len(row) + 1), row, marker="o", ms=3, lw=1.0, label=kind.replace("_", " "))
        ax.axhline(clean, color="0.4", lw=0.8, ls=":", label="clean")
        ax.set_xlabel("severity")
        ax.set_ylabel("top-1 error (%)")
        ax.set_xticks(range(1, 6))
        ax.legend(frameon=False)
        _save(fig, path)


def loss_curve(records, path) -> None:
    """Total loss and its contrastive and penalty parts against step."""
    steps = [r["step"] for r in records]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if steps:
            for key, style in (("loss", "-"), ("contrastive", "--"), ("penalty", ":")):
                ax.plot(steps, [r[key] for r in records], ls=style, lw=1.0, label=key)
            ax.legend(frameon=False)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        _save(fig, path)


def variance_bars(per_class: dict, path) -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        keys = sorted(per_class)
        ax.bar([str(k) for k in keys], [per_class[k] for k in keys], color="#55a868")
        ax.set_xlabel("content class")
        ax.set_ylabel("sigma_f^2")
        _save(fig, path)


def degree_histogram(degrees, path) -> None:
    """Node degree counts of the overlap graph."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if len(degrees):
            top = int(max(degrees))
            ax.hist(degrees, bins=range(top + 2), align="left", color="#8172b2", rwidth=0.85)
        ax.set_xlabel("degree")
        ax.set_ylabel("nodes")
        _save(fig, path)


def class_accuracy_bars(per_class: dict, overall: float, path) -> None:
    """Probe accuracy per content class with the overall accuracy marked."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        keys = sorted(per_class)
        ax.bar([str(k) for k in keys], [per_class[k] for k in keys], color="#4c72b0")
        ax.axhline(overall, color="#262626", lw=1.0, ls="--", label=f"overall {overall:.3f}")
        ax.set_ylim(0, 1.05)
        ax.set_xlabel("content class")
        ax.set_ylabel("probe accuracy")
        ax.legend(frameon=False, loc="lower right")
        _save(fig, path)


def figure_paths(out_dir, stem: str) -> tuple:
    return os.path.join(out_dir, f"{stem}.tsv"), os.path.join(out_dir, f"{stem}.png")


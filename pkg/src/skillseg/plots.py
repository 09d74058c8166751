"""Static figure export: segmentation overlays, skill library, conditioning
heatmap, and training curves. SVG output is byte-deterministic for fixed
inputs (fixed hash salt, no embedded date), with the tabular data written as
CSV alongside each figure."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from skillseg.model import ForwardTrace  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "skillseg"

# fixed palette keyed by skill index, cycled when S exceeds its length
PALETTE = [
    "#4C72B0", "#DD8452", "#55A868", "#C44E52", "#8172B3", "#937860",
    "#DA8BC3", "#8C8C8C", "#CCB974", "#64B5CD", "#5F9E6E", "#B55D60",
]

DIM_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"]


def skill_color(index: int) -> str:
    return PALETTE[index % len(PALETTE)]


def _save(fig, path: Path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def render_overlay(values: np.ndarray, trace: ForwardTrace, path: Path) -> list[dict]:
    """Original (solid) vs reconstruction (dashed) with one background band
    per segment, colored by the skill explaining it. Returns the band list."""
    t_axis = np.linspace(0.0, 1.0, values.shape[0])
    fig, ax = plt.subplots(figsize=(6, 3))
    bands = []
    start = 0.0
    for dur, skill in zip(trace.durations, trace.skill_ids):
        end = min(start + dur, 1.0)
        ax.axvspan(start, end, color=skill_color(skill), alpha=0.18, lw=0)
        bands.append({"start": start, "end": end, "skill": skill})
        start = end
    for d in range(values.shape[1]):
        color = DIM_COLORS[d % len(DIM_COLORS)]
        ax.plot(t_axis, values[:, d], color=color, lw=1.4)
        ax.plot(t_axis, trace.reconstruction[:, d], color=color, lw=1.2, ls="--")
    ax.set_xlabel("normalized time")
    ax.set_ylabel("position")
    ax.set_xlim(0, 1)
    fig.tight_layout()
    _save(fig, path)
    return bands


def render_library(library: np.ndarray, path: Path):
    """One panel per trajectory dimension, one colored line per skill."""
    s, _, d = library.shape
    fig, axes = plt.subplots(1, d, figsize=(3.2 * d, 3), squeeze=False)
    x = np.linspace(0.0, 1.0, library.shape[1])
    for dim in range(d):
        ax = axes[0, dim]
        for k in range(s):
            ax.plot(x, library[k, :, dim], color=skill_color(k), lw=1.5, label=f"skill {k}")
        ax.set_xlabel("phase")
        ax.set_title(f"dim {dim}")
    axes[0, 0].set_ylabel("position")
    if s <= 12:
        axes[0, -1].legend(fontsize=7, loc="best")
    fig.tight_layout()
    _save(fig, path)


def render_conditioning(matrix: np.ndarray, path: Path):
    """Heatmap of P(column skill follows row skill)."""
    fig, ax = plt.subplots(figsize=(4, 3.5))
    im = ax.imshow(matrix, cmap="viridis", vmin=0.0, vmax=max(1e-9, matrix.max()))
    ax.set_xlabel("next skill")
    ax.set_ylabel("previous skill")
    fig.colorbar(im, ax=ax, label="probability")
    fig.tight_layout()
    _save(fig, path)


def render_loglik_curves(metrics_csv: Path, path: Path):
    """Reconstruction term per iteration plus the periodic test-mode values."""
    iters, recon, test_it, test_ll = [], [], [], []
    with open(metrics_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            iters.append(int(row["iteration"]))
            recon.append(float(row["recon"]))
            if row["test_loglik"]:
                test_it.append(int(row["iteration"]))
                test_ll.append(float(row["test_loglik"]))
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(iters, recon, lw=1.0, color="#4C72B0", label="train (relaxed)")
    if test_it:
        ax.plot(test_it, test_ll, lw=1.4, color="#C44E52", marker="o", ms=3,
                label="test (one-hot)")
    ax.set_xlabel("iteration")
    ax.set_ylabel("log-likelihood")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def _write_matrix_csv(matrix: np.ndarray, path: Path, col_prefix: str):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([""] + [f"{col_prefix}{j}" for j in range(matrix.shape[1])])
        for i, row in enumerate(matrix):
            writer.writerow([f"row{i}"] + [repr(float(x)) for x in row])


def render_plots(out_dir, traces: list[tuple[np.ndarray, ForwardTrace]] | None = None,
                 library: np.ndarray | None = None, matrix: np.ndarray | None = None,
                 metrics_csv=None) -> dict:
    """Write every figure the inputs allow; returns paths plus overlay bands.

    With an empty trace list only the library and heatmap (and curves, when a
    metrics CSV is given) are produced.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: dict = {"overlays": [], "bands": []}
    for i, (values, trace) in enumerate(traces or []):
        path = out / f"overlay_{i:03d}.svg"
        written["bands"].append(render_overlay(values, trace, path))
        written["overlays"].append(str(path))
    if library is not None:
        render_library(library, out / "library.svg")
        written["library"] = str(out / "library.svg")
        flat = library.reshape(library.shape[0], -1)
        _write_matrix_csv(flat, out / "library.csv", "step_dim")
    if matrix is not None:
        render_conditioning(matrix, out / "conditioning.svg")
        written["conditioning"] = str(out / "conditioning.svg")
        _write_matrix_csv(matrix, out / "conditioning.csv", "next")
    if metrics_csv is not None:
        render_loglik_curves(Path(metrics_csv), out / "loglik.svg")
        written["loglik"] = str(out / "loglik.svg")
    return written

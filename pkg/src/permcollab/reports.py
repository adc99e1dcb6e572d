"""Report rendering: delimited output plus matplotlib figures, side by side.

Every writer emits a CSV and a PNG with the same stem so scripted consumers
and humans read the same run.  Matplotlib runs on the Agg backend; nothing
here ever opens a window.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .block_cipher import ImageTensor
from .collab_proto.cost import CostReport
from .embed_check import VerificationReport


def write_cost_report(report: CostReport, out_dir, stem: str = "cost") -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    png_path = out_dir / f"{stem}.png"

    rows = [
        ("one_shot_upload_bytes", report.one_shot_upload_bytes),
        ("one_shot_model_bytes", report.one_shot_model_bytes),
        ("one_shot_total_bytes", report.one_shot_total_bytes),
        ("fl_up_bytes", report.fl_up_bytes),
        ("fl_down_bytes", report.fl_down_bytes),
        ("fl_final_bytes", report.fl_final_bytes),
        ("fl_total_bytes", report.fl_total_bytes),
        ("participants_per_round", report.participants_per_round),
        ("cheaper", report.cheaper),
    ]
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["field", "value"])
        writer.writerows(rows)

    fig, ax = plt.subplots(figsize=(6, 4))
    labels = ["one-shot", "federated"]
    uploads = np.array([report.one_shot_upload_bytes, report.fl_up_bytes], dtype=float)
    downs = np.array([0, report.fl_down_bytes], dtype=float)
    finals = np.array([report.one_shot_model_bytes, report.fl_final_bytes], dtype=float)
    gib = 1024.0**3
    ax.bar(labels, uploads / gib, label="client uploads")
    ax.bar(labels, downs / gib, bottom=uploads / gib, label="round downloads")
    ax.bar(labels, finals / gib, bottom=(uploads + downs) / gib, label="final model")
    ax.set_ylabel("GiB transferred")
    ax.set_title(f"communication cost (cheaper: {report.cheaper})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return {"csv": csv_path, "png": png_path}


def write_embed_report(reports: list[VerificationReport], out_dir, stem: str = "embed-check") -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    png_path = out_dir / f"{stem}.png"

    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["trial", "identity", "n_blocks", "l_vec", "d", "max_deviation", "tolerance", "passed"]
        )
        for i, r in enumerate(reports):
            writer.writerow(
                [i, r.identity, r.n_blocks, r.l_vec, r.d, f"{r.max_deviation:.3e}", f"{r.tolerance:.1e}", r.passed]
            )

    fig, ax = plt.subplots(figsize=(7, 4))
    identities = sorted({r.identity for r in reports})
    eps = 1e-18  # deviations are often exactly 0; keep them plottable on a log axis
    for name in identities:
        xs = [i for i, r in enumerate(reports) if r.identity == name]
        ys = [max(r.max_deviation, eps) for r in reports if r.identity == name]
        ax.scatter(xs, ys, s=12, label=name)
    if reports:
        ax.axhline(reports[0].tolerance, color="red", linestyle="--", label="tolerance")
    ax.set_yscale("log")
    ax.set_xlabel("trial")
    ax.set_ylabel("max abs deviation")
    ax.set_title("embedding-equivalence checks")
    ax.legend()
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return {"csv": csv_path, "png": png_path}


def write_image_grid(images: list[ImageTensor], path, titles=None, ncols: int = 3) -> Path:
    """PNG contact sheet, e.g. a plain image next to its encrypted forms."""
    path = Path(path)
    n = len(images)
    ncols = max(1, min(ncols, n))
    nrows = (n + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(2.4 * ncols, 2.6 * nrows), squeeze=False)
    for i in range(nrows * ncols):
        ax = axes[i // ncols][i % ncols]
        ax.axis("off")
        if i >= n:
            continue
        arr = images[i].array
        ax.imshow(arr[:, :, 0] if arr.shape[2] == 1 else arr, cmap="gray" if arr.shape[2] == 1 else None)
        if titles is not None and i < len(titles):
            ax.set_title(str(titles[i]), fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path

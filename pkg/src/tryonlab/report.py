"""Report rendering: JSON/text/CSV outputs plus matplotlib figures on disk."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

from tryonlab.metrics import EvalReport, OrderVariationReport

LABEL_NAMES = {0: "background", 1: "skin", 2: "hair", 3: "top", 4: "bottom"}


def save_gray_png(values: np.ndarray, path: str | Path, scale: float | None = None) -> None:
    """Save a 2-D array as an 8-bit grayscale PNG, normalized to its max."""
    arr = np.asarray(values, dtype=np.float64)
    top = scale if scale is not None else (arr.max() if arr.max() > 0 else 1.0)
    img = np.clip(arr / top, 0.0, 1.0)
    Image.fromarray(np.round(img * 255).astype(np.uint8), mode="L").save(path)


def write_eval_report(report: EvalReport, out_dir: str | Path) -> list[Path]:
    """Write report.json, report.txt, per_sample.csv and summary figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    json_path = out / "report.json"
    json_path.write_text(json.dumps(report.to_json(), indent=1))
    written.append(json_path)

    txt_path = out / "report.txt"
    txt_path.write_text(report.text_table() + "\n")
    written.append(txt_path)

    if report.per_sample:
        csv_path = out / "per_sample.csv"
        with open(csv_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(report.per_sample[0]))
            writer.writeheader()
            writer.writerows(report.per_sample)
        written.append(csv_path)

        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.hist([row["ssim"] for row in report.per_sample], bins=20, color="#4878a8")
        ax.set_xlabel("SSIM")
        ax.set_ylabel("samples")
        ax.axvline(report.ssim_mean, color="k", linestyle="--", linewidth=1)
        fig.tight_layout()
        fig.savefig(out / "ssim_hist.png", dpi=120)
        plt.close(fig)
        written.append(out / "ssim_hist.png")

    labels = sorted(report.siou_per_label)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar([LABEL_NAMES.get(l, str(l)) for l in labels],
           [report.siou_per_label[l] for l in labels], color="#6aa84f")
    ax.set_ylabel("mean IoU")
    ax.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(out / "siou_bars.png", dpi=120)
    plt.close(fig)
    written.append(out / "siou_bars.png")
    return written


def write_order_variation(report: OrderVariationReport, out_dir: str | Path,
                          prefix: str = "order_variation") -> list[Path]:
    """Difference heat-mask PNG plus a side-by-side render figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    heat_path = out / f"{prefix}_heat.png"
    save_gray_png(report.diff_heat, heat_path)
    written.append(heat_path)

    n = len(report.renders)
    fig, axes = plt.subplots(1, n + 1, figsize=(2.2 * (n + 1), 2.6))
    for ax, order, image in zip(axes, report.orders, report.renders):
        ax.imshow(np.transpose(image, (1, 2, 0)))
        ax.set_title("order " + "-".join(map(str, order)), fontsize=8)
        ax.axis("off")
    axes[-1].imshow(report.diff_heat, cmap="magma")
    axes[-1].set_title("|difference|", fontsize=8)
    axes[-1].axis("off")
    fig.tight_layout()
    fig.savefig(out / f"{prefix}.png", dpi=120)
    plt.close(fig)
    written.append(out / f"{prefix}.png")
    return written

"""Run report: per-polygon figures and a tab-separated summary."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

SUMMARY_COLUMNS = ("polygon", "status", "width", "height", "views", "uncovered_fraction",
                   "unobserved_pixel_fraction", "rms_before", "rms_after", "damped", "inpainted_pixels",
                   "seconds")


def summary_rows(manifest) -> list[dict]:
    rows = []
    for p in manifest.polygons:
        views = p.get("views", [])
        rows.append({
            "polygon": p["id"],
            "status": p.get("status", ""),
            "width": p["resolution"][0],
            "height": p["resolution"][1],
            "views": ",".join(str(v) for v in p.get("selected_views", [])),
            "uncovered_fraction": _fmt(p.get("uncovered_fraction")),
            "unobserved_pixel_fraction": _fmt(p.get("unobserved_pixel_fraction")),
            "rms_before": _fmt(p.get("rms_before")),
            "rms_after": _fmt(p.get("rms_after")),
            "damped": sum(v.get("damped", 0) for v in views),
            "inpainted_pixels": p.get("inpaint", {}).get("masked_pixels", 0),
            "seconds": _fmt(sum(p.get("timings", {}).values())),
        })
    return rows


def _fmt(x) -> str:
    return "" if x is None else f"{float(x):.6g}"


def write_summary(path, manifest) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, delimiter="\t", lineterminator="\n")
        w.writeheader()
        w.writerows(summary_rows(manifest))


def polygon_figure(path, entry: dict, image8: np.ndarray) -> None:
    """Texture, per-view endpoint residual summary and energy breakdown."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4.5))
    axes[0].imshow(image8)
    axes[0].set_title(f"polygon {entry['id']}: views {entry.get('selected_views', [])}")
    axes[0].axis("off")
    views = entry.get("views", [])
    ax = axes[1]
    if views:
        labels, ea, el, er = [], [], [], []
        for v in views:
            for stage in ("global", "local"):
                e = v.get("energy", {}).get(stage)
                if e:
                    labels.append(f"{v['view']}:{stage[0]}")
                    ea.append(e.get("Ea", 0.0))
                    el.append(e.get("El", 0.0))
                    er.append(e.get("Er", 0.0))
        x = np.arange(len(labels))
        ax.bar(x, ea, label="alignment")
        ax.bar(x, el, bottom=ea, label="straightness")
        ax.bar(x, er, bottom=np.add(ea, el), label="regularity")
        ax.set_xticks(x, labels)
        ax.set_ylabel("energy at optimum")
        ax.legend()
    else:
        ax.text(0.5, 0.5, "no views stitched", ha="center", va="center")
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def write_report(out_dir, manifest, images: dict) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_summary(out / "summary.tsv", manifest)
    for entry in manifest.polygons:
        polygon_figure(out / f"polygon_{entry['id']:03d}.png", entry, images[entry["id"]])
    return out

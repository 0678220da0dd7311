"""Rendering helpers for the CLI: classification-map PPM output with a fixed
hue palette, matplotlib figures for training curves / confusion matrices /
ablation tables, and paper-style text tables."""

from __future__ import annotations

import colorsys

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def class_palette(num_classes: int) -> np.ndarray:
    """(K+1, 3) uint8 palette: index 0 black, classes on evenly spaced hues.

    Class i (1..K) maps to HSV hue (i-1)/K with saturation 0.75 and value
    0.95, scaled to 0..255.
    """
    palette = np.zeros((num_classes + 1, 3), dtype=np.uint8)
    for i in range(1, num_classes + 1):
        r, g, b = colorsys.hsv_to_rgb((i - 1) / num_classes, 0.75, 0.95)
        palette[i] = (round(r * 255), round(g * 255), round(b * 255))
    return palette


def render_label_map(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Color an (H, W) label raster into (H, W, 3) uint8 via the palette."""
    return class_palette(num_classes)[labels]


def write_ppm(path, rgb: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 image as binary P6."""
    h, w = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 image back to (H, W, 3) uint8."""
    with open(path, "rb") as fh:
        assert fh.readline().strip() == b"P6"
        w, h = map(int, fh.readline().split())
        assert fh.readline().strip() == b"255"
        return np.frombuffer(fh.read(w * h * 3), dtype=np.uint8).reshape(h, w, 3)


def save_loss_curves(records, path) -> None:
    """Train/val loss per epoch with val OA on a twin axis."""
    epochs = [r["epoch"] for r in records]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, [r["train_loss"] for r in records], label="train loss", marker="o")
    ax.plot(epochs, [r["val_loss"] for r in records], label="val loss", marker="s")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, [r["val_oa"] for r in records], label="val OA", color="tab:green",
             linestyle="--", marker="^")
    ax2.set_ylabel("val OA")
    ax2.set_ylim(0.0, 1.02)
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, loc="center right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_confusion_figure(counts, path) -> None:
    """Row-normalized confusion heatmap with raw counts annotated."""
    c = np.asarray(counts, dtype=np.float64)
    row = c.sum(axis=1, keepdims=True)
    norm = np.divide(c, row, out=np.zeros_like(c), where=row > 0)
    k = c.shape[0]
    fig, ax = plt.subplots(figsize=(1.0 + 0.6 * k, 0.8 + 0.6 * k))
    im = ax.imshow(norm, cmap="viridis", vmin=0.0, vmax=1.0)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_xticks(range(k), [str(i + 1) for i in range(k)])
    ax.set_yticks(range(k), [str(i + 1) for i in range(k)])
    if k <= 12:
        for i in range(k):
            for j in range(k):
                ax.text(j, i, f"{int(c[i, j])}", ha="center", va="center",
                        color="white" if norm[i, j] < 0.6 else "black", fontsize=8)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_ablation_figure(table: dict, path) -> None:
    """Grouped bars of kappa/OA/AA per ablation column (n/a columns skipped)."""
    cols = [c for c, cell in table.items() if cell is not None]
    metrics = ["kappa", "oa", "aa"]
    x = np.arange(len(cols))
    width = 0.27
    fig, ax = plt.subplots(figsize=(1.6 * len(cols) + 2, 4))
    for i, m in enumerate(metrics):
        vals = [table[c][m] * 100.0 for c in cols]
        ax.bar(x + (i - 1) * width, vals, width, label=m.replace("kappa", "κ").upper())
    ax.set_xticks(x, cols)
    ax.set_ylabel("percent")
    lo = min(min(table[c][m] for m in metrics) for c in cols) * 100.0
    ax.set_ylim(max(0.0, lo - 5.0), 101.0)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def format_percent(x) -> str:
    return "n/a" if x is None else f"{x * 100.0:.4f}"


def format_class_table(result: dict) -> str:
    """Per-class accuracies followed by kappa/OA/AA, percentages at 4 decimals."""
    lines = [f"{'Class':>8}  {'Accuracy':>10}"]
    for i, acc in enumerate(result["per_class"], start=1):
        lines.append(f"{i:>8}  {format_percent(acc):>10}")
    lines.append("-" * 20)
    for key, label in (("kappa", "κ"), ("oa", "OA"), ("aa", "AA")):
        lines.append(f"{label:>8}  {format_percent(result[key]):>10}")
    return "\n".join(lines)


def format_ablation_table(table: dict, metric_order=("kappa", "oa", "aa")) -> str:
    """Columns across, one row per metric, mirroring the reference layout."""
    cols = list(table.keys())
    head = f"{'Metric':>8} | " + " | ".join(f"{c:>10}" for c in cols)
    lines = [head, "-" * len(head)]
    labels = {"kappa": "κ", "oa": "OA", "aa": "AA"}
    for m in metric_order:
        cells = []
        for c in cols:
            cell = table[c]
            cells.append(f"{format_percent(cell[m] if cell else None):>10}")
        lines.append(f"{labels[m]:>8} | " + " | ".join(cells))
    return "\n".join(lines)


def ablation_csv(table: dict) -> str:
    """Delimited companion to the ablation table."""
    lines = ["column,kappa,oa,aa"]
    for c, cell in table.items():
        if cell is None:
            lines.append(f"{c},n/a,n/a,n/a")
        else:
            lines.append(f"{c},{cell['kappa']:.6f},{cell['oa']:.6f},{cell['aa']:.6f}")
    return "\n".join(lines) + "\n"

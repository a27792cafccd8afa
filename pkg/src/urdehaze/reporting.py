"""Report emission: delimited metric tables plus rendered figures.

Evaluation results land in three kinds of files next to each other:
a per-image TSV, a short human-readable summary, and (when evaluating a
run's checkpoint history) one line-plot PNG per metric.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .evaluation import METRIC_NAMES, MetricsReport

METRIC_LABELS = {
    "mse": "MSE (lower is better)",
    "nrmse": "NRMSE (lower is better)",
    "psnr": "PSNR dB (higher is better)",
    "ssim": "SSIM (higher is better)",
}


def format_value(v):
    return f"{v:.6g}"


def write_report(report: MetricsReport, out_dir):
    """report.tsv (one row per image) and summary.txt (dataset means)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["id\tmse\tnrmse\tpsnr\tssim"]
    for row in report.per_image:
        vals = "\t".join(format_value(row[m]) for m in METRIC_NAMES)
        lines.append(f"{row['id']}\t{vals}")
    (out_dir / "report.tsv").write_text("\n".join(lines) + "\n")

    summary = [f"images scored: {report.n}"]
    for m in METRIC_NAMES:
        summary.append(f"mean {m}: {format_value(report.means[m])}")
    if report.psnr_excluded:
        summary.append(
            f"note: {report.psnr_excluded} identical-image row(s) with infinite PSNR "
            "excluded from the PSNR mean"
        )
    (out_dir / "summary.txt").write_text("\n".join(summary) + "\n")
    return out_dir / "report.tsv"


def write_history(history, out_dir):
    """Per-checkpoint validation means: epoch_means.tsv plus one PNG line
    plot per metric.

    history: list of dicts with keys label, epoch and the four metric
    means, in evaluation order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["label\tepoch\tmse\tnrmse\tpsnr\tssim"]
    for row in history:
        vals = "\t".join(format_value(row[m]) for m in METRIC_NAMES)
        lines.append(f"{row['label']}\t{row['epoch']}\t{vals}")
    (out_dir / "epoch_means.tsv").write_text("\n".join(lines) + "\n")

    paths = [out_dir / "epoch_means.tsv"]
    epochs = [row["epoch"] for row in history]
    for m in METRIC_NAMES:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(epochs, [row[m] for row in history], marker="o")
        ax.set_xlabel("epoch")
        ax.set_ylabel(METRIC_LABELS[m])
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = out_dir / f"{m}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths

"""Report writers: delimited CSV output, aligned text tables, and figures.

Every report path writes machine-readable CSV next to a rendered PNG figure.
``stable_timing=True`` zeroes wall-clock columns so two runs with the same
seed produce byte-identical files.
"""

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .harness import AblationResult, EvalReport, FprRow
from .training import TrainReport


def _fmt(x: float) -> str:
    return repr(float(x))


# --- training ----------------------------------------------------------------

def write_train_csv(report: TrainReport, path, stable_timing: bool = False) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["epoch", "loss_clean", "loss_aug", "loss_total", "train_acc", "heldout_acc", "seconds"]
        )
        for e in report.epochs:
            w.writerow(
                [
                    e.epoch,
                    _fmt(e.loss_clean),
                    _fmt(e.loss_aug),
                    _fmt(e.loss_total),
                    _fmt(e.train_acc),
                    _fmt(e.heldout_acc),
                    _fmt(0.0 if stable_timing else e.seconds),
                ]
            )


def render_train_curves(report: TrainReport, path) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    epochs = report.column("epoch")
    ax1.plot(epochs, report.column("loss_clean"), label="clean")
    ax1.plot(epochs, report.column("loss_aug"), label="augmented")
    ax1.plot(epochs, report.column("loss_total"), label="total")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax1.grid(alpha=0.3)
    ax2.plot(epochs, report.column("train_acc"), label="train")
    ho = report.column("heldout_acc")
    if not all(np.isnan(ho)):
        ax2.plot(epochs, ho, label="held-out")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("accuracy")
    ax2.set_ylim(0, 1.02)
    ax2.legend()
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


# --- robustness --------------------------------------------------------------

def write_robustness_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["row", "auroc", "n_pos", "n_neg", "status"])
        for cell in report.cells:
            w.writerow([cell.name, _fmt(cell.auroc), cell.n_pos, cell.n_neg, "evaluated"])
        for name in report.out_of_scope:
            w.writerow([name, "", "", "", "out_of_scope"])


def write_metrics_csv(report: EvalReport, path, stable_timing: bool = False) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "value"])
        w.writerow(["mean_psnr_db", _fmt(report.mean_psnr)])
        w.writerow(["embed_batch_images", report.throughput_n])
        w.writerow(
            ["embed_batch_seconds", _fmt(0.0 if stable_timing else report.throughput_seconds)]
        )
        w.writerow(
            ["embed_images_per_second", _fmt(0.0 if stable_timing else report.throughput_ips)]
        )


def format_robustness_table(report: EvalReport) -> str:
    rows = [("row", "AUROC", "n")]
    for cell in report.cells:
        rows.append((cell.name, f"{cell.auroc:.4f}", f"{cell.n_pos}+{cell.n_neg}"))
    for name in report.out_of_scope:
        rows.append((name, "out of scope", "-"))
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    lines = ["  ".join(r[i].ljust(widths[i]) for i in range(3)) for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    manip = report.manipulation_cells()
    if manip:
        mean = float(np.mean([c.auroc for c in manip]))
        lines.append("")
        lines.append(f"mean over evaluated manipulations: {mean:.4f}")
    lines.append(f"mean PSNR watermarked vs original: {report.mean_psnr:.2f} dB")
    if report.throughput_n:
        lines.append(
            f"embedding throughput: {report.throughput_n} images in "
            f"{report.throughput_seconds:.3f} s ({report.throughput_ips:.0f}/s)"
        )
    return "\n".join(lines) + "\n"


def render_robustness_bars(report: EvalReport, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 3.5))
    names = [c.name for c in report.cells]
    values = [c.auroc for c in report.cells]
    ax.bar(range(len(names)), values, color="#4878d0")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.axhline(0.5, color="gray", lw=0.8, ls="--")
    ax.set_ylim(0, 1.02)
    ax.set_ylabel("AUROC")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


# --- certified FPR -----------------------------------------------------------

def write_fpr_csv(rows: list[FprRow], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["alpha", "fpr_clean", "fpr_attacked", "n"])
        for r in rows:
            w.writerow([_fmt(r.alpha), _fmt(r.fpr_clean), _fmt(r.fpr_attacked), r.n])


def render_fpr_plot(rows: list[FprRow], path) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    alphas = [r.alpha for r in rows]
    ax.plot(alphas, [r.fpr_clean for r in rows], "o-", label="clean")
    ax.plot(alphas, [r.fpr_attacked for r in rows], "s-", label="attacked")
    lim = max(alphas + [r.fpr_clean for r in rows] + [r.fpr_attacked for r in rows]) * 1.15
    ax.plot([0, lim], [0, lim], color="gray", lw=0.8, ls="--", label="target bound")
    ax.set_xlabel("alpha")
    ax.set_ylabel("empirical miss rate")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


# --- ablations ---------------------------------------------------------------

_ABLATION_VARIANTS = ("joint", "fixed", "spatial_full", "spatial_none")


def write_ablation_csv(results: dict[int, AblationResult], path, stable_timing: bool = False) -> None:
    """Long-format per-epoch curves for every (seed, variant) pair."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["seed", "variant", "epoch", "loss_clean", "loss_aug", "loss_total",
             "train_acc", "heldout_acc", "seconds"]
        )
        for seed, result in results.items():
            for variant in _ABLATION_VARIANTS:
                report: TrainReport = getattr(result, variant)
                for e in report.epochs:
                    w.writerow(
                        [
                            seed, variant, e.epoch,
                            _fmt(e.loss_clean), _fmt(e.loss_aug), _fmt(e.loss_total),
                            _fmt(e.train_acc), _fmt(e.heldout_acc),
                            _fmt(0.0 if stable_timing else e.seconds),
                        ]
                    )


def render_ablation_curves(result: AblationResult, path) -> None:
    fig, axes = plt.subplots(2, 2, figsize=(9, 6.5))
    pairs = (
        ("loss_total", "joint", "fixed", "training loss"),
        ("heldout_acc", "joint", "fixed", "held-out accuracy"),
        ("loss_total", "spatial_full", "spatial_none", "training loss"),
        ("heldout_acc", "spatial_full", "spatial_none", "held-out accuracy (noise view)"),
    )
    labels = {
        "joint": "joint training",
        "fixed": "fixed watermark",
        "spatial_full": "with spatial term",
        "spatial_none": "c2 = 0",
    }
    for ax, (col, a, b, title) in zip(axes.ravel(), pairs):
        ra: TrainReport = getattr(result, a)
        rb: TrainReport = getattr(result, b)
        ax.plot(ra.column("epoch"), ra.column(col), label=labels[a])
        ax.plot(rb.column("epoch"), rb.column(col), label=labels[b])
        ax.set_title(title, fontsize=9)
        ax.set_xlabel("epoch")
        if col.endswith("acc"):
            ax.set_ylim(0, 1.02)
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

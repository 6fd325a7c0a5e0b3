"""Run artifacts: delimited outputs, JSON summaries, and rendered figures.

Every figure is written next to the CSV/JSON it visualizes so a run
directory is self-contained: per-fold metrics, epoch curves, ablation
tables, noise sweeps.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .evaluation import FoldResult, wilcoxon_signed_rank

EPOCH_COLUMNS = (
    "epoch",
    "loss_src",
    "loss_tgt",
    "loss_total",
    "accepted_count",
    "mean_similarity",
    "param_digest",
)


def write_fold_csv(results: list[FoldResult], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", "accuracy", "recall", "precision", "f1", "kappa"])
        for r in results:
            writer.writerow(
                [r.target_subject_id]
                + [f"{v:.6f}" for v in (r.accuracy, r.recall, r.precision, r.f1, r.kappa)]
            )
    return path


def write_epoch_log_csv(epoch_log: list[dict], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        k = len(epoch_log[0]["per_class_accepted"]) if epoch_log else 0
        writer.writerow(list(EPOCH_COLUMNS) + [f"accepted_class_{i}" for i in range(k)])
        for row in epoch_log:
            writer.writerow(
                [row[c] for c in EPOCH_COLUMNS] + list(row["per_class_accepted"])
            )
    return path


def summarize_folds(results: list[FoldResult]) -> dict:
    metrics = {}
    for name in ("accuracy", "recall", "precision", "f1", "kappa"):
        values = np.array([getattr(r, name) for r in results])
        metrics[name] = {"mean": float(values.mean()), "std": float(values.std())}
    return {
        "n_folds": len(results),
        "subjects": [r.target_subject_id for r in results],
        "metrics": metrics,
    }


def write_summary_json(summary: dict, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=2))
    return path


def write_ablation_csv(rows: list[dict], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "mean_accuracy", "std_accuracy", "fold_accuracies"])
        for row in rows:
            writer.writerow(
                [
                    row["variant"],
                    f"{row['mean_accuracy']:.6f}",
                    f"{row['std_accuracy']:.6f}",
                    ";".join(f"{a:.6f}" for a in row["fold_accuracies"]),
                ]
            )
    return path


def ablation_summary(rows: list[dict]) -> dict:
    """Variant table plus pairwise Wilcoxon p-values on per-fold accuracies."""
    pairwise = {}
    for i, a in enumerate(rows):
        for b in rows[i + 1 :]:
            stat, p = wilcoxon_signed_rank(
                np.array(a["fold_accuracies"]), np.array(b["fold_accuracies"])
            )
            pairwise[f"{a['variant']} vs {b['variant']}"] = {"statistic": stat, "p_value": p}
    return {
        "variants": [
            {k: row[k] for k in ("variant", "mean_accuracy", "std_accuracy")} for row in rows
        ],
        "pairwise_wilcoxon": pairwise,
    }


def plot_epoch_curves(epoch_logs: dict[str, list[dict]], path: Path) -> Path:
    """Per-fold loss and pseudo-label acceptance curves."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    for subject, log in epoch_logs.items():
        epochs = [row["epoch"] for row in log]
        ax_loss.plot(epochs, [row["loss_total"] for row in log], label=subject, alpha=0.8)
        ax_acc.plot(epochs, [row["accepted_count"] for row in log], alpha=0.8)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("total loss")
    ax_loss.set_title("Training loss per fold")
    if len(epoch_logs) <= 10:
        ax_loss.legend(fontsize=7)
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accepted pseudo-labels")
    ax_acc.set_title("Pseudo-label acceptance")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_fold_accuracies(results: list[FoldResult], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    subjects = [r.target_subject_id for r in results]
    accs = [r.accuracy for r in results]
    fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(subjects) + 2), 4))
    ax.bar(range(len(subjects)), accs, color="steelblue")
    ax.axhline(float(np.mean(accs)), color="firebrick", linestyle="--", label="mean")
    ax.set_xticks(range(len(subjects)))
    ax.set_xticklabels(subjects, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1)
    ax.set_title("Per-subject LOSO accuracy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_ablation(rows: list[dict], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    names = [row["variant"] for row in rows]
    means = [row["mean_accuracy"] for row in rows]
    stds = [row["std_accuracy"] for row in rows]
    fig, ax = plt.subplots(figsize=(max(4, 0.9 * len(names) + 2), 4))
    ax.bar(range(len(names)), means, yerr=stds, capsize=4, color="slategray")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylabel("mean LOSO accuracy")
    ax.set_ylim(0, 1)
    ax.set_title("Ablation variants")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def write_noise_sweep_csv(rows: list[dict], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "amplitude", "accuracy", "kappa"])
        for row in rows:
            writer.writerow(
                [row["kind"], row["amplitude"], f"{row['accuracy']:.6f}", f"{row['kappa']:.6f}"]
            )
    return path


def plot_noise_sweep(rows: list[dict], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 4))
    kinds = sorted({row["kind"] for row in rows})
    for kind in kinds:
        pts = sorted((r["amplitude"], r["accuracy"]) for r in rows if r["kind"] == kind)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=kind)
    ax.set_xlabel("noise amplitude (x signal RMS)")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1)
    ax.set_title("Noise robustness")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_report(run_dir: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Aggregate the artifacts of a run directory and render all figures.

    Looks for ``fold_metrics.csv``, ``epoch_log_*.csv``, ``ablation.csv``
    and ``noise_sweep.csv``; silently skips whatever is absent.
    """
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    folds_csv = run_dir / "fold_metrics.csv"
    if folds_csv.exists():
        results = []
        with open(folds_csv) as fh:
            for rec in csv.DictReader(fh):
                results.append(
                    FoldResult(
                        rec["subject"],
                        np.zeros((2, 2)),
                        float(rec["accuracy"]),
                        float(rec["recall"]),
                        float(rec["precision"]),
                        float(rec["f1"]),
                        float(rec["kappa"]),
                    )
                )
        written.append(write_summary_json(summarize_folds(results), out_dir / "summary.json"))
        written.append(plot_fold_accuracies(results, out_dir / "fold_accuracies.png"))

    log_files = sorted(run_dir.glob("epoch_log_*.csv"))
    if log_files:
        logs = {}
        for lf in log_files:
            with open(lf) as fh:
                rows = []
                for rec in csv.DictReader(fh):
                    rows.append(
                        {
                            "epoch": int(rec["epoch"]),
                            "loss_total": float(rec["loss_total"]),
                            "accepted_count": int(rec["accepted_count"]),
                        }
                    )
            logs[lf.stem.replace("epoch_log_", "")] = rows
        written.append(plot_epoch_curves(logs, out_dir / "epoch_curves.png"))

    ablation_csv = run_dir / "ablation.csv"
    if ablation_csv.exists():
        rows = []
        with open(ablation_csv) as fh:
            for rec in csv.DictReader(fh):
                rows.append(
                    {
                        "variant": rec["variant"],
                        "mean_accuracy": float(rec["mean_accuracy"]),
                        "std_accuracy": float(rec["std_accuracy"]),
                        "fold_accuracies": [
                            float(x) for x in rec["fold_accuracies"].split(";") if x
                        ],
                    }
                )
        written.append(
            write_summary_json(ablation_summary(rows), out_dir / "ablation_summary.json")
        )
        written.append(plot_ablation(rows, out_dir / "ablation.png"))

    noise_csv = run_dir / "noise_sweep.csv"
    if noise_csv.exists():
        rows = []
        with open(noise_csv) as fh:
            for rec in csv.DictReader(fh):
                rows.append(
                    {
                        "kind": rec["kind"],
                        "amplitude": float(rec["amplitude"]),
                        "accuracy": float(rec["accuracy"]),
                        "kappa": float(rec["kappa"]),
                    }
                )
        written.append(plot_noise_sweep(rows, out_dir / "noise_sweep.png"))

    return written

"""Figure rendering for evaluation reports.

Renders matplotlib figures to files next to the delimited report output:
the ROC curve of the pooled pixel population, score histograms per class,
and per-image AUROC bars.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _roc_points(scores, labels):
    order = np.argsort(-scores, kind="stable")
    labels = labels[order]
    tps = np.cumsum(labels)
    fps = np.cumsum(1 - labels)
    tpr = np.concatenate([[0.0], tps / max(tps[-1], 1)])
    fpr = np.concatenate([[0.0], fps / max(fps[-1], 1)])
    return fpr, tpr


def render_figures(report, pooled_scores, pooled_labels, out_dir):
    """Write roc_curve.png, score_hist.png, per_image_auroc.png; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    fpr, tpr = _roc_points(pooled_scores, pooled_labels)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(fpr, tpr, lw=1.5)
    ax.plot([0, 1], [0, 1], ls="--", c="gray", lw=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(f"pooled pixel ROC (AUROC={report.pixel_auroc:.4f})")
    path = os.path.join(out_dir, "roc_curve.png")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    paths.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    bins = np.linspace(0.0, 1.0, 51)
    ax.hist(pooled_scores[pooled_labels == 0], bins=bins, alpha=0.6,
            label="normal pixels", density=True)
    ax.hist(pooled_scores[pooled_labels == 1], bins=bins, alpha=0.6,
            label="anomalous pixels", density=True)
    ax.set_xlabel("anomaly score")
    ax.set_ylabel("density")
    ax.legend()
    ax.set_title(f"score distribution (max F1={report.max_f1:.4f})")
    path = os.path.join(out_dir, "score_hist.png")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    paths.append(path)

    defined = [(r.path, r.auroc) for r in report.per_image if r.auroc is not None]
    if defined:
        names, values = zip(*defined)
        fig, ax = plt.subplots(figsize=(max(6, 0.25 * len(names)), 4))
        ax.bar(range(len(values)), values)
        ax.axhline(report.pixel_auroc, c="k", ls="--", lw=0.8, label="pooled")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=90, fontsize=6)
        ax.set_ylabel("per-image AUROC")
        ax.set_ylim(0, 1.02)
        ax.legend()
        path = os.path.join(out_dir, "per_image_auroc.png")
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        paths.append(path)
    return paths

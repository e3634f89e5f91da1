"""Figure rendering for detection and ablation reports.

Every CLI command that writes a report can also drop PNG figures next to
it: ROC and precision-recall curves plus score histograms for a single
evaluation, a metric-vs-layer-count panel for ablation sweeps, and a
per-method metric comparison for benchmark runs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from snojoe.metrics import ScoreSet


def _roc_points(scores: ScoreSet) -> tuple[np.ndarray, np.ndarray]:
    thresholds = np.unique(np.concatenate([scores.id_scores, scores.ood_scores]))[::-1]
    tpr = [np.mean(scores.id_scores >= t) for t in thresholds]
    fpr = [np.mean(scores.ood_scores >= t) for t in thresholds]
    return np.concatenate([[0.0], fpr, [1.0]]), np.concatenate([[0.0], tpr, [1.0]])


def _pr_points(scores: ScoreSet) -> tuple[np.ndarray, np.ndarray]:
    thresholds = np.unique(np.concatenate([scores.id_scores, scores.ood_scores]))[::-1]
    recall, precision = [0.0], [1.0]
    for t in thresholds:
        tp = np.count_nonzero(scores.id_scores >= t)
        fp = np.count_nonzero(scores.ood_scores >= t)
        recall.append(tp / scores.id_scores.size)
        precision.append(tp / (tp + fp))
    return np.asarray(recall), np.asarray(precision)


def render_detection_figures(scores: ScoreSet, out_prefix) -> list:
    """Write ROC, PR and score-histogram figures; returns the paths."""
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    written = []

    fpr, tpr = _roc_points(scores)
    fig, ax = plt.subplots(figsize=(4.2, 4.0))
    ax.plot(fpr, tpr, lw=1.5)
    ax.plot([0, 1], [0, 1], ls="--", lw=0.8, color="gray")
    ax.set_xlabel("FPR (OOD kept)")
    ax.set_ylabel("TPR (ID kept)")
    ax.set_title(f"ROC: {scores.method_name or 'scores'}")
    path = out_prefix.with_name(out_prefix.name + "_roc.png")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    rec, prec = _pr_points(scores)
    fig, ax = plt.subplots(figsize=(4.2, 4.0))
    ax.plot(rec, prec, lw=1.5)
    ax.set_xlabel("Recall (ID)")
    ax.set_ylabel("Precision (ID)")
    ax.set_ylim(0, 1.02)
    ax.set_title(f"PR: {scores.method_name or 'scores'}")
    path = out_prefix.with_name(out_prefix.name + "_pr.png")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(4.8, 3.2))
    lo = min(scores.id_scores.min(), scores.ood_scores.min())
    hi = max(scores.id_scores.max(), scores.ood_scores.max())
    bins = np.linspace(lo, hi, 40) if hi > lo else 10
    ax.hist(scores.id_scores, bins=bins, alpha=0.6, label="ID", density=True)
    ax.hist(scores.ood_scores, bins=bins, alpha=0.6, label="OOD", density=True)
    ax.set_xlabel("score (larger = more ID)")
    ax.legend()
    path = out_prefix.with_name(out_prefix.name + "_hist.png")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written


def render_ablation_figure(rows: list, out_prefix) -> Path:
    """Metric-vs-normalized-layer-count panel from ablation rows."""
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    layers = [r["sn_layers"] for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(9.6, 3.2))
    for ax, key in zip(axes, ("fpr95", "auroc", "aupr")):
        ax.plot(layers, [r[key] for r in rows], marker="o")
        ax.set_xlabel("normalized layers")
        ax.set_ylabel(key)
        ax.set_xticks(layers)
    path = out_prefix.with_name(out_prefix.name + "_ablation.png")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_method_comparison(reports: list, out_prefix) -> Path:
    """Grouped bars of fpr95/auroc/aupr across methods (benchmark runs)."""
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    names = [r["method"] for r in reports]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(1.1 * len(names) + 2.5, 3.6))
    for off, key in zip((-0.25, 0.0, 0.25), ("fpr95", "auroc", "aupr")):
        ax.bar(x + off, [r[key] for r in reports], width=0.25, label=key)
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylim(0, 1.05)
    ax.legend(ncol=3, fontsize=8)
    path = out_prefix.with_name(out_prefix.name + "_methods.png")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path

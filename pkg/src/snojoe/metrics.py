"""Exact detection metrics over ID/OOD score sets.

All metrics treat in-distribution as the positive class and assume the
common score orientation (larger = more in-distribution). A sample is
predicted ID when its score is >= the threshold; that convention makes
the all-ties case well-defined. The fast paths are O(n log n); an
independent O(n^2) oracle (`oracle_metrics`) recomputes everything by
exhaustive enumeration and shares no code with them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ScoreSet:
    """Named ID and OOD score lists for one detection method."""

    id_scores: np.ndarray
    ood_scores: np.ndarray
    method_name: str = ""
    orientation: str = field(default="larger => ID", repr=False)

    def __post_init__(self):
        for name in ("id_scores", "ood_scores"):
            s = np.asarray(getattr(self, name), dtype=np.float64)
            if s.ndim != 1 or s.size == 0:
                raise ValueError(f"{name} must be a nonempty 1-D list")
            if not np.all(np.isfinite(s)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, s)


@dataclass(frozen=True)
class DetectionReport:
    """FPR95/AUROC/AUPR triple with the threshold and run metadata."""

    fpr95: float
    auroc: float
    aupr: float
    tau: float
    num_id: int
    num_ood: int
    method_name: str = ""
    seed: int | None = None
    aupr_out: float | None = None

    def to_dict(self) -> dict:
        d = {
            "method": self.method_name,
            "fpr95": self.fpr95,
            "auroc": self.auroc,
            "aupr": self.aupr,
            "tau": self.tau,
            "counts": {"num_id": self.num_id, "num_ood": self.num_ood},
        }
        if self.seed is not None:
            d["seed"] = self.seed
        if self.aupr_out is not None:
            d["aupr_out"] = self.aupr_out
        return d


def fpr_at_tpr(scores: ScoreSet, tpr: float = 0.95) -> dict:
    """False-positive rate on OOD at the threshold holding ID TPR at ``tpr``.

    The threshold is the largest ID score value tau such that the
    fraction of ID scores >= tau is at least ``tpr``; the FPR is then the
    fraction of OOD scores >= tau.

    Returns:
        {"fpr": float, "tau": float}
    """
    if not (0.0 < tpr < 1.0):
        raise ValueError("tpr must be in (0, 1)")
    ids = np.sort(scores.id_scores)
    n = ids.size
    # Unique values descending; count of ids >= v falls as v rises.
    tau = None
    for v in np.unique(ids)[::-1]:
        ge = n - np.searchsorted(ids, v, side="left")
        if ge / n >= tpr:
            tau = float(v)
            break
    if tau is None:  # unreachable: v = min always gives fraction 1
        tau = float(ids[0])
    fpr = float(np.count_nonzero(scores.ood_scores >= tau) / scores.ood_scores.size)
    return {"fpr": fpr, "tau": tau}


def auroc(scores: ScoreSet) -> float:
    """Probability a random ID score exceeds a random OOD score, ties
    counted half. Computed from midranks in O(n log n)."""
    ids, oods = scores.id_scores, scores.ood_scores
    n, m = ids.size, oods.size
    combined = np.concatenate([ids, oods])
    order = np.argsort(combined, kind="mergesort")
    ranks = np.empty(combined.size, dtype=np.float64)
    sorted_vals = combined[order]
    i = 0
    while i < sorted_vals.size:
        j = i
        while j + 1 < sorted_vals.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        # Midrank for the tie group [i, j]; ranks are 1-based.
        ranks[order[i : j + 1]] = 0.5 * ((i + 1) + (j + 1))
        i = j + 1
    u = float(np.sum(ranks[:n])) - n * (n + 1) / 2.0
    return float(u / (n * m))


def aupr(scores: ScoreSet, positive: str = "id") -> float:
    """Average precision over descending score thresholds.

    AP = sum_n (R_n - R_{n-1}) * P_n with tie groups processed as one
    block. ``positive`` selects which side counts as the positive class;
    with "ood" the ranking is reversed so low scores rank first.
    """
    if positive == "id":
        pos, neg = scores.id_scores, scores.ood_scores
    elif positive == "ood":
        pos, neg = -scores.ood_scores, -scores.id_scores
    else:
        raise ValueError("positive must be 'id' or 'ood'")
    labels = np.concatenate([np.ones(pos.size, dtype=np.int64), np.zeros(neg.size, dtype=np.int64)])
    vals = np.concatenate([pos, neg])
    order = np.argsort(-vals, kind="mergesort")
    vals, labels = vals[order], labels[order]

    n_pos = pos.size
    tp = 0
    fp = 0
    recall_prev = 0.0
    ap = 0.0
    i = 0
    while i < vals.size:
        j = i
        while j + 1 < vals.size and vals[j + 1] == vals[i]:
            j += 1
        block = labels[i : j + 1]
        tp += int(np.count_nonzero(block))
        fp += int(block.size - np.count_nonzero(block))
        precision = tp / (tp + fp)
        recall = tp / n_pos
        ap += (recall - recall_prev) * precision
        recall_prev = recall
        i = j + 1
    return float(ap)


def evaluate(
    scores: ScoreSet,
    tpr: float = 0.95,
    seed: int | None = None,
    include_aupr_out: bool = False,
) -> DetectionReport:
    """Run all three metrics on ``scores`` and bundle them in a report."""
    at = fpr_at_tpr(scores, tpr)
    return DetectionReport(
        fpr95=at["fpr"],
        auroc=auroc(scores),
        aupr=aupr(scores),
        tau=at["tau"],
        num_id=int(scores.id_scores.size),
        num_ood=int(scores.ood_scores.size),
        method_name=scores.method_name,
        seed=seed,
        aupr_out=aupr(scores, positive="ood") if include_aupr_out else None,
    )


# ---------------------------------------------------------------------------
# Brute-force oracle: exhaustive threshold enumeration and pairwise
# comparison. Kept free of any code shared with the fast paths above.
# ---------------------------------------------------------------------------


def _oracle_fpr_at_tpr(ids: np.ndarray, oods: np.ndarray, tpr: float) -> tuple[float, float]:
    best_tau = None
    for v in sorted(set(ids.tolist())):
        ge = sum(1 for s in ids if s >= v)
        if ge / len(ids) >= tpr and (best_tau is None or v > best_tau):
            best_tau = v
    assert best_tau is not None
    fpr = sum(1 for s in oods if s >= best_tau) / len(oods)
    return float(fpr), float(best_tau)


def _oracle_auroc(ids: np.ndarray, oods: np.ndarray) -> float:
    total = 0.0
    for a in ids:
        for b in oods:
            if a > b:
                total += 1.0
            elif a == b:
                total += 0.5
    return float(total / (len(ids) * len(oods)))


def _oracle_aupr(ids: np.ndarray, oods: np.ndarray) -> float:
    thresholds = sorted(set(ids.tolist()) | set(oods.tolist()), reverse=True)
    ap = 0.0
    recall_prev = 0.0
    for t in thresholds:
        tp = sum(1 for s in ids if s >= t)
        fp = sum(1 for s in oods if s >= t)
        precision = tp / (tp + fp)
        recall = tp / len(ids)
        ap += (recall - recall_prev) * precision
        recall_prev = recall
    return float(ap)


def oracle_metrics(scores: ScoreSet, tpr: float = 0.95) -> DetectionReport:
    """All three metrics by exhaustive O(n^2) enumeration; test use only."""
    ids, oods = scores.id_scores, scores.ood_scores
    fpr, tau = _oracle_fpr_at_tpr(ids, oods, tpr)
    return DetectionReport(
        fpr95=fpr,
        auroc=_oracle_auroc(ids, oods),
        aupr=_oracle_aupr(ids, oods),
        tau=tau,
        num_id=int(ids.size),
        num_ood=int(oods.size),
        method_name=scores.method_name,
    )

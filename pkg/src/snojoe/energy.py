"""Energy scores and the in/out decision rule.

Every score in the toolkit is oriented so that larger means more
in-distribution. The multi-class free energy is therefore returned
negated (as a log-sum-exp), and the label-wise joint energy is a sum of
softplus terms, which is strictly positive and strictly increasing in
every logit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MIN_CALIBRATION_SCORES = 20


@dataclass(frozen=True)
class Threshold:
    """Calibrated decision cutoff: scores strictly above ``tau`` are "in"."""

    tau: float
    target_tpr: float
    calibration_size: int


def _softplus(f: np.ndarray) -> np.ndarray:
    # log(1 + e^f) without overflow: f + log1p(e^-f) on the positive branch.
    out = np.empty_like(f)
    pos = f > 0
    out[pos] = f[pos] + np.log1p(np.exp(-f[pos]))
    out[~pos] = np.log1p(np.exp(f[~pos]))
    return out


def free_energy(logits) -> float:
    """Negated multi-class free energy: log sum_i e^(f_i), max-shifted."""
    f = np.asarray(logits, dtype=np.float64)
    if f.ndim != 1 or f.size == 0:
        raise ValueError("logits must be a nonempty 1-D vector")
    if not np.all(np.isfinite(f)):
        raise ValueError("logits must be finite")
    m = np.max(f)
    return float(m + np.log(np.sum(np.exp(f - m))))


def label_energy(f: float) -> float:
    """Per-label energy -log(1 + e^f); always strictly negative."""
    if not np.isfinite(f):
        raise ValueError("logit must be finite")
    return float(-_softplus(np.asarray([f], dtype=np.float64))[0])


def joint_energy(logits) -> float:
    """Label-wise joint energy: sum_i softplus(f_i) = -sum_i label_energy(f_i).

    Positive (up to float underflow deep in the negative tail) and
    strictly increasing in every logit; larger means more
    in-distribution.
    """
    f = np.asarray(logits, dtype=np.float64)
    if f.ndim != 1 or f.size == 0:
        raise ValueError("logits must be a nonempty 1-D vector")
    if not np.all(np.isfinite(f)):
        raise ValueError("logits must be finite")
    # fsum: the identity with -sum(label_energy) must hold to 1e-12 even
    # when the terms span ten orders of magnitude.
    return math.fsum(_softplus(f))


def select_tau(id_scores, target_tpr: float) -> float:
    """Largest observed score tau such that the fraction of ``id_scores``
    strictly greater than tau is at least ``target_tpr``.

    Candidates are the observed scores themselves (sorting and indexing,
    no interpolation). If no observed score qualifies -- e.g. all scores
    tie -- fall back to min(scores) - 1.0 so every calibration score
    lands strictly above tau.
    """
    if not (0.0 < target_tpr < 1.0):
        raise ValueError("target_tpr must be in (0, 1)")
    s = np.asarray(id_scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("id_scores must be a nonempty 1-D list")
    if not np.all(np.isfinite(s)):
        raise ValueError("id_scores must be finite")
    n = s.size
    s_sorted = np.sort(s)
    for v in np.unique(s)[::-1]:
        greater = n - np.searchsorted(s_sorted, v, side="right")
        if greater / n >= target_tpr:
            return float(v)
    return float(s_sorted[0] - 1.0)


def calibrate_tau(id_scores, target_tpr: float = 0.95) -> Threshold:
    """Calibrate the decision threshold on held-out in-distribution scores.

    Requires at least MIN_CALIBRATION_SCORES scores; see ``select_tau``
    for the selection rule.
    """
    s = np.asarray(id_scores, dtype=np.float64)
    if s.size < MIN_CALIBRATION_SCORES:
        raise ValueError(
            f"need at least {MIN_CALIBRATION_SCORES} ID scores to calibrate, got {s.size}"
        )
    tau = select_tau(s, target_tpr)
    return Threshold(tau=tau, target_tpr=target_tpr, calibration_size=int(s.size))


def detect(score: float, threshold: Threshold) -> str:
    """Decision rule: "in" iff score > tau, "out" iff score <= tau."""
    return "in" if score > threshold.tau else "out"

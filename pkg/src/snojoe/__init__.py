"""Spectral-normalized joint-energy OOD detection toolkit.

A small, self-contained stack for multi-label out-of-distribution
detection: a residual multi-label classifier with spectrally normalized
early layers, label-wise joint-energy scoring, six baseline scores, and
an exact FPR95/AUROC/AUPR evaluation harness. All scores use the
"larger means more in-distribution" orientation.
"""

__version__ = "0.1.0"

from snojoe.energy import free_energy, joint_energy, label_energy
from snojoe.linalg import lipschitz_bounds, power_iteration, spectral_norm_oracle
from snojoe.metrics import DetectionReport, ScoreSet, auroc, aupr, fpr_at_tpr

__all__ = [
    "__version__",
    "DetectionReport",
    "ScoreSet",
    "auroc",
    "aupr",
    "fpr_at_tpr",
    "free_energy",
    "joint_energy",
    "label_energy",
    "lipschitz_bounds",
    "power_iteration",
    "spectral_norm_oracle",
]

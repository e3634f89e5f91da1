"""Synthetic multi-label datasets and CSV ingestion.

The generators are deterministic: all draws come from Philox streams
keyed by splitmix64-derived seeds (see `snojoe.seeding`), with separate
streams for prototypes, ID samples, and OOD samples so that changing
OOD parameters never perturbs the ID draw.

CSV conventions: UTF-8, comma-separated, '.' decimal point, one optional
header row (auto-detected by a non-numeric first row). features.csv has
input_dim decimal columns, labels.csv has K columns of {0,1}, logits.csv
has K decimal columns, scores.csv has a single decimal column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from snojoe.seeding import derive_seed, make_rng

OOD_MODES = ("shift", "uniform", "sparse-label")


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic multi-label generator."""

    num_labels: int = 10
    input_dim: int = 32
    samples: int = 2000
    label_prob: float = 0.3
    noise_sigma: float = 0.5
    prototype_scale: float = 2.0
    seed: int = 0
    ood_mode: str = "shift"
    shift_magnitude: float = 4.0

    def __post_init__(self):
        if self.num_labels < 1 or self.input_dim < 1 or self.samples < 1:
            raise ValueError("num_labels, input_dim and samples must be positive")
        if not (0.0 < self.label_prob < 1.0):
            raise ValueError(f"label_prob must be in (0, 1), got {self.label_prob!r}")
        if self.noise_sigma <= 0.0 or self.prototype_scale <= 0.0:
            raise ValueError("noise_sigma and prototype_scale must be positive")
        if self.ood_mode not in OOD_MODES:
            raise ValueError(f"ood_mode must be one of {OOD_MODES}, got {self.ood_mode!r}")
        if self.shift_magnitude < 0.0:
            raise ValueError("shift_magnitude must be nonnegative")


@dataclass
class MultiLabelDataset:
    """Feature rows paired with multi-hot label rows, plus split tags."""

    features: np.ndarray
    labels: np.ndarray
    provenance: str = ""
    splits: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.ndim != 2:
            raise ValueError("features and labels must be 2-D")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"row count mismatch: {self.features.shape[0]} feature rows "
                f"vs {self.labels.shape[0]} label rows"
            )
        bad = (self.labels != 0) & (self.labels != 1)
        if np.any(bad):
            r, c = np.argwhere(bad)[0]
            raise ValueError(f"label at row {r + 1}, column {c + 1} is not 0 or 1")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def num_labels(self) -> int:
        return self.labels.shape[1]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, split: str) -> "MultiLabelDataset":
        """New dataset restricted to the rows tagged with ``split``."""
        if split not in self.splits:
            raise KeyError(f"no split {split!r}; have {sorted(self.splits)}")
        idx = self.splits[split]
        return MultiLabelDataset(
            features=self.features[idx],
            labels=self.labels[idx],
            provenance=f"{self.provenance}[{split}]",
        )


def _default_splits(n: int) -> dict:
    """Contiguous 70/10/20 train/val/test partition."""
    n_train = int(n * 0.7)
    n_val = int(n * 0.1)
    return {
        "train": np.arange(0, n_train),
        "val": np.arange(n_train, n_train + n_val),
        "test": np.arange(n_train + n_val, n),
    }


def _prototypes(spec: SyntheticSpec) -> np.ndarray:
    rng = make_rng(derive_seed(spec.seed, 0))
    return spec.prototype_scale * rng.standard_normal((spec.num_labels, spec.input_dim))


def _draw_labels(rng: np.random.Generator, n: int, k: int, p: float) -> np.ndarray:
    labels = np.zeros((n, k), dtype=np.int64)
    for i in range(n):
        while True:
            row = (rng.random(k) < p).astype(np.int64)
            if row.any():  # all-zero label vectors are rejection-resampled
                labels[i] = row
                break
    return labels


def generate_id(spec: SyntheticSpec) -> MultiLabelDataset:
    """In-distribution set: features are sums of active-label prototypes
    plus Gaussian noise; every sample has at least one active label."""
    protos = _prototypes(spec)
    rng = make_rng(derive_seed(spec.seed, 1))
    labels = _draw_labels(rng, spec.samples, spec.num_labels, spec.label_prob)
    noise = spec.noise_sigma * rng.standard_normal((spec.samples, spec.input_dim))
    features = labels.astype(np.float64) @ protos + noise
    return MultiLabelDataset(
        features=features,
        labels=labels,
        provenance=f"synthetic-id(seed={spec.seed})",
        splits=_default_splits(spec.samples),
    )


def uniform_bound(spec: SyntheticSpec) -> float:
    """Half-width of the uniform OOD support, chosen so the per-coordinate
    variance matches the ID generative variance."""
    var = spec.label_prob * spec.num_labels * spec.prototype_scale**2 + spec.noise_sigma**2
    return math.sqrt(3.0 * var)


def generate_ood(spec: SyntheticSpec) -> MultiLabelDataset:
    """Out-of-distribution set in one of three regimes.

    shift: active-label prototypes are displaced by ``shift_magnitude``
    along seeded random unit directions, then sampled like ID. uniform:
    features uniform on a variance-matched box. sparse-label: exactly one
    active label per sample, the feature being that single prototype plus
    noise (close to ID in its strongest label, far in the label sum).
    """
    protos = _prototypes(spec)
    rng = make_rng(derive_seed(spec.seed, 2))
    k, d, n = spec.num_labels, spec.input_dim, spec.samples

    if spec.ood_mode == "shift":
        directions = rng.standard_normal((k, d))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        shifted = protos + spec.shift_magnitude * directions
        labels = _draw_labels(rng, n, k, spec.label_prob)
        noise = spec.noise_sigma * rng.standard_normal((n, d))
        features = labels.astype(np.float64) @ shifted + noise
    elif spec.ood_mode == "uniform":
        b = uniform_bound(spec)
        features = rng.uniform(-b, b, size=(n, d))
        labels = _draw_labels(rng, n, k, spec.label_prob)
    else:  # sparse-label
        active = rng.integers(0, k, size=n)
        labels = np.zeros((n, k), dtype=np.int64)
        labels[np.arange(n), active] = 1
        features = protos[active] + spec.noise_sigma * rng.standard_normal((n, d))

    return MultiLabelDataset(
        features=features,
        labels=labels,
        provenance=f"synthetic-ood-{spec.ood_mode}(seed={spec.seed})",
        splits=_default_splits(n),
    )


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------


def _parse_numeric_csv(path, expect_cols: int | None = None) -> np.ndarray:
    """Parse a numeric CSV into a 2-D float array.

    A single leading header row is skipped when any of its cells fails to
    parse as a number. Errors name the offending row and column (1-based,
    counted in the file including any header).
    """
    path = Path(path)
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip() != ""]
    if not lines:
        raise ValueError(f"{path}: file is empty")

    def try_parse(cells):
        row = []
        for c in cells:
            try:
                row.append(float(c))
            except ValueError:
                return None
        return row

    start = 0
    first = try_parse(lines[0].split(","))
    if first is None:
        start = 1
        if len(lines) == 1:
            raise ValueError(f"{path}: only a header row, no data")

    rows = []
    ncols = expect_cols
    for lineno in range(start, len(lines)):
        cells = lines[lineno].split(",")
        if ncols is None:
            ncols = len(cells)
        if len(cells) != ncols:
            raise ValueError(
                f"{path}: row {lineno + 1} has {len(cells)} columns, expected {ncols}"
            )
        row = []
        for col, cell in enumerate(cells):
            try:
                val = float(cell)
            except ValueError:
                raise ValueError(
                    f"{path}: non-numeric cell at row {lineno + 1}, column {col + 1}: {cell!r}"
                ) from None
            if not math.isfinite(val):
                raise ValueError(
                    f"{path}: non-finite value at row {lineno + 1}, column {col + 1}"
                )
            row.append(val)
        rows.append(row)
    return np.asarray(rows, dtype=np.float64)


def load_csv(features_path, labels_path=None) -> MultiLabelDataset:
    """Load features (and optionally labels) into a dataset.

    Without ``labels_path`` the labels default to a single always-on
    column, which keeps scoring-only workflows label-free.
    """
    features = _parse_numeric_csv(features_path)
    if labels_path is None:
        labels = np.ones((features.shape[0], 1), dtype=np.int64)
    else:
        raw = _parse_numeric_csv(labels_path)
        if raw.shape[0] != features.shape[0]:
            raise ValueError(
                f"row count mismatch: {features.shape[0]} feature rows "
                f"vs {raw.shape[0]} label rows"
            )
        bad = ~np.isin(raw, (0.0, 1.0))
        if np.any(bad):
            r, c = np.argwhere(bad)[0]
            raise ValueError(
                f"{labels_path}: label at row {r + 1}, column {c + 1} is not 0 or 1"
            )
        labels = raw.astype(np.int64)
    ds = MultiLabelDataset(features=features, labels=labels, provenance=str(features_path))
    ds.splits = _default_splits(len(ds))
    return ds


def load_logits_csv(path) -> np.ndarray:
    """Load a logits table (one K-column decimal row per sample)."""
    return _parse_numeric_csv(path)


def load_scores_csv(path) -> np.ndarray:
    """Load a single-column scores file."""
    arr = _parse_numeric_csv(path)
    if arr.shape[1] != 1:
        raise ValueError(f"{path}: expected a single score column, got {arr.shape[1]}")
    return arr[:, 0]


def _write_rows(path, header: list[str], rows: np.ndarray, fmt) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def save_features_csv(path, features: np.ndarray) -> None:
    # repr() picks the shortest decimal that round-trips the float64 exactly.
    _write_rows(path, [f"f{i}" for i in range(features.shape[1])], features, lambda v: repr(float(v)))


def save_labels_csv(path, labels: np.ndarray) -> None:
    _write_rows(path, [f"y{i}" for i in range(labels.shape[1])], labels, lambda v: str(int(v)))


def save_scores_csv(path, scores: np.ndarray) -> None:
    _write_rows(path, ["score"], np.asarray(scores, dtype=np.float64)[:, None], lambda v: repr(float(v)))

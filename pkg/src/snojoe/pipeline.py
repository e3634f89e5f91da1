"""End-to-end orchestration: scoring, ablation sweeps, and the seeded
default benchmark.

Seed discipline: every run hangs off one master seed. Stage seeds come
from `snojoe.seeding.derive_seed(master, index)` with fixed indices:
0 = dataset, 1 = primary (spectrally normalized) model, 2 = unnormalized
reference model, 3 = isolation forest, 4 + L = model for ablation point
L. A standalone run handed the same derived seed reproduces the
corresponding sweep row exactly.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from snojoe import baselines, energy
from snojoe.data import MultiLabelDataset, SyntheticSpec, generate_id, generate_ood
from snojoe.metrics import ScoreSet, evaluate
from snojoe.model import ModelConfig, ResidualClassifier, forward_batch, input_gradient, train
from snojoe.seeding import derive_seed

DATA_SEED_INDEX = 0
SN_MODEL_SEED_INDEX = 1
PLAIN_MODEL_SEED_INDEX = 2
IFOREST_SEED_INDEX = 3
ABLATION_SEED_OFFSET = 4

LOGIT_METHODS = ("snojoe", "jointenergy", "free-energy", "msp", "maxlogit", "odin")
FEATURE_METHODS = ("mahalanobis", "lof", "iforest")
ALL_METHODS = LOGIT_METHODS + FEATURE_METHODS


def score_logit_rows(logits: np.ndarray, method: str, temperature: float = 1000.0) -> np.ndarray:
    """Apply a logit-based scorer to each row of a logits table."""
    logits = np.asarray(logits, dtype=np.float64)
    if method in ("snojoe", "jointenergy"):
        fn = energy.joint_energy
    elif method == "free-energy":
        fn = energy.free_energy
    elif method == "msp":
        fn = baselines.msp_score
    elif method == "maxlogit":
        fn = baselines.maxlogit_score
    elif method == "odin":
        fn = lambda f: baselines.odin_score(lambda _: f, np.zeros(1), temperature, 0.0)
    else:
        raise ValueError(f"{method!r} is not a logit-based method")
    return np.asarray([fn(row) for row in logits])


def score_with_model(
    model: ResidualClassifier,
    X: np.ndarray,
    method: str,
    fit_features: np.ndarray | None = None,
    fit_labels: np.ndarray | None = None,
    temperature: float = 1000.0,
    epsilon: float = 0.0,
    lof_k: int = 20,
    iforest_trees: int = 100,
    iforest_subsample: int = 256,
    iforest_seed: int = 0,
    ridge_lambda: float = 1e-6,
) -> np.ndarray:
    """Score rows of ``X`` through ``model`` with any supported method.

    Feature-based methods fit their auxiliary structure on the model's
    penultimate features of ``fit_features`` (labels required for
    mahalanobis); logit-based methods only need the forward pass.
    """
    X = np.asarray(X, dtype=np.float64)
    penult, logits = forward_batch(model, X)

    if method in LOGIT_METHODS:
        if method == "odin" and epsilon > 0.0:
            grad = lambda x, j: input_gradient(model, x, j)
            logit_fn = lambda x: forward_batch(model, x[None, :])[1][0]
            return np.asarray(
                [baselines.odin_score(logit_fn, x, temperature, epsilon, grad) for x in X]
            )
        return score_logit_rows(logits, method, temperature)

    if method not in FEATURE_METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {ALL_METHODS}")
    if fit_features is None:
        raise ValueError(f"method {method!r} needs fitted auxiliaries; pass fit data")
    fit_penult, _ = forward_batch(model, np.asarray(fit_features, dtype=np.float64))

    if method == "mahalanobis":
        if fit_labels is None:
            raise ValueError("mahalanobis needs the fit set's labels")
        m = baselines.mahalanobis_fit(fit_penult, np.asarray(fit_labels), ridge_lambda)
        return np.asarray([baselines.mahalanobis_score(m, z) for z in penult])
    if method == "lof":
        idx = baselines.lof_fit(fit_penult, lof_k)
        return np.asarray([baselines.lof_score(idx, z) for z in penult])
    forest = baselines.iforest_fit(fit_penult, iforest_trees, iforest_subsample, iforest_seed)
    return np.asarray([baselines.iforest_score(forest, z) for z in penult])


def _benchmark_id_spec(spec: SyntheticSpec) -> MultiLabelDataset:
    # 2000/500/500 train/val/test split over 3000 generated ID samples.
    ds = generate_id(spec)
    n = len(ds)
    n_train, n_val = 2000, 500
    ds.splits = {
        "train": np.arange(0, n_train),
        "val": np.arange(n_train, n_train + n_val),
        "test": np.arange(n_train + n_val, n),
    }
    return ds


def run_single(
    dataset_id: MultiLabelDataset,
    dataset_ood: MultiLabelDataset,
    config: ModelConfig,
    method: str = "snojoe",
    tpr: float = 0.95,
) -> dict:
    """Train on the ID train split, score ID-test and OOD with a logit
    method, and evaluate. Returns {"model", "report", "scores"}."""
    model = train(dataset_id.subset("train"), config)
    _, logits_id = forward_batch(model, dataset_id.subset("test").features)
    _, logits_ood = forward_batch(model, dataset_ood.features)
    scores = ScoreSet(
        score_logit_rows(logits_id, method),
        score_logit_rows(logits_ood, method),
        method_name=method,
    )
    report = evaluate(scores, tpr=tpr, seed=config.seed)
    return {"model": model, "report": report, "scores": scores}


def ablation_sweep(
    spec: SyntheticSpec,
    base_config: ModelConfig,
    layers: list,
    master_seed: int,
    tpr: float = 0.95,
    ood_samples: int | None = None,
) -> list:
    """Train one model per normalized-layer count and evaluate each with
    joint energy. Data comes from ``derive_seed(master, 0)``; the model
    for layer count L uses ``derive_seed(master, 4 + L)``."""
    if len(set(layers)) != len(layers):
        raise ValueError("ablation layer counts must be distinct")
    spec = replace(spec, seed=derive_seed(master_seed, DATA_SEED_INDEX))
    ds_id = generate_id(spec)
    ds_ood = generate_ood(replace(spec, samples=ood_samples or spec.samples))
    rows = []
    for L in sorted(layers):
        cfg = replace(base_config, sn_layers=L, seed=derive_seed(master_seed, ABLATION_SEED_OFFSET + L))
        out = run_single(ds_id, ds_ood, cfg, method="snojoe" if L > 0 else "jointenergy", tpr=tpr)
        r = out["report"]
        rows.append(
            {
                "sn_layers": L,
                "fpr95": r.fpr95,
                "auroc": r.auroc,
                "aupr": r.aupr,
                "tau": r.tau,
                "seed": cfg.seed,
            }
        )
    return rows


BENCHMARK_SPEC = SyntheticSpec(
    num_labels=10,
    input_dim=32,
    samples=3000,
    label_prob=0.3,
    noise_sigma=0.5,
    prototype_scale=2.0,
    ood_mode="shift",
    shift_magnitude=4.0,
)

BENCHMARK_MODEL = dict(
    input_dim=32,
    hidden_dim=64,
    num_blocks=3,
    num_labels=10,
    learning_rate=1e-3,
    epochs=40,
    batch_size=64,
)


def benchmark(master_seed: int, tpr: float = 0.95) -> dict:
    """The documented default pipeline: synthetic ID (2000 train / 500
    val / 500 test) vs 500 shift-mode OOD samples, two trained models
    (normalized and not), and a report row for all nine score methods.

    Deterministic: the same master seed reproduces the result exactly.
    """
    spec = replace(BENCHMARK_SPEC, seed=derive_seed(master_seed, DATA_SEED_INDEX))
    ds_id = _benchmark_id_spec(spec)
    ds_ood = generate_ood(replace(spec, samples=500))

    sn_cfg = ModelConfig(
        sn_layers=BENCHMARK_MODEL["num_blocks"] + 1,
        seed=derive_seed(master_seed, SN_MODEL_SEED_INDEX),
        **BENCHMARK_MODEL,
    )
    plain_cfg = ModelConfig(
        sn_layers=0, seed=derive_seed(master_seed, PLAIN_MODEL_SEED_INDEX), **BENCHMARK_MODEL
    )
    train_split = ds_id.subset("train")
    sn_model = train(train_split, sn_cfg)
    plain_model = train(train_split, plain_cfg)

    X_test = ds_id.subset("test").features
    X_ood = ds_ood.features
    fit_kwargs = dict(
        fit_features=train_split.features,
        fit_labels=train_split.labels,
        iforest_seed=derive_seed(master_seed, IFOREST_SEED_INDEX),
    )

    reports = []
    for method in ALL_METHODS:
        model = plain_model if method == "jointenergy" else sn_model
        s_id = score_with_model(model, X_test, method, **fit_kwargs)
        s_ood = score_with_model(model, X_ood, method, **fit_kwargs)
        rep = evaluate(ScoreSet(s_id, s_ood, method_name=method), tpr=tpr, seed=master_seed)
        reports.append(rep.to_dict())

    # Deployment threshold for the headline method, calibrated on held-out
    # ID validation scores only.
    _, logits_val = forward_batch(sn_model, ds_id.subset("val").features)
    val_scores = score_logit_rows(logits_val, "snojoe")
    thr = energy.calibrate_tau(val_scores, target_tpr=tpr)

    return {
        "seed": master_seed,
        "reports": reports,
        "deployment_tau": thr.tau,
        "config": {
            "data": {k: getattr(spec, k) for k in SyntheticSpec.__dataclass_fields__},
            "sn_model": {k: getattr(sn_cfg, k) for k in ModelConfig.__dataclass_fields__},
            "plain_model": {k: getattr(plain_cfg, k) for k in ModelConfig.__dataclass_fields__},
            "target_tpr": tpr,
        },
    }

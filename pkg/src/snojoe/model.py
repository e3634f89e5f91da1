"""Residual multi-label classifier with spectrally normalized early layers.

The network is a residual MLP: an affine input projection (layer 0)
followed by ``num_blocks`` residual blocks h <- h + relu(W h + b), with
one linear head row per label on the penultimate features. During
training the first ``sn_layers`` weight matrices are divided by their
power-iteration spectral-norm estimate before every forward pass, and
the division is part of the computation graph, so gradients see it.
Biases and heads are never normalized.

Training is single-threaded, runs on float64, and is bit-reproducible
under a fixed seed. A finalized model stores the normalized weights
(polished with a long power-iteration run), so its forward pass is a
plain evaluation of the stored parameters.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from snojoe.data import MultiLabelDataset
from snojoe.linalg import (
    SIGMA_FLOOR,
    PowerIterState,
    as_vector,
    init_power_state,
    normalize_spectral,
    power_iteration,
)
from snojoe.seeding import make_rng

FORMAT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

FINALIZE_STEPS = 500
FINALIZE_TOL = 1e-10


class ModelFormatError(ValueError):
    """Raised when a model file is corrupt or from an unsupported version."""


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_dim: int
    num_blocks: int
    sn_layers: int
    num_labels: int
    learning_rate: float = 1e-4
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if min(self.input_dim, self.hidden_dim, self.num_blocks, self.num_labels) < 1:
            raise ValueError("all dimensions must be >= 1")
        if not (0 <= self.sn_layers <= self.num_blocks + 1):
            raise ValueError(
                f"sn_layers must be in [0, num_blocks + 1] = [0, {self.num_blocks + 1}], "
                f"got {self.sn_layers}"
            )
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass
class ResidualClassifier:
    """Finalized model: weights (normalized where configured), head rows,
    spectral-norm state per normalized layer, and the training config."""

    config: ModelConfig
    input_W: np.ndarray
    input_b: np.ndarray
    block_Ws: list
    block_bs: list
    heads: np.ndarray
    sn_state: list  # PowerIterState per normalized layer, index = layer
    training_loss: list = field(default_factory=list)


def _sigmoid(f: np.ndarray) -> np.ndarray:
    out = np.empty_like(f)
    pos = f >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-f[pos]))
    ef = np.exp(f[~pos])
    out[~pos] = ef / (1.0 + ef)
    return out


def predict_proba(logits) -> np.ndarray:
    """Per-label probability e^f / (1 + e^f), branch form (no overflow)."""
    f = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise ValueError("logits must be finite")
    return _sigmoid(f)


def _init_params(config: ModelConfig, rng: np.random.Generator) -> dict:
    h, d, k = config.hidden_dim, config.input_dim, config.num_labels
    params = {
        "input_W": rng.standard_normal((h, d)) * np.sqrt(2.0 / d),
        "input_b": np.zeros(h),
    }
    for i in range(config.num_blocks):
        params[f"block{i}_W"] = rng.standard_normal((h, h)) * np.sqrt(2.0 / h)
        params[f"block{i}_b"] = np.zeros(h)
    params["heads"] = rng.standard_normal((k, h)) * np.sqrt(1.0 / h)
    return params


def _layer_param_name(layer: int) -> str:
    # Layer 0 is the input projection; layers 1..num_blocks are blocks.
    return "input_W" if layer == 0 else f"block{layer - 1}_W"


def _effective_weights(params: dict, config: ModelConfig, sn_uv: dict) -> tuple[dict, dict]:
    """Divide each normalized layer's raw weights by sigma = u^T W v.

    ``sn_uv`` maps layer index -> (u, v); u and v are treated as
    constants, so sigma is a differentiable function of the raw weights.
    Returns (effective params, sigma by layer).
    """
    eff = dict(params)
    sigmas = {}
    for layer, (u, v) in sn_uv.items():
        name = _layer_param_name(layer)
        W = params[name]
        sigma = float(u @ W @ v)
        if not np.isfinite(sigma) or sigma < SIGMA_FLOOR:
            raise RuntimeError(
                f"degenerate spectral-norm estimate {sigma!r} at layer {layer}; "
                "the layer's weights have collapsed"
            )
        eff[name] = W / sigma
        sigmas[layer] = sigma
    return eff, sigmas


def _forward_batch_params(eff: dict, config: ModelConfig, X: np.ndarray):
    """Forward pass on effective weights, keeping caches for backward."""
    H = X @ eff["input_W"].T + eff["input_b"]
    cache = {"X": X, "H0": H, "Zs": [], "Hins": []}
    for i in range(config.num_blocks):
        Z = H @ eff[f"block{i}_W"].T + eff[f"block{i}_b"]
        cache["Hins"].append(H)
        cache["Zs"].append(Z)
        H = H + np.maximum(Z, 0.0)
    logits = H @ eff["heads"].T
    cache["penultimate"] = H
    return logits, cache


def loss_and_gradients(
    params: dict,
    config: ModelConfig,
    sn_uv: dict,
    X: np.ndarray,
    Y: np.ndarray,
) -> tuple[float, dict]:
    """Mean-over-batch, sum-over-labels logistic loss and its gradients
    with respect to the raw parameters.

    The spectral division W / (u^T W v) for normalized layers happens
    inside this function, so the returned gradients match central finite
    differences of the loss at fixed (u, v).
    """
    eff, sigmas = _effective_weights(params, config, sn_uv)
    logits, cache = _forward_batch_params(eff, config, X)
    B = X.shape[0]

    # Stable per-element BCE in logits form: max(f,0) - y*f + log1p(e^-|f|).
    loss = float(
        np.sum(np.maximum(logits, 0.0) - Y * logits + np.log1p(np.exp(-np.abs(logits)))) / B
    )

    dF = (_sigmoid(logits) - Y) / B
    grads = {"heads": dF.T @ cache["penultimate"]}
    dH = dF @ eff["heads"]
    for i in range(config.num_blocks - 1, -1, -1):
        dZ = dH * (cache["Zs"][i] > 0.0)
        grads[f"block{i}_W"] = dZ.T @ cache["Hins"][i]
        grads[f"block{i}_b"] = dZ.sum(axis=0)
        dH = dH + dZ @ eff[f"block{i}_W"]
    grads["input_W"] = dH.T @ cache["X"]
    grads["input_b"] = dH.sum(axis=0)

    # Chain rule through W_hat = W / sigma, sigma = u^T W v:
    # dL/dW = (G - <G, W_hat> u v^T) / sigma with G = dL/dW_hat.
    for layer, (u, v) in sn_uv.items():
        name = _layer_param_name(layer)
        G = grads[name]
        W_hat = eff[name]
        grads[name] = (G - np.sum(G * W_hat) * np.outer(u, v)) / sigmas[layer]
    return loss, grads


class _Adam:
    def __init__(self, params: dict, lr: float):
        self.lr = lr
        self.t = 0
        self.m = {k: np.zeros_like(p) for k, p in params.items()}
        self.v = {k: np.zeros_like(p) for k, p in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - ADAM_BETA1**self.t
        bc2 = 1.0 - ADAM_BETA2**self.t
        for k in params:
            g = grads[k]
            self.m[k] = ADAM_BETA1 * self.m[k] + (1.0 - ADAM_BETA1) * g
            self.v[k] = ADAM_BETA2 * self.v[k] + (1.0 - ADAM_BETA2) * g * g
            params[k] -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + ADAM_EPS)


def train(data: MultiLabelDataset, config: ModelConfig) -> ResidualClassifier:
    """Fit the classifier on ``data`` with Adam.

    Each optimizer step runs one power-iteration refinement per
    normalized layer, divides those weights by the refreshed sigma, and
    backpropagates through the division. After the last epoch the sigma
    estimates are polished (500 steps, tol 1e-10) and baked into the
    stored weights, so every normalized layer of the returned model has
    spectral norm 1 up to the polish tolerance.
    """
    if len(data) == 0:
        raise ValueError("training dataset is empty")
    if data.input_dim != config.input_dim or data.num_labels != config.num_labels:
        raise ValueError(
            f"dataset shape ({data.input_dim} features, {data.num_labels} labels) "
            f"does not match config ({config.input_dim}, {config.num_labels})"
        )
    inactive = np.flatnonzero(data.labels.sum(axis=0) == 0)
    if inactive.size:
        raise ValueError(f"labels {inactive.tolist()} never occur in the training set")

    rng = make_rng(config.seed)
    params = _init_params(config, rng)
    sn_states = {
        layer: init_power_state(params[_layer_param_name(layer)], rng)
        for layer in range(config.sn_layers)
    }
    opt = _Adam(params, config.learning_rate)

    X_all = data.features
    Y_all = data.labels.astype(np.float64)
    n = len(data)
    epoch_losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            sn_uv = {}
            for layer, state in sn_states.items():
                power_iteration(params[_layer_param_name(layer)], state, steps=1, tol=1e-30)
                sn_uv[layer] = (state.u, state.v)
            loss, grads = loss_and_gradients(params, config, sn_uv, X_all[idx], Y_all[idx])
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite training loss at epoch {epoch + 1}, "
                    f"step {start // config.batch_size + 1}: {loss!r}"
                )
            opt.step(params, grads)
            total += loss * idx.size
        epoch_losses.append(total / n)

    # Finalize: tight sigma, then bake the division into the stored weights.
    sn_final = []
    for layer in range(config.sn_layers):
        name = _layer_param_name(layer)
        state = sn_states[layer]
        power_iteration(params[name], state, steps=FINALIZE_STEPS, tol=FINALIZE_TOL)
        params[name] = normalize_spectral(params[name], state.sigma_estimate)
        sn_final.append(state)

    return ResidualClassifier(
        config=config,
        input_W=params["input_W"],
        input_b=params["input_b"],
        block_Ws=[params[f"block{i}_W"] for i in range(config.num_blocks)],
        block_bs=[params[f"block{i}_b"] for i in range(config.num_blocks)],
        heads=params["heads"],
        sn_state=sn_final,
        training_loss=epoch_losses,
    )


def forward_batch(model: ResidualClassifier, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(penultimate, logits) for a batch of inputs, using stored weights."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.config.input_dim:
        raise ValueError(
            f"input has {X.shape[-1] if X.ndim else 0} features, "
            f"model expects {model.config.input_dim}"
        )
    H = X @ model.input_W.T + model.input_b
    for W, b in zip(model.block_Ws, model.block_bs):
        H = H + np.maximum(H @ W.T + b, 0.0)
    return H, H @ model.heads.T


def forward(model: ResidualClassifier, x) -> dict:
    """Single-sample forward pass: {"penultimate": ..., "logits": ...}."""
    x = as_vector(x)
    if x.shape[0] != model.config.input_dim:
        raise ValueError(
            f"input has dimension {x.shape}, model expects ({model.config.input_dim},)"
        )
    H, F = forward_batch(model, x[None, :])
    return {"penultimate": H[0], "logits": F[0]}


def hidden_trajectory(model: ResidualClassifier, X: np.ndarray) -> list:
    """Hidden states after the projection and after each residual block."""
    X = np.asarray(X, dtype=np.float64)
    H = X @ model.input_W.T + model.input_b
    states = [H]
    for W, b in zip(model.block_Ws, model.block_bs):
        H = H + np.maximum(H @ W.T + b, 0.0)
        states.append(H)
    return states


def input_gradient(model: ResidualClassifier, x, label_index: int) -> np.ndarray:
    """Gradient of logit ``label_index`` with respect to the input."""
    x = np.asarray(x, dtype=np.float64)
    if not (0 <= label_index < model.config.num_labels):
        raise ValueError(f"label_index {label_index} out of range")
    H = x @ model.input_W.T + model.input_b
    Zs, Hins = [], []
    for W, b in zip(model.block_Ws, model.block_bs):
        Z = H @ W.T + b
        Hins.append(H)
        Zs.append(Z)
        H = H + np.maximum(Z, 0.0)
    dH = model.heads[label_index].copy()
    for W, Z in zip(reversed(model.block_Ws), reversed(Zs)):
        dZ = dH * (Z > 0.0)
        dH = dH + dZ @ W
    return dH @ model.input_W


# ---------------------------------------------------------------------------
# Persistence: self-describing JSON with hexadecimal float encoding, so
# a save/load round-trip is bit-exact on every weight.
# ---------------------------------------------------------------------------


def _array_to_doc(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        return {"dim": a.shape[0], "hex": [float(x).hex() for x in a]}
    return {
        "rows": a.shape[0],
        "cols": a.shape[1],
        "hex": [float(x).hex() for x in a.ravel(order="C")],
    }


def _array_from_doc(doc: dict, what: str) -> np.ndarray:
    try:
        vals = np.asarray([float.fromhex(h) for h in doc["hex"]], dtype=np.float64)
        if "dim" in doc:
            if vals.size != doc["dim"]:
                raise ValueError("length mismatch")
            return vals
        return vals.reshape((doc["rows"], doc["cols"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"corrupt model file: bad array {what!r}: {exc}") from exc


def save_model(model: ResidualClassifier, path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "config": asdict(model.config),
        "input_W": _array_to_doc(model.input_W),
        "input_b": _array_to_doc(model.input_b),
        "blocks": [
            {"W": _array_to_doc(W), "b": _array_to_doc(b)}
            for W, b in zip(model.block_Ws, model.block_bs)
        ],
        "heads": _array_to_doc(model.heads),
        "sn_state": [
            {
                "layer": i,
                "u": _array_to_doc(s.u),
                "v": _array_to_doc(s.v),
                "sigma": float(s.sigma_estimate).hex(),
            }
            for i, s in enumerate(model.sn_state)
        ],
        "training_loss": [float(x).hex() for x in model.training_loss],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path) -> ResidualClassifier:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupt model file {path}: {exc}") from exc
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise ModelFormatError(f"corrupt model file {path}: not a model document")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(
            f"model file {path} has format version {version!r}; "
            f"this build reads version {FORMAT_VERSION}"
        )
    try:
        config = ModelConfig(**doc["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"corrupt model file {path}: bad config: {exc}") from exc
    try:
        blocks = doc["blocks"]
        sn_docs = doc["sn_state"]
        if len(blocks) != config.num_blocks or len(sn_docs) != config.sn_layers:
            raise ModelFormatError(
                f"corrupt model file {path}: block/sn_state counts disagree"
            )
        model = ResidualClassifier(
            config=config,
            input_W=_array_from_doc(doc["input_W"], "input_W"),
            input_b=_array_from_doc(doc["input_b"], "input_b"),
            block_Ws=[_array_from_doc(b["W"], f"block{i}_W") for i, b in enumerate(blocks)],
            block_bs=[_array_from_doc(b["b"], f"block{i}_b") for i, b in enumerate(blocks)],
            heads=_array_from_doc(doc["heads"], "heads"),
            sn_state=[
                PowerIterState(
                    u=_array_from_doc(s["u"], "sn u"),
                    v=_array_from_doc(s["v"], "sn v"),
                    sigma_estimate=float.fromhex(s["sigma"]),
                )
                for s in sn_docs
            ],
            training_loss=[float.fromhex(h) for h in doc.get("training_loss", [])],
        )
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"corrupt model file {path}: {exc!r}") from exc
    if model.input_W.shape != (config.hidden_dim, config.input_dim):
        raise ModelFormatError(f"corrupt model file {path}: input projection shape mismatch")
    if model.heads.shape != (config.num_labels, config.hidden_dim):
        raise ModelFormatError(f"corrupt model file {path}: heads shape mismatch")
    return model

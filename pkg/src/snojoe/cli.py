"""Command-line entry point.

Subcommands: gen-data, train, score, eval, ablate, benchmark. Reports
are JSON (schema in snojoe/schemas/report.schema.json, embedded resolved
config for provenance); scores and datasets are CSV. Commands that write
a report also render PNG figures next to it unless --no-figures is
given. Defaults can be supplied in a JSON config file (--config or the
SNOJOE_CONFIG environment variable) keyed by subcommand; explicit flags
win.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import snojoe
from snojoe import data as data_mod
from snojoe import pipeline, plots
from snojoe.data import SyntheticSpec
from snojoe.metrics import ScoreSet, evaluate
from snojoe.model import ModelConfig, load_model, save_model, train

CONFIG_ENV_VAR = "SNOJOE_CONFIG"


class UsageError(ValueError):
    """Bad flag combination or config; reported to stderr, exit 2."""


SPEC_FLAGS = {
    "num_labels": 10,
    "input_dim": 32,
    "samples": 2000,
    "label_prob": 0.3,
    "noise_sigma": 0.5,
    "prototype_scale": 2.0,
    "ood_mode": "shift",
    "shift_magnitude": 4.0,
    "ood_samples": 500,
}

MODEL_FLAGS = {
    "hidden_dim": 64,
    "num_blocks": 3,
    "sn_layers": 4,
    "learning_rate": 1e-4,
    "epochs": 10,
    "batch_size": 32,
}


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _add_spec_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--num-labels", type=int, dest="num_labels")
    p.add_argument("--input-dim", type=int, dest="input_dim")
    p.add_argument("--samples", type=int, dest="samples")
    p.add_argument("--label-prob", type=float, dest="label_prob")
    p.add_argument("--noise-sigma", type=float, dest="noise_sigma")
    p.add_argument("--prototype-scale", type=float, dest="prototype_scale")
    p.add_argument("--ood-mode", choices=data_mod.OOD_MODES, dest="ood_mode")
    p.add_argument("--shift-magnitude", type=float, dest="shift_magnitude")
    p.add_argument("--ood-samples", type=int, dest="ood_samples")


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hidden-dim", type=int, dest="hidden_dim")
    p.add_argument("--num-blocks", type=int, dest="num_blocks")
    p.add_argument("--sn-layers", type=int, dest="sn_layers")
    p.add_argument("--learning-rate", "--lr", type=float, dest="learning_rate")
    p.add_argument("--epochs", type=int, dest="epochs")
    p.add_argument("--batch-size", type=int, dest="batch_size")


def _resolve(args: argparse.Namespace, command: str, defaults: dict) -> dict:
    """defaults < config-file section < explicit CLI flags."""
    merged = dict(defaults)
    config_path = args.config or os.environ.get(CONFIG_ENV_VAR)
    if config_path:
        try:
            doc = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {config_path}: {exc}") from exc
        section = doc.get(command, {})
        if not isinstance(section, dict):
            raise UsageError(f"config section {command!r} must be an object")
        for key, val in section.items():
            if key not in merged:
                raise UsageError(f"unknown config key {command}.{key}")
            merged[key] = val
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return merged


def _report_header(kind: str, config: dict) -> dict:
    return {
        "schema_version": 1,
        "toolkit_version": snojoe.__version__,
        "kind": kind,
        "config": config,
    }


def _write_json(path, doc: dict) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _spec_from(cfg: dict, seed: int) -> SyntheticSpec:
    return SyntheticSpec(
        num_labels=cfg["num_labels"],
        input_dim=cfg["input_dim"],
        samples=cfg["samples"],
        label_prob=cfg["label_prob"],
        noise_sigma=cfg["noise_sigma"],
        prototype_scale=cfg["prototype_scale"],
        ood_mode=cfg["ood_mode"],
        shift_magnitude=cfg["shift_magnitude"],
        seed=seed,
    )


def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = _resolve(args, "gen-data", {**SPEC_FLAGS, "seed": 0})
    spec = _spec_from(cfg, cfg["seed"])
    out = Path(args.out_dir)
    ds_id = data_mod.generate_id(spec)
    ds_ood = data_mod.generate_ood(replace(spec, samples=cfg["ood_samples"]))

    written = []
    for split in ("train", "val", "test"):
        sub = ds_id.subset(split)
        f, l = out / f"{split}_features.csv", out / f"{split}_labels.csv"
        data_mod.save_features_csv(f, sub.features)
        data_mod.save_labels_csv(l, sub.labels)
        written += [f, l]
    f, l = out / "ood_features.csv", out / "ood_labels.csv"
    data_mod.save_features_csv(f, ds_ood.features)
    data_mod.save_labels_csv(l, ds_ood.labels)
    written += [f, l]
    for path in written:
        print(f"{path}  sha256={_sha256(path)}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve(args, "train", {**MODEL_FLAGS, "seed": 0})
    ds = data_mod.load_csv(args.features, args.labels)
    model_cfg = ModelConfig(
        input_dim=ds.input_dim,
        num_labels=ds.num_labels,
        hidden_dim=cfg["hidden_dim"],
        num_blocks=cfg["num_blocks"],
        sn_layers=cfg["sn_layers"],
        learning_rate=cfg["learning_rate"],
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        seed=cfg["seed"],
    )
    model = train(ds, model_cfg)
    save_model(model, args.out)
    loss_log = Path(args.loss_log) if args.loss_log else Path(args.out).with_suffix(".loss.csv")
    loss_log.parent.mkdir(parents=True, exist_ok=True)
    with loss_log.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,loss\n")
        for i, loss in enumerate(model.training_loss, start=1):
            fh.write(f"{i},{float(loss)!r}\n")
    print(f"{args.out}  final_loss={model.training_loss[-1]:.6f}  loss_log={loss_log}")
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    cfg = _resolve(
        args,
        "score",
        {
            "temperature": 1000.0,
            "epsilon": 0.0,
            "lof_k": 20,
            "iforest_trees": 100,
            "iforest_subsample": 256,
            "iforest_seed": 0,
            "ridge_lambda": 1e-6,
        },
    )
    if (args.features is None) == (args.logits is None):
        raise UsageError("pass exactly one of --features or --logits")

    if args.logits is not None:
        if args.method in pipeline.FEATURE_METHODS:
            raise UsageError(f"method {args.method!r} needs features and a model, not logits")
        if args.method == "odin" and cfg["epsilon"] > 0.0:
            raise UsageError("epsilon > 0 requires a differentiable scorer; score from --features with --model")
        logits = data_mod.load_logits_csv(args.logits)
        scores = pipeline.score_logit_rows(logits, args.method, cfg["temperature"])
    else:
        if args.model is None:
            raise UsageError("--features scoring requires --model")
        model = load_model(args.model)
        X = data_mod.load_csv(args.features).features
        fit_features = fit_labels = None
        if args.method in pipeline.FEATURE_METHODS:
            if args.fit_features is None:
                raise UsageError(f"method {args.method!r} requires --fit-features")
            fit_ds = data_mod.load_csv(args.fit_features, args.fit_labels)
            fit_features = fit_ds.features
            if args.method == "mahalanobis":
                if args.fit_labels is None:
                    raise UsageError("mahalanobis requires --fit-labels")
                fit_labels = fit_ds.labels
        scores = pipeline.score_with_model(
            model,
            X,
            args.method,
            fit_features=fit_features,
            fit_labels=fit_labels,
            temperature=cfg["temperature"],
            epsilon=cfg["epsilon"],
            lof_k=cfg["lof_k"],
            iforest_trees=cfg["iforest_trees"],
            iforest_subsample=cfg["iforest_subsample"],
            iforest_seed=cfg["iforest_seed"],
            ridge_lambda=cfg["ridge_lambda"],
        )
    data_mod.save_scores_csv(args.out, scores)
    print(f"{args.out}  rows={scores.size}  method={args.method}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _resolve(args, "eval", {"tpr": 0.95})
    ids = data_mod.load_scores_csv(args.id_scores)
    oods = data_mod.load_scores_csv(args.ood_scores)
    scores = ScoreSet(ids, oods, method_name=args.method_name or "")
    report = evaluate(scores, tpr=cfg["tpr"], include_aupr_out=args.aupr_out)
    doc = _report_header(
        "detection_report",
        {
            "id_scores": str(args.id_scores),
            "ood_scores": str(args.ood_scores),
            "tpr": cfg["tpr"],
        },
    )
    doc.update(report.to_dict())
    _write_json(args.out, doc)
    print(f"{args.out}  fpr95={report.fpr95:.4f} auroc={report.auroc:.4f} aupr={report.aupr:.4f}")
    if not args.no_figures:
        for p in plots.render_detection_figures(scores, Path(args.out).with_suffix("")):
            print(p)
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _resolve(
        args, "ablate", {**SPEC_FLAGS, **MODEL_FLAGS, "master_seed": 0, "tpr": 0.95}
    )
    try:
        layers = sorted({int(tok) for tok in args.layers.split(",") if tok.strip() != ""})
    except ValueError:
        raise UsageError(f"cannot parse --layers {args.layers!r}; expected e.g. 0,1,2,3") from None
    if not layers:
        raise UsageError("--layers is empty")

    spec = _spec_from(cfg, 0)
    base = ModelConfig(
        input_dim=cfg["input_dim"],
        num_labels=cfg["num_labels"],
        hidden_dim=cfg["hidden_dim"],
        num_blocks=cfg["num_blocks"],
        sn_layers=0,
        learning_rate=cfg["learning_rate"],
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        seed=0,
    )
    rows = pipeline.ablation_sweep(
        spec, base, layers, cfg["master_seed"], tpr=cfg["tpr"], ood_samples=cfg["ood_samples"]
    )
    doc = _report_header("ablation_report", cfg)
    doc["seed"] = cfg["master_seed"]
    doc["rows"] = rows
    _write_json(args.out, doc)
    for r in rows:
        print(
            f"sn_layers={r['sn_layers']}  fpr95={r['fpr95']:.4f}  "
            f"auroc={r['auroc']:.4f}  aupr={r['aupr']:.4f}"
        )
    print(args.out)
    if not args.no_figures:
        print(plots.render_ablation_figure(rows, Path(args.out).with_suffix("")))
    return 0


def cmd_benchmark(args: argparse.Namespace) -> int:
    cfg = _resolve(args, "benchmark", {"master_seed": 0, "tpr": 0.95})
    result = pipeline.benchmark(cfg["master_seed"], tpr=cfg["tpr"])
    doc = _report_header("benchmark_report", result["config"])
    doc["seed"] = result["seed"]
    doc["reports"] = result["reports"]
    doc["deployment_tau"] = result["deployment_tau"]
    _write_json(args.out, doc)
    for r in result["reports"]:
        print(
            f"{r['method']:12s} fpr95={r['fpr95']:.4f}  "
            f"auroc={r['auroc']:.4f}  aupr={r['aupr']:.4f}"
        )
    print(args.out)
    if not args.no_figures:
        print(plots.render_method_comparison(result["reports"], Path(args.out).with_suffix("")))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="snojoe",
        description="Spectral-normalized joint-energy OOD detection over CSV datasets.",
    )
    parser.add_argument("--config", help=f"JSON config file (or set ${CONFIG_ENV_VAR})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate seeded synthetic ID/OOD CSVs")
    _add_spec_args(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train the residual classifier on CSVs")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True, help="model file path")
    p.add_argument("--loss-log", help="per-epoch loss CSV (default: <out>.loss.csv)")
    _add_model_args(p)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("score", help="score samples with one method")
    p.add_argument("--model", help="model file (required with --features)")
    p.add_argument("--features", help="features CSV to score")
    p.add_argument("--logits", help="precomputed logits CSV to score")
    p.add_argument("--method", required=True, choices=pipeline.ALL_METHODS)
    p.add_argument("--fit-features", help="training features CSV for fitted methods")
    p.add_argument("--fit-labels", help="training labels CSV (mahalanobis)")
    p.add_argument("--temperature", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--lof-k", type=int, dest="lof_k")
    p.add_argument("--iforest-trees", type=int, dest="iforest_trees")
    p.add_argument("--iforest-subsample", type=int, dest="iforest_subsample")
    p.add_argument("--iforest-seed", type=int, dest="iforest_seed")
    p.add_argument("--ridge-lambda", type=float, dest="ridge_lambda")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("eval", help="FPR95/AUROC/AUPR report from score CSVs")
    p.add_argument("--id-scores", required=True)
    p.add_argument("--ood-scores", required=True)
    p.add_argument("--method-name")
    p.add_argument("--tpr", type=float)
    p.add_argument("--aupr-out", action="store_true", help="also report AUPR with OOD positive")
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="sweep the number of normalized layers")
    _add_spec_args(p)
    _add_model_args(p)
    p.add_argument("--layers", required=True, help="comma-separated counts, e.g. 0,1,2,3")
    p.add_argument("--master-seed", type=int, dest="master_seed")
    p.add_argument("--tpr", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("benchmark", help="run the documented default pipeline, all methods")
    p.add_argument("--master-seed", type=int, dest="master_seed")
    p.add_argument("--tpr", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SystemExit:
        raise
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

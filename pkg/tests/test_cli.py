import json
import sys

import numpy as np
import pytest

from snojoe.cli import main
from snojoe.data import load_scores_csv


@pytest.fixture()
def workspace(tmp_path):
    """Generated data + a small trained model, shared CLI fixtures."""
    data_dir = tmp_path / "data"
    assert (
        main(
            [
                "gen-data", "--out-dir", str(data_dir), "--samples", "300",
                "--num-labels", "4", "--input-dim", "8", "--seed", "11",
                "--ood-samples", "80",
            ]
        )
        == 0
    )
    model = tmp_path / "model.json"
    assert (
        main(
            [
                "train", "--features", str(data_dir / "train_features.csv"),
                "--labels", str(data_dir / "train_labels.csv"),
                "--out", str(model), "--hidden-dim", "16", "--num-blocks", "2",
                "--sn-layers", "3", "--epochs", "12", "--learning-rate", "1e-2",
                "--batch-size", "210", "--seed", "3",
            ]
        )
        == 0
    )
    return {"data": data_dir, "model": model, "tmp": tmp_path}


class TestGenData:
    def test_same_flags_same_checksums(self, tmp_path, capsys):
        argv = [
            "gen-data", "--out-dir", str(tmp_path / "a"), "--samples", "100",
            "--num-labels", "3", "--input-dim", "5", "--seed", "2",
        ]
        main(argv)
        first = capsys.readouterr().out.replace(str(tmp_path / "a"), "@")
        argv[2] = str(tmp_path / "b")
        main(argv)
        second = capsys.readouterr().out.replace(str(tmp_path / "b"), "@")
        assert first == second

    def test_invalid_label_prob_is_usage_error(self, tmp_path, capsys):
        code = main(
            ["gen-data", "--out-dir", str(tmp_path), "--label-prob", "1.5"]
        )
        assert code != 0
        assert "label_prob" in capsys.readouterr().err

    def test_split_sizes(self, tmp_path):
        main(["gen-data", "--out-dir", str(tmp_path / "d"), "--samples", "200",
              "--num-labels", "3", "--input-dim", "4", "--seed", "1"])
        from snojoe.data import load_csv

        train = load_csv(tmp_path / "d" / "train_features.csv")
        val = load_csv(tmp_path / "d" / "val_features.csv")
        test = load_csv(tmp_path / "d" / "test_features.csv")
        assert (len(train), len(val), len(test)) == (140, 20, 40)


class TestTrain:
    def test_loss_log_nonincreasing_after_warmup(self, workspace):
        log = workspace["model"].with_suffix(".loss.csv")
        rows = log.read_text().strip().splitlines()[1:]
        losses = [float(r.split(",")[1]) for r in rows]
        assert len(losses) == 12
        tail = losses[4:]
        assert all(a >= b for a, b in zip(tail, tail[1:]))

    def test_sn_layer_count_changes_model(self, workspace, tmp_path):
        out0 = tmp_path / "m0.json"
        args = [
            "train", "--features", str(workspace["data"] / "train_features.csv"),
            "--labels", str(workspace["data"] / "train_labels.csv"),
            "--out", str(out0), "--hidden-dim", "16", "--num-blocks", "2",
            "--epochs", "2", "--seed", "3",
        ]
        assert main(args + ["--sn-layers", "0"]) == 0
        body0 = out0.read_bytes()
        assert main(args + ["--sn-layers", "3"]) == 0
        assert out0.read_bytes() != body0

    def test_missing_data_file_errors_with_path(self, tmp_path, capsys):
        code = main(
            ["train", "--features", str(tmp_path / "nope.csv"), "--labels",
             str(tmp_path / "l.csv"), "--out", str(tmp_path / "m.json")]
        )
        assert code != 0
        assert "nope.csv" in capsys.readouterr().err


class TestScore:
    def test_snojoe_scores_positive_and_row_counted(self, workspace, tmp_path):
        out = tmp_path / "s.csv"
        assert (
            main(
                ["score", "--model", str(workspace["model"]), "--features",
                 str(workspace["data"] / "train_features.csv"), "--method",
                 "snojoe", "--out", str(out)]
            )
            == 0
        )
        scores = load_scores_csv(out)
        assert scores.size == 210
        assert np.all(scores > 0)

    def test_msp_scores_in_unit_interval(self, workspace, tmp_path):
        out = tmp_path / "s.csv"
        main(["score", "--model", str(workspace["model"]), "--features",
              str(workspace["data"] / "test_features.csv"), "--method", "msp",
              "--out", str(out)])
        scores = load_scores_csv(out)
        assert np.all((scores > 0) & (scores < 1))

    def test_logits_input_path(self, tmp_path):
        logits = tmp_path / "logits.csv"
        logits.write_text("1.0,2.0\n-1.0,0.5\n")
        out = tmp_path / "s.csv"
        assert main(["score", "--logits", str(logits), "--method", "maxlogit",
                     "--out", str(out)]) == 0
        assert np.array_equal(load_scores_csv(out), [2.0, 0.5])

    def test_fitted_method_requires_fit_data(self, workspace, tmp_path, capsys):
        code = main(
            ["score", "--model", str(workspace["model"]), "--features",
             str(workspace["data"] / "test_features.csv"), "--method", "lof",
             "--out", str(tmp_path / "s.csv")]
        )
        assert code != 0
        assert "--fit-features" in capsys.readouterr().err

    def test_mahalanobis_requires_labels(self, workspace, tmp_path, capsys):
        code = main(
            ["score", "--model", str(workspace["model"]), "--features",
             str(workspace["data"] / "test_features.csv"), "--method",
             "mahalanobis", "--fit-features",
             str(workspace["data"] / "train_features.csv"),
             "--out", str(tmp_path / "s.csv")]
        )
        assert code != 0
        assert "fit-labels" in capsys.readouterr().err

    def test_feature_methods_run(self, workspace, tmp_path):
        for method in ("mahalanobis", "lof", "iforest"):
            out = tmp_path / f"{method}.csv"
            assert (
                main(
                    ["score", "--model", str(workspace["model"]), "--features",
                     str(workspace["data"] / "test_features.csv"), "--method",
                     method, "--fit-features",
                     str(workspace["data"] / "train_features.csv"),
                     "--fit-labels", str(workspace["data"] / "train_labels.csv"),
                     "--out", str(out)]
                )
                == 0
            )
            assert load_scores_csv(out).size == 60

    def test_odin_epsilon_from_logits_rejected(self, tmp_path, capsys):
        logits = tmp_path / "logits.csv"
        logits.write_text("1.0,2.0\n")
        code = main(["score", "--logits", str(logits), "--method", "odin",
                     "--epsilon", "0.1", "--out", str(tmp_path / "s.csv")])
        assert code != 0
        assert "differentiable" in capsys.readouterr().err


class TestEval:
    def _scores(self, tmp_path, ids, oods):
        from snojoe.data import save_scores_csv

        pi, po = tmp_path / "id.csv", tmp_path / "ood.csv"
        save_scores_csv(pi, np.asarray(ids, dtype=float))
        save_scores_csv(po, np.asarray(oods, dtype=float))
        return pi, po

    def test_perfect_separation_report(self, tmp_path):
        pi, po = self._scores(tmp_path, np.arange(100.0) + 10, np.arange(50.0) - 100)
        out = tmp_path / "report.json"
        assert main(["eval", "--id-scores", str(pi), "--ood-scores", str(po),
                     "--out", str(out), "--no-figures"]) == 0
        doc = json.loads(out.read_text())
        assert (doc["fpr95"], doc["auroc"], doc["aupr"]) == (0.0, 1.0, 1.0)
        assert doc["schema_version"] == 1
        assert doc["kind"] == "detection_report"
        assert "config" in doc

    def test_matches_oracle(self, tmp_path):
        rng = np.random.default_rng(5)
        ids = np.round(rng.standard_normal(120), 1)
        oods = np.round(rng.standard_normal(90) - 0.4, 1)
        pi, po = self._scores(tmp_path, ids, oods)
        out = tmp_path / "report.json"
        main(["eval", "--id-scores", str(pi), "--ood-scores", str(po), "--out",
              str(out), "--no-figures"])
        doc = json.loads(out.read_text())

        from snojoe.metrics import ScoreSet, oracle_metrics

        oracle = oracle_metrics(ScoreSet(ids, oods))
        assert doc["fpr95"] == oracle.fpr95
        assert doc["auroc"] == oracle.auroc
        assert doc["aupr"] == oracle.aupr

    def test_figures_rendered_alongside_report(self, tmp_path):
        pi, po = self._scores(tmp_path, [1.0, 2.0, 3.0], [0.0, 0.5])
        out = tmp_path / "r.json"
        assert main(["eval", "--id-scores", str(pi), "--ood-scores", str(po),
                     "--out", str(out)]) == 0
        for suffix in ("_roc.png", "_pr.png", "_hist.png"):
            assert (tmp_path / f"r{suffix}").exists()

    def test_error_paths_emit_no_json(self, tmp_path, capsys):
        out = tmp_path / "r.json"
        code = main(["eval", "--id-scores", str(tmp_path / "missing.csv"),
                     "--ood-scores", str(tmp_path / "missing.csv"), "--out",
                     str(out)])
        assert code != 0
        assert not out.exists()
        assert capsys.readouterr().err != ""

    def test_aupr_out_flag(self, tmp_path):
        pi, po = self._scores(tmp_path, [3.0, 1.0], [2.0])
        out = tmp_path / "r.json"
        main(["eval", "--id-scores", str(pi), "--ood-scores", str(po), "--out",
              str(out), "--aupr-out", "--no-figures"])
        doc = json.loads(out.read_text())
        assert doc["aupr_out"] == pytest.approx(0.5)

    def test_report_validates_against_schema(self, tmp_path):
        import importlib.resources

        import jsonschema

        pi, po = self._scores(tmp_path, [1.0, 2.0, 3.0], [0.0])
        out = tmp_path / "r.json"
        main(["eval", "--id-scores", str(pi), "--ood-scores", str(po), "--out",
              str(out), "--no-figures"])
        schema = json.loads(
            importlib.resources.files("snojoe.schemas")
            .joinpath("report.schema.json")
            .read_text()
        )
        jsonschema.validate(json.loads(out.read_text()), schema)


class TestConfigFile:
    def test_config_file_supplies_defaults_and_flags_win(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"gen-data": {"samples": 60, "num_labels": 3,
                                                "input_dim": 4, "seed": 8}}))
        out_a = tmp_path / "a"
        assert main(["--config", str(cfg), "gen-data", "--out-dir", str(out_a)]) == 0
        from snojoe.data import load_csv

        assert len(load_csv(out_a / "train_features.csv")) == 42  # 70% of 60

        out_b = tmp_path / "b"
        assert main(["--config", str(cfg), "gen-data", "--out-dir", str(out_b),
                     "--samples", "100"]) == 0
        assert len(load_csv(out_b / "train_features.csv")) == 70

    def test_env_var_config(self, tmp_path, monkeypatch):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"gen-data": {"samples": 40, "num_labels": 2,
                                                "input_dim": 3, "seed": 8}}))
        monkeypatch.setenv("SNOJOE_CONFIG", str(cfg))
        out = tmp_path / "envd"
        assert main(["gen-data", "--out-dir", str(out)]) == 0
        from snojoe.data import load_csv

        assert len(load_csv(out / "train_features.csv")) == 28

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"gen-data": {"bogus": 1}}))
        code = main(["--config", str(cfg), "gen-data", "--out-dir", str(tmp_path / "x")])
        assert code != 0
        assert "unknown config key" in capsys.readouterr().err


class TestAblate:
    def test_four_rows_and_schema(self, tmp_path):
        out = tmp_path / "ablation.json"
        assert (
            main(
                ["ablate", "--layers", "0,1,2,3", "--master-seed", "77",
                 "--samples", "200", "--num-labels", "3", "--input-dim", "6",
                 "--hidden-dim", "8", "--num-blocks", "2", "--epochs", "3",
                 "--ood-samples", "60", "--out", str(out), "--no-figures"]
            )
            == 0
        )
        doc = json.loads(out.read_text())
        assert doc["kind"] == "ablation_report"
        assert [r["sn_layers"] for r in doc["rows"]] == [0, 1, 2, 3]

        import importlib.resources

        import jsonschema

        schema = json.loads(
            importlib.resources.files("snojoe.schemas")
            .joinpath("report.schema.json")
            .read_text()
        )
        jsonschema.validate(doc, schema)

    def test_figures_rendered(self, tmp_path):
        out = tmp_path / "ablation.json"
        main(["ablate", "--layers", "0,1", "--master-seed", "7", "--samples",
              "150", "--num-labels", "3", "--input-dim", "5", "--hidden-dim",
              "8", "--num-blocks", "1", "--epochs", "2", "--ood-samples", "50",
              "--out", str(out)])
        assert (tmp_path / "ablation_ablation.png").exists()

    def test_bad_layers_list(self, tmp_path, capsys):
        code = main(["ablate", "--layers", "a,b", "--out", str(tmp_path / "x.json")])
        assert code != 0
        assert "--layers" in capsys.readouterr().err


class TestEndToEndDeterminism:
    def test_full_chain_reproduces_bytes(self, tmp_path):
        reports = []
        for run_dir in (tmp_path / "run1", tmp_path / "run2"):
            d = run_dir / "data"
            main(["gen-data", "--out-dir", str(d), "--samples", "200",
                  "--num-labels", "3", "--input-dim", "6", "--seed", "5",
                  "--ood-samples", "60"])
            model = run_dir / "m.json"
            main(["train", "--features", str(d / "train_features.csv"),
                  "--labels", str(d / "train_labels.csv"), "--out", str(model),
                  "--hidden-dim", "8", "--num-blocks", "2", "--sn-layers", "2",
                  "--epochs", "4", "--seed", "9"])
            si, so = run_dir / "id.csv", run_dir / "ood.csv"
            main(["score", "--model", str(model), "--features",
                  str(d / "test_features.csv"), "--method", "snojoe",
                  "--out", str(si)])
            main(["score", "--model", str(model), "--features",
                  str(d / "ood_features.csv"), "--method", "snojoe",
                  "--out", str(so)])
            report = run_dir / "report.json"
            main(["eval", "--id-scores", str(si), "--ood-scores", str(so),
                  "--method-name", "snojoe", "--out", str(report), "--no-figures"])
            body = report.read_bytes().replace(str(run_dir).encode(), b"@")
            reports.append(body)
        assert reports[0] == reports[1]


class TestEntryPoint:
    def test_module_invocation(self, tmp_path):
        import subprocess

        proc = subprocess.run(
            [sys.executable, "-m", "snojoe", "--help"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "gen-data" in proc.stdout

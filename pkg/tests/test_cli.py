from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from latentseq.cli.config import ConfigError, ExperimentConfig, config_from_dict, load_config
from latentseq.cli.main import cli
from latentseq.estimators import read_bench_csv
from latentseq.estimators.bench import CSV_COLUMNS
from latentseq.segmodel import COPY_SLOTS, read_jsonl

TINY_SEGMODEL = {
    "task": "segmodel",
    "seed": 3,
    "model": {"emb_dim": 8, "hidden": 8, "max_len": 6},
    "optimizer": {"epochs": 1, "batch_size": 10, "lr": 0.01},
    "data": {"n_train": 20, "n_eval": 5},
    "eval": {"beam": 1},
}


def invoke(args: list[str]):
    return CliRunner().invoke(cli, args, catch_exceptions=False)


def write_config(path: Path, cfg: dict) -> str:
    path.write_text(json.dumps(cfg))
    return str(path)


def error_payload(result) -> dict:
    payload = json.loads(result.stderr.strip().splitlines()[-1])
    assert set(payload) == {"error", "message"}
    return payload


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("segmodel")
    cfg = write_config(root / "cfg.json", TINY_SEGMODEL)
    result = invoke(["train", "--config", cfg, "--out", str(root / "run")])
    assert result.exit_code == 0, result.stderr
    return root, cfg


class TestSynthData:
    def test_byte_identical_reruns(self, tmp_path):
        for name in ("a", "b"):
            result = invoke(["synth-data", "--seed", "4", "--n", "30", "--out", str(tmp_path / name)])
            assert result.exit_code == 0
        assert (tmp_path / "a/synth.jsonl").read_bytes() == (tmp_path / "b/synth.jsonl").read_bytes()

    def test_schema(self, tmp_path):
        invoke(["synth-data", "--seed", "5", "--n", "80", "--out", str(tmp_path), "--json"])
        for row in read_jsonl(tmp_path / "synth.jsonl"):
            assert set(row) == {"records", "text", "gold_segments"}
            K = len(row["records"])
            assert 3 <= K <= 8
            for start, end, record in row["gold_segments"]:
                assert 0 <= record < K + 1
                assert 1 <= end - start <= 6
                if record and row["records"][record - 1][0] in COPY_SLOTS:
                    value = row["records"][record - 1][1].split()
                    seg = row["text"][start:end]
                    assert any(seg[i : i + len(value)] == value for i in range(len(seg) - len(value) + 1))

    def test_json_summary(self, tmp_path):
        result = invoke(["synth-data", "--seed", "1", "--n", "3", "--out", str(tmp_path), "--json"])
        summary = json.loads(result.stdout)
        assert summary["n"] == 3

    def test_bad_arguments(self, tmp_path):
        assert invoke(["synth-data", "--n", "3", "--out", str(tmp_path)]).exit_code == 2
        assert invoke(["synth-data", "--seed", "1", "--n", "0", "--out", str(tmp_path)]).exit_code == 2
        result = invoke(["synth-data", "--seed", "1", "--connector-rate", "2", "--out", str(tmp_path)])
        assert result.exit_code == 2
        assert error_payload(result)["error"] == "config"


class TestConfig:
    def test_defaults_and_yaml(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump({"task": "vrs", "seed": 2, "vrs": {"lam": 0.5}}))
        cfg = load_config(path)
        assert isinstance(cfg, ExperimentConfig)
        assert cfg.vrs.lam == 0.5 and cfg.regularizer.gamma == 1.0 and cfg.regularizer.eta_offset == 0.0

    @pytest.mark.parametrize(
        "raw",
        [
            {"task": "segmodel"},
            {"seed": 1},
            {"task": "nope", "seed": 1},
            {"task": "segmodel", "seed": -1},
            {"task": "segmodel", "seed": 1, "extra": 3},
            {"task": "segmodel", "seed": 1, "model": {"hidden": "big"}},
            {"task": "segmodel", "seed": 1, "model": {"depth": 2}},
            {"task": "segmodel", "seed": 1, "regularizer": {"enabled": 1}},
            {"task": "segmodel", "seed": 1, "data": {"train_path": "missing.jsonl"}},
            {"task": "segmodel", "seed": 1, "checkpoint": "missing"},
            {"task": "segmodel", "seed": True},
        ],
    )
    def test_rejected(self, raw, tmp_path):
        with pytest.raises(ConfigError):
            config_from_dict(raw, tmp_path)
        result = invoke(["train", "--config", write_config(tmp_path / "c.json", raw), "--out", str(tmp_path)])
        assert result.exit_code == 2
        assert error_payload(result)["error"] == "config"

    def test_int_promotes_to_float(self, tmp_path):
        cfg = config_from_dict({"task": "segmodel", "seed": 1, "optimizer": {"lr": 1}}, tmp_path)
        assert cfg.optimizer.lr == 1.0 and isinstance(cfg.optimizer.lr, float)

    def test_unreadable_and_malformed(self, tmp_path):
        assert invoke(["train", "--config", str(tmp_path / "none.json")]).exit_code == 2
        bad = tmp_path / "bad.yaml"
        bad.write_text("task: [unclosed")
        assert invoke(["train", "--config", str(bad)]).exit_code == 2

    def test_relative_paths_resolve_against_config(self, tmp_path):
        (tmp_path / "d.jsonl").write_text("")
        cfg = config_from_dict({"task": "segmodel", "seed": 0, "data": {"train_path": "d.jsonl"}}, tmp_path)
        assert cfg.data.train_path == str(tmp_path / "d.jsonl")


class TestSegmodelCommands:
    def test_train_artifacts(self, trained):
        root, _ = trained
        run = root / "run"
        for name in ("metrics.jsonl", "model.bin", "model.json", "eval.json", "manifest.json"):
            assert (run / name).exists()
        metrics = [json.loads(line) for line in (run / "metrics.jsonl").read_text().splitlines()]
        assert [m["epoch"] for m in metrics] == [1]
        report = json.loads((run / "eval.json").read_text())
        assert report["coverage"] == 1.0 and report["repetitions"] == 0
        for key in ("exact_match", "faithfulness", "mean_expected_segments_gap", "segmentation_f1"):
            assert isinstance(report[key], float)
        manifest = json.loads((run / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 3 and manifest["config"]["task"] == "segmodel"
        assert manifest["version"].startswith("0.1.0")

    def test_rerun_is_byte_identical(self, trained, tmp_path):
        root, cfg = trained
        invoke(["train", "--config", cfg, "--out", str(tmp_path)])
        for name in ("metrics.jsonl", "model.bin", "model.json", "eval.json", "manifest.json"):
            assert (tmp_path / name).read_bytes() == (root / "run" / name).read_bytes()

    def test_seed_override_changes_run(self, trained, tmp_path):
        root, cfg = trained
        invoke(["train", "--config", cfg, "--seed", "4", "--out", str(tmp_path)])
        assert (tmp_path / "model.bin").read_bytes() != (root / "run" / "model.bin").read_bytes()

    def test_eval(self, trained, tmp_path):
        root, cfg = trained
        result = invoke(["eval", "--config", cfg, "--checkpoint", str(root / "run" / "model"), "--out", str(tmp_path), "--json"])
        assert result.exit_code == 0
        assert json.loads(result.stdout) == json.loads((root / "run" / "eval.json").read_text())

    def test_eval_without_checkpoint(self, trained, tmp_path):
        _, cfg = trained
        assert invoke(["eval", "--config", cfg, "--out", str(tmp_path)]).exit_code == 2
        assert invoke(["eval", "--seed", "1", "--checkpoint", str(tmp_path / "x"), "--out", str(tmp_path)]).exit_code == 2

    def test_corrupt_checkpoint_is_task_error(self, trained, tmp_path):
        root, cfg = trained
        stem = tmp_path / "model"
        (tmp_path / "model.json").write_bytes((root / "run" / "model.json").read_bytes())
        (tmp_path / "model.bin").write_bytes((root / "run" / "model.bin").read_bytes()[:-16])
        result = invoke(["eval", "--config", cfg, "--checkpoint", str(stem), "--out", str(tmp_path)])
        assert result.exit_code == 1
        assert error_payload(result)["error"] == "CheckpointError"

    def test_align(self, trained, tmp_path):
        root, _ = trained
        invoke(["synth-data", "--seed", "9", "--n", "4", "--out", str(tmp_path)])
        result = invoke(["align", "--checkpoint", str(root / "run" / "model"), "--input", str(tmp_path / "synth.jsonl"), "--json"])
        assert result.exit_code == 0
        report = json.loads(result.stdout)
        rows = read_jsonl(tmp_path / "synth.jsonl")
        assert len(report["inputs"]) == 4
        for trace, row in zip(report["inputs"], rows):
            labels = [seg["record"] for seg in trace["segments"] if seg["record"]]
            assert sorted(labels) == list(range(1, len(row["records"]) + 1))
            for seg in trace["segments"]:
                for tok in seg["rows"]:
                    assert abs(tok["generation"] + sum(tok["positions"]) - 1.0) <= 1e-6
        assert 0.0 <= report["segmentation_f1"] <= 1.0
        text = invoke(["align", "--checkpoint", str(root / "run" / "model"), "--input", str(tmp_path / "synth.jsonl")])
        assert "record" in text.stdout and "segment-boundary F1" in text.stdout

    def test_align_missing_checkpoint(self, tmp_path):
        (tmp_path / "in.jsonl").write_text(json.dumps({"records": [["name", "zizzi"]]}) + "\n")
        result = invoke(["align", "--checkpoint", str(tmp_path / "nope"), "--input", str(tmp_path / "in.jsonl")])
        assert result.exit_code == 2


class TestOtherTasks:
    def test_bench_csv(self, tmp_path):
        cfg = write_config(tmp_path / "b.json", {"task": "estimator-bench", "seed": 0, "bench": {"n_trials": 2, "n_samples": 200}})
        result = invoke(["bench", "--config", cfg, "--out", str(tmp_path / "a")])
        assert result.exit_code == 0
        header = (tmp_path / "a/bench.csv").read_text().splitlines()[0]
        assert tuple(header.split(",")) == CSV_COLUMNS == ("estimator", "bias", "mean_var", "n_samples", "wall_time_s")
        rows = read_bench_csv(tmp_path / "a/bench.csv")
        assert {r["estimator"].split("/")[0] for r in rows} == {"cat3", "cat5", "gauss"}
        # the column pools draws over trials
        assert all(r["n_samples"] == 2 * 200 for r in rows)
        invoke(["bench", "--config", cfg, "--out", str(tmp_path / "b")])
        assert (tmp_path / "a/bench.csv").read_bytes() == (tmp_path / "b/bench.csv").read_bytes()

    def test_bench_unknown_toy_is_task_error(self, tmp_path):
        cfg = write_config(tmp_path / "b.json", {"task": "estimator-bench", "seed": 0, "bench": {"toys": ["cat9"]}})
        result = invoke(["bench", "--config", cfg, "--out", str(tmp_path)])
        assert result.exit_code == 1
        assert error_payload(result)["error"] == "ValueError"

    def test_lattice_check(self, tmp_path):
        cfg = write_config(tmp_path / "l.json", {"task": "lattice-check", "seed": 1, "lattice": {"n_segmental": 20, "n_hmm": 20}})
        result = invoke(["lattice-check", "--config", cfg, "--out", str(tmp_path), "--json"])
        assert result.exit_code == 0
        deviations = json.loads(result.stdout)
        assert deviations == json.loads((tmp_path / "lattice_check.json").read_text())
        assert all(np.isfinite(v) and v <= 1e-8 for v in deviations.values())

    def test_train_vrs(self, tmp_path):
        raw = {
            "task": "vrs", "seed": 0, "model": {"emb_dim": 8, "hidden": 8},
            "optimizer": {"epochs": 1, "batch_size": 10}, "data": {"n_train": 10}, "vrs": {"selector_dim": 4},
        }
        cfg = write_config(tmp_path / "v.json", raw)
        for name in ("a", "b"):
            assert invoke(["train", "--config", cfg, "--out", str(tmp_path / name)]).exit_code == 0
        assert (tmp_path / "a/metrics.jsonl").read_bytes() == (tmp_path / "b/metrics.jsonl").read_bytes()
        lines = (tmp_path / "a/metrics.jsonl").read_text().splitlines()
        assert [json.loads(line)["pretrain"] for line in lines] == [True, False]

    def test_train_backtranslation(self, tmp_path):
        raw = {"task": "backtranslation", "seed": 0, "backtranslation": {"init_steps": 3, "iters": 1, "phase_epochs": 1}}
        cfg = write_config(tmp_path / "bt.json", raw)
        assert invoke(["train", "--config", cfg, "--out", str(tmp_path)]).exit_code == 0
        records = [json.loads(line) for line in (tmp_path / "metrics.jsonl").read_text().splitlines()]
        assert [r["iter"] for r in records] == [0, 1]
        assert all(set(r) == {"iter", "fwd_ce", "bwd_ce", "exact_match"} for r in records)

    def test_version(self):
        result = invoke(["--version"])
        assert result.exit_code == 0 and result.stdout.startswith("0.1.0")

    def test_threads_flag_validated(self, tmp_path):
        result = CliRunner().invoke(cli, ["lattice-check", "--seed", "0", "--threads", "0", "--out", str(tmp_path)])
        assert result.exit_code == 2

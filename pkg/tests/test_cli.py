"""Tests for the dfdesk command line."""

import json

import pytest
import yaml

from schemas.results import PredictionRecord
from scripts.cli_desk import cmd_dispatch
from scripts.ensemble import write_predictions
from scripts.paths import run_paths
from tests.conftest import tiny_config_data

BACKBONES = ["local-cnn", "multiscale-cnn", "global-mlp"]
STEPS = ["synth", "augment-offline", "partition", "train", "eval", "ensemble", "report"]


def output(capsys) -> dict:
    return json.loads(capsys.readouterr().out)


@pytest.fixture(scope="module")
def tiny_runs(tmp_path_factory):
    """The full tiny recipe run twice through the CLI into two out dirs."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "tiny.yaml"
    config.write_text(yaml.safe_dump(tiny_config_data(root / "unused")))
    out_dirs = [root / "run-a", root / "run-b"]
    for out_dir in out_dirs:
        for step in STEPS:
            code = cmd_dispatch([step, "--config", str(config), "--out", str(out_dir), "--quiet"])
            assert code == 0, f"{step} failed"
    return config, [run_paths(d) for d in out_dirs]


class TestErrors:
    """Exit codes and JSON error output."""

    def test_unknown_config_key(self, tmp_path, capsys):
        """A misspelled key exits 2 and names its dotted path."""
        config = tmp_path / "bad.yaml"
        config.write_text("stage1:\n  stage: backbone\n  batchsize: 8\n")
        assert cmd_dispatch(["synth", "--config", str(config), "--out", str(tmp_path / "run")]) == 2
        result = output(capsys)
        assert result["error"] == "invalid_config"
        assert "stage1.batchsize" in result["message"]
        assert not (tmp_path / "run").exists()

    def test_unreadable_config(self, tmp_path, capsys):
        """A missing config file is an invalid config."""
        assert cmd_dispatch(["synth", "--config", str(tmp_path / "missing.yaml")]) == 2
        assert output(capsys)["error"] == "invalid_config"

    def test_unknown_subcommand(self):
        """argparse rejections map to exit code 2."""
        assert cmd_dispatch(["frobnicate"]) == 2

    def test_threads_only_where_output_is_thread_independent(self, tmp_path, capsys):
        """train refuses --threads > 1."""
        assert cmd_dispatch(["train", "--out", str(tmp_path / "run"), "--threads", "2"]) == 2
        assert "--threads" in output(capsys)["message"]

    def test_unknown_backbone(self, tmp_path, capsys):
        """--backbone must name a configured preset."""
        assert cmd_dispatch(["train", "--out", str(tmp_path / "run"), "--backbone", "resnet"]) == 2
        assert "resnet" in output(capsys)["message"]

    def test_missing_upstream_artifacts(self, tmp_path, capsys):
        """A step whose inputs were never produced fails with exit 1."""
        assert cmd_dispatch(["eval", "--out", str(tmp_path / "run")]) == 1
        result = output(capsys)
        assert result["error"] == "eval_failed"
        assert "synth" in result["message"]


class TestEnsembleCommand:
    """ensemble on explicit prediction files."""

    def test_three_files(self, tmp_path, capsys):
        """Explicit prediction files are voted and scored on the rendered value."""
        members = [[0.9, 0.2, 0.6], [0.8, 0.1, 0.3], [0.4, 0.7, 0.7]]
        files = []
        for k, probs in enumerate(members):
            path = tmp_path / f"m{k}.jsonl"
            write_predictions(
                [PredictionRecord(id=f"s{i}", label=y, prob=p) for i, (p, y) in enumerate(zip(probs, [1, 0, 1]))],
                path,
            )
            files.append(str(path))
        out = tmp_path / "run"
        assert cmd_dispatch(["ensemble", "--out", str(out), "--predictions", *files]) == 0
        result = output(capsys)
        assert result["metrics"]["Accuracy"] == 1.0
        assert result["metrics"]["AUC"] == 1.0
        paths = run_paths(out)
        assert paths.decisions.exists() and paths.ensemble_metrics.exists()
        assert paths.resolved_config.exists()

    def test_needs_exactly_three_files(self, tmp_path):
        """Two prediction files are an argument error."""
        assert cmd_dispatch(["ensemble", "--out", str(tmp_path), "--predictions", "a", "b"]) == 2


class TestEndToEnd:
    """The full tiny recipe through the CLI."""

    def test_artifacts_present(self, tiny_runs):
        """Every step leaves its artifacts under out_dir."""
        _, (paths, _) = tiny_runs
        expected = [
            paths.resolved_config,
            paths.manifest,
            paths.augmented_manifest,
            paths.partition_plan,
            paths.decisions,
            paths.ensemble_metrics,
            paths.report_dir / "report.json",
            paths.report_dir / "report.txt",
        ]
        for name in BACKBONES:
            expected += [
                paths.backbone_checkpoint(name),
                paths.classifier_checkpoint(name),
                paths.training_log(name, "backbone"),
                paths.training_log(name, "classifier"),
                paths.predictions(name),
                paths.member_metrics(name),
            ]
            for when in ("before", "after"):
                expected += [paths.projection_csv(name, when), paths.projection_svg(name, when)]
        assert [str(p) for p in expected if not p.exists()] == []

    def test_decisions_cover_validation_split(self, tiny_runs):
        """One decision per validation sample."""
        _, (paths, _) = tiny_runs
        lines = paths.decisions.read_text().splitlines()
        assert lines[0] == "id,prob_m1,prob_m2,prob_m3,vote,rendered,label"
        assert len(lines) == 1 + 24

    def test_resolved_config_records_overrides(self, tiny_runs):
        """config.resolved.json carries the --out override."""
        _, (paths, _) = tiny_runs
        resolved = json.loads(paths.resolved_config.read_text())
        assert resolved["out_dir"] == str(paths.out_dir)
        assert resolved["seed"] == 7

    def test_same_seed_same_results(self, tiny_runs):
        """Two out dirs with the same config agree byte for byte."""
        _, (a, b) = tiny_runs
        assert a.ensemble_metrics.read_bytes() == b.ensemble_metrics.read_bytes()
        assert a.decisions.read_bytes() == b.decisions.read_bytes()
        for name in BACKBONES:
            assert a.classifier_checkpoint(name).read_bytes() == b.classifier_checkpoint(name).read_bytes()
        assert (a.report_dir / "report.json").read_bytes() == (b.report_dir / "report.json").read_bytes()

    def test_report_rerun_is_byte_identical(self, tiny_runs):
        """Re-running report on an unchanged run reproduces its outputs."""
        config, (paths, _) = tiny_runs
        svg = paths.projection_svg("global-mlp", "after")
        before = {p: p.read_bytes() for p in (paths.report_dir / "report.json", paths.report_dir / "report.txt", svg)}
        assert cmd_dispatch(["report", "--config", str(config), "--out", str(paths.out_dir), "--quiet"]) == 0
        assert {p: p.read_bytes() for p in before} == before

    def test_report_contents(self, tiny_runs):
        """The report lists each member plus the ensemble."""
        _, (paths, _) = tiny_runs
        report = json.loads((paths.report_dir / "report.json").read_text())
        assert [row["Model"] for row in report["result_table"]] == [*BACKBONES, "Ensemble"]
        assert all(m["parameters"] > 0 for m in report["members"])
        assert report["reference_ensemble"]["AUC"] == 0.9807


class TestSelftest:
    def test_selftest_ready(self, tmp_path, capsys):
        """The self-test passes and draws its inputs from the configured seed."""
        config = tmp_path / "seeded.yaml"
        config.write_text("seed: 3\n")
        assert cmd_dispatch(["selftest", "--config", str(config)]) == 0
        result = output(capsys)
        assert result["ready"] is True
        assert result["seed"] == 3

import os

import numpy as np
import pytest

from wsitriage.cli import main


@pytest.fixture(scope="module")
def workflow(tmp_path_factory):
    """Full synth -> split -> train -> calibrate -> run workflow artifacts."""
    root = tmp_path_factory.mktemp("cli")
    corpus = str(root / "corpus")
    models = str(root / "models")
    run_dir = str(root / "run")

    assert main(["synth", "--out", corpus, "--labs", "reference,lab_a",
                 "--specimens", "12", "--slides-min", "1", "--slides-max", "2",
                 "--seed", "3", "--workers", "2"]) == 0

    ref_manifest = str(root / "reference.manifest")
    lab_manifest = str(root / "lab_a.manifest")
    assert main(["split", "--manifest", os.path.join(corpus, "manifest.txt"),
                 "--lab", "reference", "--ratios", "0.7,0.15,0.15",
                 "--seed", "1", "--out", ref_manifest]) == 0
    assert main(["split", "--manifest", os.path.join(corpus, "manifest.txt"),
                 "--lab", "lab_a", "--ratios", "0.4,0.2,0.4",
                 "--names", "CalibFinetune,CalibValidation,Test",
                 "--seed", "1", "--out", lab_manifest]) == 0

    assert main(["train", "--manifest", ref_manifest, "--models", models,
                 "--workers", "2"]) == 0
    assert main(["calibrate", "--manifest", lab_manifest, "--models", models,
                 "--workers", "2", "--seed", "5"]) == 0
    assert main(["run", "--manifest", lab_manifest, "--models", models,
                 "--lab", "lab_a", "--split", "Test", "--out", run_dir,
                 "--workers", "2", "--seed", "5"]) == 0
    return {"root": root, "corpus": corpus, "models": models, "run": run_dir,
            "ref_manifest": ref_manifest, "lab_manifest": lab_manifest}


class TestWorkflow:
    def test_run_outputs_exist(self, workflow):
        for name in ("slide_results.csv", "specimen_results.csv",
                     "class_scores.csv", "timings.csv", "thresholds.txt",
                     "run_manifest.txt"):
            assert os.path.exists(os.path.join(workflow["run"], name))

    def test_calibration_artifacts_exist(self, workflow):
        for name in ("segmenter.txt", "classifier.txt", "reference.adapter",
                     "lab_a.adapter", "lab_a.classifier.txt", "lab_a.thresholds"):
            assert os.path.exists(os.path.join(workflow["models"], name))

    def test_evaluate_stdout_and_files(self, workflow, capsys, tmp_path):
        thresholds = os.path.join(workflow["models"], "lab_a.thresholds")
        assert main(["evaluate", "--run", workflow["run"],
                     "--manifest", workflow["lab_manifest"],
                     "--thresholds", thresholds]) == 0
        out = capsys.readouterr().out
        assert "coverage" in out

        report_dir = str(tmp_path / "report")
        assert main(["evaluate", "--run", workflow["run"],
                     "--manifest", workflow["lab_manifest"],
                     "--thresholds", thresholds, "--out", report_dir]) == 0
        assert os.path.exists(os.path.join(report_dir, "report.txt"))

    def test_profile_output(self, workflow, capsys):
        assert main(["profile", "--run", workflow["run"]]) == 0
        out = capsys.readouterr().out
        assert "median" in out
        assert "throughput" in out

    def test_rerun_is_bit_identical(self, workflow, tmp_path):
        rerun = str(tmp_path / "rerun")
        assert main(["run", "--manifest", workflow["lab_manifest"],
                     "--models", workflow["models"], "--lab", "lab_a",
                     "--split", "Test", "--out", rerun,
                     "--workers", "1", "--seed", "5"]) == 0
        for name in ("slide_results.csv", "specimen_results.csv",
                     "class_scores.csv"):
            a = open(os.path.join(workflow["run"], name), "rb").read()
            b = open(os.path.join(rerun, name), "rb").read()
            assert a == b


class TestErrors:
    def test_missing_manifest_is_data_error(self, tmp_path):
        code = main(["split", "--manifest", str(tmp_path / "nope.txt"),
                     "--out", str(tmp_path / "out.txt")])
        assert code == 2

    def test_unknown_config_key_is_usage_error(self, tmp_path, capsys):
        config = tmp_path / "c.cfg"
        config.write_text("tiling.nope=3\n")
        code = main(["synth", "--out", str(tmp_path / "c"), "--specimens", "1",
                     "--config", str(config)])
        assert code == 1
        assert "tiling.nope" in capsys.readouterr().err

    def test_missing_input_names_path(self, tmp_path, capsys):
        missing = str(tmp_path / "missing.manifest")
        code = main(["train", "--manifest", missing,
                     "--models", str(tmp_path / "m")])
        assert code == 2
        assert missing in capsys.readouterr().err

    def test_usage_error_exit_code(self, capsys):
        assert main(["split"]) == 1   # missing required arguments

    def test_unknown_lab_profile(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path / "c"),
                     "--labs", "lab_zz", "--specimens", "1"]) == 1

    def test_bad_ratio_values(self, tmp_path, workflow):
        code = main(["split", "--manifest", workflow["ref_manifest"],
                     "--ratios", "a,b,c", "--out", str(tmp_path / "x.manifest")])
        assert code == 1

    def test_unknown_split_name(self, workflow, tmp_path):
        code = main(["run", "--manifest", workflow["lab_manifest"],
                     "--models", workflow["models"], "--lab", "lab_a",
                     "--split", "Holdout", "--out", str(tmp_path / "r")])
        assert code == 1

    def test_manifest_without_needed_split_is_data_error(self, tmp_path, workflow):
        # a manifest with no Train split cannot train
        unsplit = tmp_path / "unsplit.manifest"
        text = open(workflow["ref_manifest"]).read().splitlines()
        rewritten = [text[0]] + [",".join(
            line.split(",")[:4] + ["", line.split(",")[5]])
            for line in text[1:] if line]
        unsplit.write_text("\n".join(rewritten) + "\n")
        code = main(["train", "--manifest", str(unsplit),
                     "--models", str(tmp_path / "m")])
        assert code == 2

    def test_run_on_empty_manifest_ok(self, tmp_path, workflow):
        empty = tmp_path / "empty.manifest"
        empty.write_text("wsi-triage-manifest v1\n")
        out = str(tmp_path / "runout")
        code = main(["run", "--manifest", str(empty),
                     "--models", workflow["models"], "--out", out,
                     "--workers", "1"])
        assert code == 0
        assert os.path.exists(os.path.join(out, "specimen_results.csv"))


class TestConfigFile:
    def test_config_values_respected(self, tmp_path, capsys):
        config = tmp_path / "c.cfg"
        config.write_text("# comment line\nseed=9\nconfidence.T=5\n")
        from wsitriage.config import load_config
        cfg = load_config(config)
        assert cfg["seed"] == 9
        assert cfg["confidence.T"] == 5
        assert cfg["confidence.targets"] == (0.90, 0.95, 0.98)

    def test_malformed_line(self, tmp_path):
        from wsitriage.config import ConfigError, load_config
        config = tmp_path / "c.cfg"
        config.write_text("just some words\n")
        with pytest.raises(ConfigError):
            load_config(config)

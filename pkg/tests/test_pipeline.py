import json
import os

import numpy as np
import pytest

from saliencybench import cli
from saliencybench.config import DEFAULTS, RunConfig, parse_config_text
from saliencybench.errors import ConfigError, StageError
from saliencybench.pipeline import run_pipeline

TINY = {
    "data.side": "32",
    "data.n_train": "60",
    "data.n_test": "16",
    "data.n_eval": "6",
    "model.epochs": "1",
    "estimators.list": "backprop,intgrad,smoothgrad,random",
    "estimators.ig_steps": "5",
    "estimators.sg_samples": "3",
    "metrics.percent_grid": "5,20",
    "felz.min_size": "5",
}


def tiny_config(out_dir, **overrides):
    values = dict(TINY)
    values["out_dir"] = str(out_dir)
    values.update(overrides)
    return RunConfig(values)


def write_config_file(path, out_dir):
    lines = [f"{k} = {v}" for k, v in TINY.items()]
    lines.append(f"out_dir = {out_dir}")
    path.write_text("\n".join(lines) + "\n")


class TestConfig:
    def test_defaults_applied(self):
        cfg = RunConfig({})
        assert cfg.values == DEFAULTS
        assert cfg.seed == 0
        assert len(cfg.estimator_names) == 8

    def test_parse_comments_and_blank_lines(self):
        values = parse_config_text("# a comment\n\nseed = 5  # inline\n")
        assert values == {"seed": "5"}

    def test_parse_rejects_bad_line(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config_text("seed = 1\nnonsense\n")

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            RunConfig({"data.shape": "64"})

    def test_unknown_estimator_rejected(self):
        with pytest.raises(ConfigError, match="gradcam"):
            RunConfig({"estimators.list": "backprop,gradcam"})

    def test_unknown_variant_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig({"variants": "original,signed"})

    def test_unsupported_region_statistic(self):
        with pytest.raises(ConfigError):
            RunConfig({"xrai.region_statistic": "max"})

    def test_bad_value_type(self):
        with pytest.raises(ConfigError):
            RunConfig({"data.n_train": "many"}).n_train

    def test_text_round_trip(self):
        cfg = RunConfig({"seed": "9", "estimators.list": "backprop,random"})
        back = RunConfig(parse_config_text(cfg.to_text()))
        assert back.values == cfg.values
        assert back.config_hash() == cfg.config_hash()

    def test_stage_hash_scoping(self):
        base = RunConfig({})
        changed = RunConfig({"estimators.sg_sigma": "0.3"})
        # noise sigma feeds only the attribution and evaluation stages
        for stage in ("data", "train"):
            assert base.stage_hash(stage) == changed.stage_hash(stage)
        for stage in ("attribute", "eval"):
            assert base.stage_hash(stage) != changed.stage_hash(stage)

    def test_stage_seeds_distinct_and_stable(self):
        cfg = RunConfig({})
        assert cfg.stage_seed("data") == RunConfig({}).stage_seed("data")
        assert cfg.stage_seed("data") != cfg.stage_seed("train")
        assert cfg.stage_seed("data") != RunConfig({"seed": "1"}).stage_seed("data")


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "tiny"
    cfg = tiny_config(out)
    manifest = run_pipeline(cfg)
    return cfg, manifest


class TestPipeline:
    def test_manifest_complete(self, tiny_run):
        cfg, manifest = tiny_run
        assert manifest["status"] == "complete"
        assert manifest["failed_stage"] is None
        assert manifest["config_hash"] == cfg.config_hash()
        on_disk = json.load(open(os.path.join(cfg.out_dir, "run_manifest.json")))
        assert on_disk["artifacts"] == manifest["artifacts"]

    def test_layout(self, tiny_run):
        cfg, _ = tiny_run
        out = cfg.out_dir
        assert os.path.exists(os.path.join(out, "data", "manifest.csv"))
        assert os.path.exists(os.path.join(out, "model", "model.atm"))
        for est in cfg.estimator_names:
            for variant in cfg.variants:
                d = os.path.join(out, "heatmaps", est, variant)
                assert len([f for f in os.listdir(d) if f.endswith(".ahm")]) == 6
                for metric in ("perturbation", "roc", "dsc"):
                    assert os.path.exists(os.path.join(
                        out, "curves", f"{est}__{variant}__{metric}.csv"))
        for table in ("fidelity", "auc", "auc_trapezoid", "dsc_max"):
            assert os.path.exists(os.path.join(out, "report", table + ".csv"))
            assert os.path.exists(os.path.join(out, "report", table + ".txt"))
        svgs = [f for f in os.listdir(os.path.join(out, "report"))
                if f.endswith(".svg")]
        assert len(svgs) == len(cfg.estimator_names) * len(cfg.variants) * 3

    def test_rerun_skips_cached_stages(self, tiny_run):
        cfg, _ = tiny_run
        model_path = os.path.join(cfg.out_dir, "model", "model.atm")
        before = os.path.getmtime(model_path)
        run_pipeline(cfg)
        assert os.path.getmtime(model_path) == before

    def test_identical_config_reproduces_bytes(self, tiny_run, tmp_path):
        cfg, manifest = tiny_run
        other = tiny_config(tmp_path / "twin")
        run_pipeline(other)
        for rel in manifest["artifacts"]:
            a = open(os.path.join(cfg.out_dir, rel), "rb").read()
            b = open(os.path.join(other.out_dir, rel), "rb").read()
            assert a == b, f"artifact differs: {rel}"

    def test_seed_changes_artifacts(self, tiny_run, tmp_path):
        cfg, _ = tiny_run
        other = tiny_config(tmp_path / "reseeded", seed="1")
        run_pipeline(other)
        a = open(os.path.join(cfg.out_dir, "model", "model.atm"), "rb").read()
        b = open(os.path.join(other.out_dir, "model", "model.atm"), "rb").read()
        assert a != b

    def test_report_scores_match_curves(self, tiny_run):
        import csv
        cfg, _ = tiny_run
        with open(os.path.join(cfg.out_dir, "report", "dsc_max.csv")) as fh:
            rows = list(csv.DictReader(fh))
        for row in rows:
            path = os.path.join(cfg.out_dir, "curves",
                                f"{row['estimator']}__absolute__dsc.csv")
            with open(path) as fh:
                curve = list(csv.DictReader(fh))
            best = max(float(r["mean_dsc"]) for r in curve)
            assert float(row["Absolute"]) == pytest.approx(best)


class TestCli:
    def test_print_config_round_trip(self, capsys):
        assert cli.main(["print-config", "--seed", "7"]) == 0
        text = capsys.readouterr().out
        cfg = RunConfig(parse_config_text(text))
        assert cfg.seed == 7

    def test_unknown_estimator_exits_2(self, capsys):
        assert cli.main(["run", "--estimators", "gradcam"]) == 2
        assert "gradcam" in capsys.readouterr().err

    def test_missing_config_file_exits_2(self, tmp_path):
        assert cli.main(["run", "--config", str(tmp_path / "nope.cfg")]) == 2

    def test_bad_config_value_exits_2(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("felz.k = -3\n")
        assert cli.main(["print-config", "--config", str(path)]) == 2

    def test_report_without_curves_exits_3(self, tmp_path, capsys):
        assert cli.main(["report", "--out", str(tmp_path / "empty")]) == 3
        assert "missing" in capsys.readouterr().err

    def test_staged_commands(self, tmp_path, capsys):
        out = tmp_path / "staged"
        cfg_path = tmp_path / "tiny.cfg"
        write_config_file(cfg_path, out)
        base = ["--config", str(cfg_path)]
        assert cli.main(["gen-data"] + base) == 0
        assert os.path.exists(out / "data" / "manifest.csv")
        assert cli.main(["train"] + base) == 0
        assert os.path.exists(out / "model" / "model.atm")
        assert cli.main(["attribute"] + base) == 0
        assert cli.main(["eval", "fidelity"] + base) == 0
        assert os.path.exists(out / "curves" / "backprop__absolute__perturbation.csv")
        # report needs all three metrics; fidelity alone is not enough
        assert cli.main(["report"] + base) == 3
        assert cli.main(["eval", "roc"] + base) == 0
        assert cli.main(["eval", "dsc"] + base) == 0
        assert cli.main(["report"] + base) == 0
        assert os.path.exists(out / "report" / "fidelity.txt")
        capsys.readouterr()

    def test_cli_run_matches_library_run(self, tiny_run, tmp_path):
        cfg, manifest = tiny_run
        out = tmp_path / "cliout"
        cfg_path = tmp_path / "tiny.cfg"
        write_config_file(cfg_path, out)
        assert cli.main(["run", "--config", str(cfg_path)]) == 0
        sample = "curves/backprop__absolute__perturbation.csv"
        a = open(os.path.join(cfg.out_dir, sample)).read()
        b = open(os.path.join(out, sample)).read()
        assert a == b

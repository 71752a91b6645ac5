import csv
import json

import pytest

from sellpoint.cli import main

TINY_CONFIG = {
    "world": {
        "n_users": 60, "n_keywords": 300, "n_categories": 6, "n_ads": 60,
        "n_brands": 20, "n_sp_phrases": 120, "history_clicks": 20,
    },
    "data": {"sf_impressions": 400, "ad_sessions": 150},
    "training": {"max_epochs_aux": 1, "max_epochs_main": 2, "batch_size": 64},
    "model": {"dims": {"keyword_dim": 8, "feature_dim": 4, "fc1": 16, "fc2": 16}},
}


def write_config(tmp_path, extra=None):
    doc = json.loads(json.dumps(TINY_CONFIG))
    if extra:
        doc.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """generate -> train(basic) -> train(alternate) shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root)
    data_dir = root / "data"
    assert main(["generate", "--config", cfg, "--seed", "5",
                 "--out", str(data_dir)]) == 0
    basic_dir = root / "basic"
    assert main(["train", "--config", cfg, "--seed", "5", "--data", str(data_dir),
                 "--variant", "basic", "--strategy", "basic",
                 "--out", str(basic_dir)]) == 0
    multi_dir = root / "multi"
    assert main(["train", "--config", cfg, "--seed", "5", "--data", str(data_dir),
                 "--variant", "multitask", "--strategy", "alternate",
                 "--out", str(multi_dir)]) == 0
    return {"root": root, "config": cfg, "data": data_dir,
            "basic": basic_dir, "multi": multi_dir}


class TestGenerate:
    def test_artifacts_written(self, pipeline):
        data = pipeline["data"]
        for name in ("vocab.jsonl", "schema.json", "sf.jsonl", "ad.jsonl",
                     "world.json", "run.json"):
            assert (data / name).exists(), name

    def test_manifest_contents(self, pipeline):
        manifest = json.loads((pipeline["data"] / "run.json").read_text())
        assert manifest["command"] == "generate"
        assert manifest["seed"] == 5
        assert "config_sha256" in manifest and "package_version" in manifest


class TestTrain:
    def test_artifacts_written(self, pipeline):
        for key in ("basic", "multi"):
            out = pipeline[key]
            assert (out / "checkpoint.bin").exists()
            assert (out / "loss_history.csv").exists()
            assert (out / "run.json").exists()

    def test_loss_history_format(self, pipeline):
        with open(pipeline["basic"] / "loss_history.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["epoch", "task", "mean_loss"]
        assert len(rows) == 3  # 2 main epochs
        assert all(r[1] == "main" for r in rows[1:])

    def test_invalid_strategy_variant_combo(self, pipeline, capsys):
        rc = main(["train", "--config", pipeline["config"],
                   "--data", str(pipeline["data"]),
                   "--variant", "basic", "--strategy", "alternate",
                   "--out", str(pipeline["root"] / "bad")])
        assert rc != 0

    def test_basic_strategy_rejects_multitask_variant(self, pipeline):
        rc = main(["train", "--config", pipeline["config"],
                   "--data", str(pipeline["data"]),
                   "--variant", "multitask", "--strategy", "basic",
                   "--out", str(pipeline["root"] / "bad2")])
        assert rc != 0


class TestEval:
    def test_eval_writes_auc(self, pipeline):
        out = pipeline["root"] / "eval"
        rc = main(["eval", "--config", pipeline["config"],
                   "--data", str(pipeline["data"]),
                   "--checkpoint", str(pipeline["basic"] / "checkpoint.bin"),
                   "--out", str(out)])
        assert rc == 0
        with open(out / "eval.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["dataset", "n", "auc"]
        value = float(rows[1][2])
        assert 0.0 <= value <= 1.0

    def test_eval_reproducible_to_twelve_decimals(self, pipeline):
        outs = []
        for tag in ("eval_a", "eval_b"):
            out = pipeline["root"] / tag
            assert main(["eval", "--config", pipeline["config"],
                         "--data", str(pipeline["data"]),
                         "--checkpoint", str(pipeline["basic"] / "checkpoint.bin"),
                         "--out", str(out)]) == 0
            with open(out / "eval.csv") as fh:
                outs.append(list(csv.reader(fh))[1][2])
        assert outs[0] == outs[1]


class TestGroupAnalysis:
    def test_runs_and_writes_table(self, pipeline):
        out = pipeline["root"] / "groups"
        rc = main(["group-analysis", "--config", pipeline["config"],
                   "--data", str(pipeline["data"]),
                   "--checkpoints",
                   f"basic={pipeline['basic'] / 'checkpoint.bin'},"
                   f"multitask={pipeline['multi'] / 'checkpoint.bin'}",
                   "--out", str(out)])
        assert rc == 0
        assert (out / "group_analysis.csv").exists()
        text = (out / "group_analysis.txt").read_text()
        assert "medians" in text and "clicks<=" in text

    def test_needs_two_checkpoints(self, pipeline):
        rc = main(["group-analysis", "--config", pipeline["config"],
                   "--data", str(pipeline["data"]),
                   "--checkpoints", f"basic={pipeline['basic'] / 'checkpoint.bin'}",
                   "--out", str(pipeline["root"] / "g2")])
        assert rc != 0


class TestAblation:
    def test_runs_with_selected_groups(self, pipeline):
        out = pipeline["root"] / "ablation"
        rc = main(["ablation", "--config", pipeline["config"],
                   "--data", str(pipeline["data"]),
                   "--features", "profile",
                   "--out", str(out)])
        assert rc == 0
        with open(out / "ablation.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["groups", "auc", "gain_pct"]
        assert rows[1][0] == "baseline"
        assert len(rows) == 3


class TestAbTest:
    def test_random_vs_oracle(self, pipeline):
        out = pipeline["root"] / "abtest"
        rc = main(["abtest", "--config", pipeline["config"],
                   "--data", str(pipeline["data"]),
                   "--control", "random", "--treatment", "oracle",
                   "--n", "4000", "--out", str(out)])
        assert rc == 0
        with open(out / "abtest.csv") as fh:
            rows = list(csv.reader(fh))
        header, values = rows
        rec = dict(zip(header, values))
        assert float(rec["relative_change"]) > 0
        assert int(rec["clicks_control"]) + int(rec["misses_control"]) == 2000

    def test_model_policy_needs_checkpoint(self, pipeline):
        rc = main(["abtest", "--config", pipeline["config"],
                   "--data", str(pipeline["data"]),
                   "--control", "random", "--treatment", "model",
                   "--n", "1000", "--out", str(pipeline["root"] / "ab2")])
        assert rc != 0


class TestRefine:
    def test_refine_pages(self, pipeline):
        data = pipeline["data"]
        # build a one-page request from the generated dataset
        sf_line = json.loads((data / "sf.jsonl").read_text().splitlines()[0])
        ads = []
        seen = set()
        for line in (data / "ad.jsonl").read_text().splitlines():
            rec = json.loads(line)["ad"]
            if rec["ad_id"] not in seen:
                seen.add(rec["ad_id"])
                ads.append(rec)
            if len(ads) == 5:
                break
        page = {"user": sf_line["user"], "query": sf_line["query"], "ads": ads}
        pages_path = pipeline["root"] / "pages.jsonl"
        pages_path.write_text(json.dumps(page) + "\n")
        out = pipeline["root"] / "refined"
        rc = main(["refine", "--config", pipeline["config"],
                   "--data", str(data),
                   "--checkpoint", str(pipeline["basic"] / "checkpoint.bin"),
                   "--pages", str(pages_path), "--budget", "24",
                   "--out", str(out)])
        assert rc == 0
        lines = (out / "refined.jsonl").read_text().splitlines()
        assert len(lines) == 5
        for line in lines:
            rec = json.loads(line)
            assert set(rec) == {"ad_id", "sps", "display", "scores"}
            assert len(rec["display"]) <= 24
            assert rec["display"].startswith("【")

    def test_vocab_mismatch_refused(self, pipeline, tmp_path):
        # checkpoint paired with a different world's vocabulary must refuse
        other_cfg = write_config(tmp_path)
        other_data = tmp_path / "data2"
        assert main(["generate", "--config", other_cfg, "--seed", "99",
                     "--out", str(other_data)]) == 0
        rc = main(["eval", "--config", other_cfg,
                   "--data", str(other_data),
                   "--checkpoint", str(pipeline["basic"] / "checkpoint.bin"),
                   "--out", str(tmp_path / "eval")])
        assert rc != 0


class TestServeBench:
    def test_bench_writes_csv(self, pipeline):
        out = pipeline["root"] / "bench"
        rc = main(["serve-bench", "--config", pipeline["config"],
                   "--data", str(pipeline["data"]),
                   "--checkpoint", str(pipeline["basic"] / "checkpoint.bin"),
                   "--pages-count", "3", "--ads", "20", "--out", str(out)])
        assert rc == 0
        with open(out / "serve_bench.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][:3] == ["p50_ms", "p95_ms", "p99_ms"]
        assert float(rows[1][0]) > 0


class TestGradcheckCommand:
    def test_exit_zero_on_pass(self, capsys):
        assert main(["gradcheck", "--configs", "3"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out


class TestConfigHandling:
    def test_unknown_key_reports_path(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"training": {"batch_sizee": 3}}))
        rc = main(["generate", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert rc == 1
        assert "training.batch_sizee" in capsys.readouterr().err

    def test_set_overrides(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "data"
        assert main(["generate", "--config", cfg, "--set", "world.n_users=40",
                     "--set", "data.sf_impressions=100", "--out", str(out)]) == 0
        manifest = json.loads((out / "run.json").read_text())
        assert manifest["config"]["world"]["n_users"] == 40

    def test_unknown_command_usage(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err.lower()

    def test_missing_data_dir(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        rc = main(["train", "--config", cfg, "--data", str(tmp_path / "missing"),
                   "--variant", "basic", "--strategy", "basic",
                   "--out", str(tmp_path / "o")])
        assert rc == 1
        assert "data directory" in capsys.readouterr().err

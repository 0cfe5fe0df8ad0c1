import json
import os

import pytest

from wifipath import cli
from wifipath.dataset import CLASS_NAMES

GEN_ARGS = ["gen-data", "--mods", "BPSK", "--snr-min", "-20", "--snr-max", "30",
            "--snr-step", "10", "--frames-per-pair", "4", "--preview-len", "1",
            "--split-fracs", "0.5,0.25,0.25", "--seed", "7"]

TINY_MODEL = ["--d-model", "8", "--n-heads", "2", "--n-layers", "1",
              "--d-ffn", "16", "--max-len", "96"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("data"))
    assert cli.main(GEN_ARGS + ["--out", out]) == 0
    return out


@pytest.fixture(scope="module")
def cls_run(tmp_path_factory, data_dir):
    out = str(tmp_path_factory.mktemp("cls"))
    rc = cli.main(["train-cls", "--data", data_dir, "--out", out,
                   "--epochs", "2", "--batch-size", "4", "--lr", "1e-3",
                   "--seed", "7"] + TINY_MODEL)
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def lm_run(tmp_path_factory, data_dir):
    out = str(tmp_path_factory.mktemp("lm"))
    rc = cli.main(["train-lm", "--data", data_dir, "--out", out,
                   "--epochs", "1", "--batch-size", "4", "--lr", "1e-3",
                   "--seed", "7"] + TINY_MODEL)
    assert rc == 0
    return out


class TestGenData:
    def test_artifacts_written(self, data_dir):
        for name in ("examples.jsonl", "manifest.json", "vocab.json",
                     "class_hist.png", "resolved_config.json"):
            assert os.path.exists(os.path.join(data_dir, name)), name

    def test_example_count(self, data_dir):
        lines = open(os.path.join(data_dir, "examples.jsonl")).read().splitlines()
        assert len(lines) == 1 * 6 * 4  # mods x snr levels x frames

    def test_manifest_totals(self, data_dir):
        manifest = json.load(open(os.path.join(data_dir, "manifest.json")))
        assert manifest["total"] == 24
        assert manifest["seed"] == 7

    def test_rerun_byte_identical(self, data_dir, tmp_path):
        out2 = str(tmp_path / "again")
        assert cli.main(GEN_ARGS + ["--out", out2]) == 0
        for name in ("examples.jsonl", "manifest.json", "vocab.json"):
            a = open(os.path.join(data_dir, name), "rb").read()
            b = open(os.path.join(out2, name), "rb").read()
            assert a == b, name

    def test_config_file_overridden_by_flag(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"data.frames_per_pair": 2}))
        out = str(tmp_path / "out")
        rc = cli.main(GEN_ARGS + ["--out", out, "--config", str(cfg),
                                  "--frames-per-pair", "3"])
        assert rc == 0
        resolved = json.load(open(os.path.join(out, "resolved_config.json")))
        assert resolved["data.frames_per_pair"] == 3

    def test_unknown_config_key_is_usage_error(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"data.bogus": 1}))
        rc = cli.main(GEN_ARGS + ["--out", str(tmp_path / "x"), "--config", str(cfg)])
        assert rc == 2

    def test_invalid_grid_is_usage_error(self, tmp_path):
        rc = cli.main(["gen-data", "--snr-min", "10", "--snr-max", "0",
                       "--out", str(tmp_path / "x")])
        assert rc == 2


class TestTrainCls:
    def test_artifacts_written(self, cls_run):
        for name in ("checkpoint.bin", "checkpoint.bin.json", "report.json",
                     "report.csv", "curves.png", "resolved_config.json"):
            assert os.path.exists(os.path.join(cls_run, name)), name

    def test_report_rows_match_epochs(self, cls_run):
        rows = json.load(open(os.path.join(cls_run, "report.json")))
        assert len(rows) == 2

    def test_rerun_byte_identical_checkpoint(self, data_dir, cls_run, tmp_path):
        out2 = str(tmp_path / "again")
        rc = cli.main(["train-cls", "--data", data_dir, "--out", out2,
                       "--epochs", "2", "--batch-size", "4", "--lr", "1e-3",
                       "--seed", "7"] + TINY_MODEL)
        assert rc == 0
        a = open(os.path.join(cls_run, "checkpoint.bin"), "rb").read()
        b = open(os.path.join(out2, "checkpoint.bin"), "rb").read()
        assert a == b

    def test_missing_data_dir_is_io_error(self, tmp_path):
        rc = cli.main(["train-cls", "--data", str(tmp_path / "nope"),
                       "--out", str(tmp_path / "x")])
        assert rc == 3

    def test_unknown_preset_is_usage_error(self, data_dir, tmp_path, capsys):
        with pytest.raises(SystemExit):
            cli.main(["train-cls", "--data", data_dir,
                      "--out", str(tmp_path / "x"), "--preset", "bogus"])

    def test_base_checkpoint_resume(self, data_dir, cls_run, tmp_path):
        out = str(tmp_path / "resumed")
        rc = cli.main(["train-cls", "--data", data_dir, "--out", out,
                       "--epochs", "1", "--batch-size", "4", "--lora",
                       "--lora-rank", "2", "--seed", "7", "--base-checkpoint",
                       os.path.join(cls_run, "checkpoint.bin")])
        assert rc == 0
        assert os.path.exists(os.path.join(out, "adapters.bin"))

    def test_base_checkpoint_arch_mismatch_is_exit_5(self, data_dir, lm_run, tmp_path):
        rc = cli.main(["train-cls", "--data", data_dir,
                       "--out", str(tmp_path / "x"), "--epochs", "1",
                       "--base-checkpoint", os.path.join(lm_run, "checkpoint.bin")])
        assert rc == 5

    def test_lora_run_writes_adapters(self, data_dir, tmp_path):
        out = str(tmp_path / "lora")
        rc = cli.main(["train-cls", "--data", data_dir, "--out", out,
                       "--epochs", "1", "--batch-size", "4", "--lora",
                       "--lora-rank", "2", "--seed", "7"] + TINY_MODEL)
        assert rc == 0
        assert os.path.exists(os.path.join(out, "adapters.bin"))
        assert os.path.exists(os.path.join(out, "checkpoint.bin"))


class TestEval:
    def test_encoder_eval_artifacts(self, data_dir, cls_run, tmp_path, capsys):
        out = str(tmp_path / "eval")
        rc = cli.main(["eval", "--checkpoint", os.path.join(cls_run, "checkpoint.bin"),
                       "--data", data_dir, "--out", out])
        assert rc == 0
        payload = json.load(open(os.path.join(out, "eval.json")))
        assert payload["split"] == "test" and payload["n_examples"] == 6
        assert os.path.exists(os.path.join(out, "confusion.png"))

    def test_decoder_eval_artifacts(self, data_dir, lm_run, tmp_path, capsys):
        out = str(tmp_path / "eval")
        rc = cli.main(["eval", "--checkpoint", os.path.join(lm_run, "checkpoint.bin"),
                       "--data", data_dir, "--out", out])
        assert rc == 0
        payload = json.load(open(os.path.join(out, "eval.json")))
        assert 0.0 <= payload["exact_match_rate"] <= 1.0
        assert os.path.exists(os.path.join(out, "samples.txt"))
        assert os.path.exists(os.path.join(out, "match_rates.png"))

    def test_vocab_hash_mismatch_is_exit_5(self, cls_run, tmp_path, capsys):
        other = str(tmp_path / "other")
        rc = cli.main(["gen-data", "--mods", "QPSK,QAM16", "--snr-min", "0",
                       "--snr-max", "20", "--snr-step", "10",
                       "--frames-per-pair", "4", "--preview-len", "1",
                       "--split-fracs", "0.5,0.25,0.25", "--seed", "7",
                       "--out", other])
        assert rc == 0
        rc = cli.main(["eval", "--checkpoint", os.path.join(cls_run, "checkpoint.bin"),
                       "--data", other])
        assert rc == 5


class TestPredict:
    def test_synthesized_frame(self, data_dir, cls_run, capsys):
        rc = cli.main(["predict", "--checkpoint", os.path.join(cls_run, "checkpoint.bin"),
                       "--data", data_dir, "--snr", "-15", "--mod", "BPSK"])
        assert rc == 0
        assert capsys.readouterr().out.strip() in CLASS_NAMES

    def test_prompt_file(self, data_dir, cls_run, tmp_path, capsys):
        src = json.loads(open(os.path.join(data_dir, "examples.jsonl")).readline())
        pf = tmp_path / "prompt.txt"
        pf.write_text(src["prompt"])
        rc = cli.main(["predict", "--checkpoint", os.path.join(cls_run, "checkpoint.bin"),
                       "--data", data_dir, "--prompt-file", str(pf)])
        assert rc == 0
        assert capsys.readouterr().out.strip() in CLASS_NAMES

    def test_missing_inputs_is_usage_error(self, data_dir, cls_run, capsys):
        rc = cli.main(["predict", "--checkpoint", os.path.join(cls_run, "checkpoint.bin"),
                       "--data", data_dir])
        assert rc == 2

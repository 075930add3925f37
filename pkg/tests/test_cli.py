"""Command-line interface tests: exit codes, config handling, pipelines."""

import os

import numpy as np
import pytest

from relground import cli
from relground.formats import (load_checkpoint, read_grounding_results,
                               read_manifest)

FAST_TRAIN = ["--clip-len", "4", "--hidden-dim", "12", "--region-dim", "8",
              "--word-dim", "8", "--attn-dim", "8", "--token-dim", "8",
              "--epochs", "1", "--batch-size", "4", "--dropout", "0.0"]


def run(argv):
    try:
        return cli.main(argv)
    except SystemExit as exc:  # argparse errors
        return exc.code


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("clibench"))
    assert run(["gen", "--out", out, "--train-count", "6", "--test-count",
                "3", "--zero-shot-fraction", "0.34", "--seed", "2"]) == 0
    return out


@pytest.fixture(scope="module")
def trained(bench, tmp_path_factory):
    ckpt = str(tmp_path_factory.mktemp("clickpt") / "model.ckpt")
    rc = run(["train", "--manifest", f"{bench}/train.manifest",
              "--checkpoint", ckpt] + FAST_TRAIN)
    assert rc == 0
    return ckpt


class TestParsing:
    def test_no_command(self, capsys):
        assert run([]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_command(self, capsys):
        assert run(["frobnicate"]) == 1

    def test_unknown_flag(self):
        assert run(["gen", "--out", "x", "--bogus"]) == 1

    def test_missing_required(self):
        assert run(["train", "--manifest", "m"]) == 1

    def test_zero_shot_requires_train_manifest(self, capsys):
        assert run(["eval", "--manifest", "m", "--results", "r",
                    "--zero-shot"]) == 1
        assert "--train-manifest" in capsys.readouterr().err


class TestConfigFile:
    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("hidden_dim = 16\nwidget = 3\n")
        assert run(["train", "--manifest", "m", "--checkpoint", "c",
                    "--config", str(cfg)]) == 1
        assert "widget" in capsys.readouterr().err

    def test_file_values_applied_and_flags_win(self, bench, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# comment line\nhidden_dim = 10\nattn_dim = 8\n"
                       "region_dim = 8\nword_dim = 8\ntoken_dim = 8\n"
                       "clip_len = 4\nmax_epochs = 1\nbatch_size = 4\n"
                       "dropout = 0.0\n")
        ckpt = tmp_path / "m.ckpt"
        rc = run(["train", "--manifest", f"{bench}/train.manifest",
                  "--checkpoint", str(ckpt), "--config", str(cfg),
                  "--attn-dim", "6"])
        assert rc == 0
        arrays = load_checkpoint(ckpt)
        assert arrays["dec_lstm.Wh"].shape[0] == 10     # from the file
        assert arrays["spatial_attn.hidden_W"].shape[1] == 6  # flag override

    def test_missing_config_file(self):
        assert run(["train", "--manifest", "m", "--checkpoint", "c",
                    "--config", "/nonexistent.cfg"]) == 2


class TestExitCodes:
    def test_missing_manifest_is_io_error(self, capsys):
        assert run(["train", "--manifest", "/nonexistent.manifest",
                    "--checkpoint", "/tmp/x.ckpt"]) == 2

    def test_missing_checkpoint(self, bench):
        assert run(["ground", "--manifest", f"{bench}/test.manifest",
                    "--checkpoint", "/nonexistent.ckpt",
                    "--out", "/tmp/r.results"]) == 2

    def test_eval_requires_results_for_every_query(self, bench, trained,
                                                   tmp_path):
        results = tmp_path / "partial.results"
        results.write_text("")
        assert run(["eval", "--manifest", f"{bench}/test.manifest",
                    "--results", str(results)]) == 2


class TestPipeline:
    def test_train_ground_eval(self, bench, trained, tmp_path, capsys):
        results = str(tmp_path / "out.results")
        assert run(["ground", "--manifest", f"{bench}/test.manifest",
                    "--checkpoint", trained, "--out", results]) == 0
        loaded = read_grounding_results(results)
        test_entries = read_manifest(f"{bench}/test.manifest")
        assert [(v, r) for v, r, _ in loaded] == \
            [(v, r) for v, _, r, _ in test_entries]

        report = str(tmp_path / "report.txt")
        assert run(["eval", "--manifest", f"{bench}/test.manifest",
                    "--results", results, "--report", report]) == 0
        out = capsys.readouterr().out
        assert "Acc_R" in out and "Average" in out
        assert os.path.exists(report)

    def test_ground_jobs_identical(self, bench, trained, tmp_path):
        serial = str(tmp_path / "serial.results")
        parallel = str(tmp_path / "parallel.results")
        run(["ground", "--manifest", f"{bench}/test.manifest",
             "--checkpoint", trained, "--out", serial])
        run(["ground", "--manifest", f"{bench}/test.manifest",
             "--checkpoint", trained, "--out", parallel, "--jobs", "3"])
        assert open(serial, "rb").read() == open(parallel, "rb").read()

    def test_checkpoint_dims_inferred_at_ground_time(self, bench, trained,
                                                     tmp_path):
        # ground does not need the training flags repeated: dims come from
        # the checkpoint arrays.
        results = str(tmp_path / "inferred.results")
        assert run(["ground", "--manifest", f"{bench}/test.manifest",
                    "--checkpoint", trained, "--out", results]) == 0

    def test_random_baseline_eval(self, bench, capsys):
        assert run(["eval", "--manifest", f"{bench}/test.manifest",
                    "--random-baseline", "--seed", "7"]) == 0
        first = capsys.readouterr().out
        assert run(["eval", "--manifest", f"{bench}/test.manifest",
                    "--random-baseline", "--seed", "7"]) == 0
        assert capsys.readouterr().out == first

    def test_zero_shot_eval(self, bench, trained, tmp_path, capsys):
        results = str(tmp_path / "zs.results")
        run(["ground", "--manifest", f"{bench}/test_zeroshot.manifest",
             "--checkpoint", trained, "--out", results])
        assert run(["eval", "--manifest", f"{bench}/test_zeroshot.manifest",
                    "--results", results, "--zero-shot",
                    "--train-manifest", f"{bench}/train.manifest"]) == 0
        assert "pairs" in capsys.readouterr().out

    def test_train_writes_log(self, bench, tmp_path):
        ckpt = str(tmp_path / "logged.ckpt")
        log = str(tmp_path / "train.log")
        assert run(["train", "--manifest", f"{bench}/train.manifest",
                    "--checkpoint", ckpt, "--log", log] + FAST_TRAIN) == 0
        lines = open(log).read().splitlines()
        assert any(line.startswith("epoch 1 train ") for line in lines)
        assert any(" validation " in line for line in lines)


class TestAblationFlags:
    def test_no_msg_checkpoint_lacks_message_weights(self, bench, tmp_path):
        ckpt = tmp_path / "nomsg.ckpt"
        assert run(["train", "--manifest", f"{bench}/train.manifest",
                    "--checkpoint", str(ckpt), "--no-msg"] + FAST_TRAIN) == 0
        arrays = load_checkpoint(ckpt)
        assert "msg_subj_to_obj.W" not in arrays

    def test_no_clip_lowers_default_sigma(self, bench, tmp_path, capsys):
        ckpt = tmp_path / "noclip.ckpt"
        assert run(["train", "--manifest", f"{bench}/train.manifest",
                    "--checkpoint", str(ckpt), "--no-clip"] + FAST_TRAIN) == 0
        out = capsys.readouterr().out
        assert f"sigma {cli.NO_CLIP_SIGMA!r}" in out
        assert "clip_lstm.Wx" not in load_checkpoint(ckpt)

    def test_no_clip_explicit_sigma_kept(self, bench, tmp_path, capsys):
        ckpt = tmp_path / "noclip2.ckpt"
        assert run(["train", "--manifest", f"{bench}/train.manifest",
                    "--checkpoint", str(ckpt), "--no-clip",
                    "--sigma", "0.03"] + FAST_TRAIN) == 0
        assert "sigma 0.03" in capsys.readouterr().out

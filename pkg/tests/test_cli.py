import subprocess
import sys

import numpy as np
import pytest

from agzsl.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from agzsl.datamodel.bundle import read_arrays

TINY_FLAGS = ["--num-source", "3", "--num-target", "2", "--num-attributes", "5", "--num-regions", "3",
              "--feature-dim", "8", "--attr-dim", "4", "--samples-per-class", "8",
              "--active-attributes", "2"]
TINY_SETTINGS = ["batch_size=6", "m=4", "classifier_hidden=8", "z=4", "generator_hidden=8", "n_critic=2",
                 "features_per_class=20", "downstream_max_steps=50"]


def train_args(data, out, epochs=1):
    args = ["train", "--data", str(data), "--out", str(out), "--epochs", str(epochs)]
    for s in TINY_SETTINGS:
        args += ["--set", s]
    return args


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--out", str(root / "data")] + TINY_FLAGS) == EXIT_OK
    assert main(train_args(root / "data", root / "ckpt")) == EXIT_OK
    return root


class TestUsage:
    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == EXIT_USAGE
        assert "usage" in capsys.readouterr().err

    def test_no_subcommand(self):
        assert main([]) == EXIT_USAGE

    def test_bad_override(self, workspace):
        assert main(["train", "--data", str(workspace / "data"), "--out", str(workspace / "x"),
                     "--set", "no_such_key=1"]) == EXIT_USAGE

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "agzsl", "bogus"], capture_output=True, text=True)
        assert proc.returncode == EXIT_USAGE


class TestCommands:
    def test_gen_data_then_validate(self, workspace):
        assert main(["validate", str(workspace / "data")]) == EXIT_OK

    def test_train_writes_checkpoint_and_history(self, workspace):
        _, meta = read_arrays(workspace / "ckpt")
        assert meta["kind"] == "checkpoint"
        arrays, hmeta = read_arrays(workspace / "ckpt-history")
        assert arrays["history"].shape == (1, len(hmeta["columns"]))

    def test_resume_continues(self, workspace, tmp_path):
        out = tmp_path / "ck"
        assert main(train_args(workspace / "data", out, 1)) == EXIT_OK
        assert main(train_args(workspace / "data", out, 2) + ["--resume"]) == EXIT_OK
        _, meta = read_arrays(out)
        assert len(meta["history"]) == 2

    def test_eval_writes_reports(self, workspace, tmp_path, capsys):
        assert main(["eval", "--checkpoint", str(workspace / "ckpt"), "--data", str(workspace / "data"),
                     "--out", str(tmp_path)]) == EXIT_OK
        assert capsys.readouterr().out.count("H=") == 4
        text = (tmp_path / "AGAN-GZSL.txt").read_text()
        assert text.startswith("protocol = AGAN-GZSL\n")
        arrays, _ = read_arrays(tmp_path / "AFGN-ZSL-per-class")
        assert arrays["classes"].tolist() == [4, 5]

    def test_synth(self, workspace, tmp_path):
        assert main(["synth", "--checkpoint", str(workspace / "ckpt"), "--data", str(workspace / "data"),
                     "--out", str(tmp_path / "s"), "--per-class", "3"]) == EXIT_OK
        arrays, _ = read_arrays(tmp_path / "s")
        assert arrays["features"].shape == (15, 4)
        assert np.bincount(arrays["labels"]).tolist() == [0, 3, 3, 3, 3, 3]

    def test_pmi(self, workspace, tmp_path, capsys):
        assert main(["pmi", "--data", str(workspace / "data"), "--out", str(tmp_path / "p")]) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].split("\t") == ["source", "t4", "t5"] and len(lines) == 4
        arrays, _ = read_arrays(tmp_path / "p")
        assert arrays["pmi"].shape == (3, 2)

    def test_export_attn(self, workspace, tmp_path):
        assert main(["export-attn", "--checkpoint", str(workspace / "ckpt"), "--data",
                     str(workspace / "data"), "--out", str(tmp_path / "a"), "--limit", "2"]) == EXIT_OK
        assert (tmp_path / "a" / "attention.tsv").exists()


class TestDataErrors:
    def test_attribute_count_mismatch(self, workspace, tmp_path):
        other = TINY_FLAGS.copy()
        other[other.index("--num-attributes") + 1] = "6"
        assert main(["gen-data", "--out", str(tmp_path / "d6")] + other) == EXIT_OK
        assert main(["eval", "--checkpoint", str(workspace / "ckpt"), "--data", str(tmp_path / "d6")]) == EXIT_DATA

    def test_missing_bundle(self, tmp_path):
        assert main(["validate", str(tmp_path / "nothing")]) == EXIT_DATA

    def test_numerical_failure_exit_code(self, workspace, monkeypatch):
        from agzsl import cli
        from agzsl.numcore import NumericalError

        def explode(args):
            raise NumericalError("loss became NaN")

        monkeypatch.setitem(cli.COMMANDS, "validate", explode)
        assert main(["validate", str(workspace / "data")]) == EXIT_NUMERIC

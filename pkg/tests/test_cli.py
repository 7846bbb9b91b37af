"""End-to-end tests of the command-line surface through cli.main."""

import json

import pandas as pd
import pytest

from vhs2hd.cli import build_parser, main
from vhs2hd.trainer import latest_checkpoint

from tests.conftest import TINY_OVERRIDES, write_images


def tiny_args():
    args = ["--preset", "desk"]
    for item in TINY_OVERRIDES:
        args += ["--override", item]
    return args


@pytest.fixture
def prepared(image_dirs, tmp_path):
    x_dir, y_dir = image_dirs
    out = tmp_path / "prepared"
    code = main(["prepare", "--x-dir", str(x_dir), "--y-dir", str(y_dir), "--out", str(out), "--train-frac", "0.5"])
    assert code == 0
    return out


@pytest.fixture
def run_dir(prepared, tmp_path):
    run = tmp_path / "run"
    code = main(["train", "--manifest", str(prepared / "manifest.json"), "--run-dir", str(run)] + tiny_args())
    assert code == 0
    return run


class TestParser:
    """Tests for argument parsing and usage errors."""

    def test_help(self, capsys):
        with pytest.raises(SystemExit) as info:
            build_parser().parse_args(["--help"])
        assert info.value.code == 0
        assert "translate" in capsys.readouterr().out

    def test_no_command_is_usage_error(self):
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code == 1

    def test_unknown_preset(self):
        with pytest.raises(SystemExit) as info:
            main(["train", "--preset", "huge"])
        assert info.value.code == 1

    def test_bad_override(self, capsys):
        assert main(["train", "--override", "train.lr"]) == 1
        assert "key=value" in capsys.readouterr().err

    def test_unknown_override_key(self):
        assert main(["train", "--override", "no_such_field=1"]) == 1


class TestPrepare:
    """Tests for `vhs2hd prepare`."""

    def test_manifest_and_counts(self, image_dirs, tmp_path, capsys):
        x_dir, y_dir = image_dirs
        out = tmp_path / "prepared"
        code = main([
            "prepare", "--x-dir", str(x_dir), "--y-dir", str(y_dir),
            "--out", str(out), "--train-frac", "0.5", "--write-z",
        ])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "X: train=3 test=3" in stdout
        assert "Y: train=3 test=3" in stdout
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        assert len(manifest["domain_x_items"]) == 6
        assert (out / "config.json").is_file()
        assert len(list((out / "Z").iterdir())) == 6

    def test_missing_directory(self, tmp_path, capsys):
        code = main(["prepare", "--x-dir", str(tmp_path / "absent"), "--y-dir", str(tmp_path)])
        assert code == 1
        assert "--x-dir" in capsys.readouterr().err

    def test_empty_domain(self, tmp_path):
        write_images(tmp_path / "X", 2, 32, 32)
        (tmp_path / "Y").mkdir()
        code = main(["prepare", "--x-dir", str(tmp_path / "X"), "--y-dir", str(tmp_path / "Y")])
        assert code == 2


class TestTrainTranslateEvaluate:
    """A tiny run through train, translate, evaluate and grid."""

    def test_train_writes_run(self, run_dir):
        assert latest_checkpoint(run_dir).is_file()
        assert len((run_dir / "log.jsonl").read_text(encoding="utf-8").splitlines()) == 2
        config = json.loads((run_dir / "config.json").read_text(encoding="utf-8"))
        assert config["model"]["generator"]["depth"] == 2

    def test_resume_needs_run_dir(self, prepared):
        assert main(["train", "--manifest", str(prepared / "manifest.json"), "--resume"]) == 1

    def test_missing_manifest(self, tmp_path):
        assert main(["train", "--manifest", str(tmp_path / "absent.json")] + tiny_args()) == 1

    def test_translate_evaluate_grid(self, run_dir, image_dirs, tmp_path, capsys):
        x_dir, _ = image_dirs
        out = tmp_path / "ours"
        code = main([
            "translate", "--checkpoint", str(latest_checkpoint(run_dir)),
            "--input", str(x_dir), "--out", str(out), "--check-config",
        ] + tiny_args())
        assert code == 0
        assert sorted(p.name for p in out.glob("*.png")) == sorted(p.name for p in x_dir.glob("*.png"))

        report_dir = tmp_path / "report"
        code = main([
            "evaluate", "--dirs", str(x_dir), str(out), "--labels", "input", "ours",
            "--metric", "pique", "--out", str(report_dir),
        ])
        assert code == 0
        assert "lower is better" in capsys.readouterr().out
        cmp = pd.read_csv(report_dir / "comparison.csv")
        assert list(cmp["method"]) == ["input", "ours"]
        assert "piqe_mean" in cmp.columns
        assert (report_dir / "ours.csv").is_file()

        code = main(["grid", "--dirs", str(x_dir), str(out), "--labels", "VHS", "ours", "--out", str(tmp_path / "grid")])
        assert code == 0
        assert len(list((tmp_path / "grid").glob("*.png"))) == 6

    def test_translate_incompatible_config(self, run_dir, image_dirs, tmp_path):
        x_dir, _ = image_dirs
        code = main([
            "translate", "--checkpoint", str(latest_checkpoint(run_dir)),
            "--input", str(x_dir), "--out", str(tmp_path / "out"), "--check-config",
            "--preset", "desk",
        ])
        assert code == 2

    def test_translate_missing_checkpoint(self, image_dirs, tmp_path):
        x_dir, _ = image_dirs
        code = main(["translate", "--checkpoint", str(tmp_path / "c"), "--input", str(x_dir), "--out", str(tmp_path / "o")])
        assert code == 1


class TestEvaluateCli:
    """Usage errors of `vhs2hd evaluate` and `vhs2hd grid`."""

    def test_unknown_metric(self, image_dirs, tmp_path):
        x_dir, _ = image_dirs
        assert main(["evaluate", "--dirs", str(x_dir), "--metric", "niqe", "--out", str(tmp_path / "r")]) == 1

    def test_duplicate_labels(self, image_dirs, tmp_path):
        x_dir, y_dir = image_dirs
        code = main([
            "evaluate", "--dirs", str(x_dir), str(y_dir), "--labels", "a", "a",
            "--metric", "piqe", "--out", str(tmp_path / "r"),
        ])
        assert code == 1

    def test_grid_mismatch(self, image_dirs, tmp_path, capsys):
        x_dir, y_dir = image_dirs
        code = main(["grid", "--dirs", str(x_dir), str(y_dir), "--out", str(tmp_path / "g")])
        assert code == 2
        assert "vhs_000.png" in capsys.readouterr().err

    def test_grid_echoes_config(self, image_dirs, tmp_path):
        x_dir, _ = image_dirs
        out = tmp_path / "g"
        assert main(["grid", "--dirs", str(x_dir), str(x_dir), "--labels", "a", "b", "--out", str(out)] + tiny_args()) == 0
        config = json.loads((out / "config.json").read_text(encoding="utf-8"))
        assert config["model"]["generator"]["depth"] == 2
        assert len(list(out.glob("*.png"))) == 6


class TestDirectionCheck:
    """After the desk-preset run, translated frames score no worse on PIQE than their degraded inputs."""

    @pytest.mark.slow
    def test_translated_piqe_not_worse(self, tmp_path):
        x_dir = tmp_path / "data" / "X"
        y_dir = tmp_path / "data" / "Y"
        write_images(x_dir, 6, 64, 64, seed=300, prefix="vhs")
        write_images(y_dir, 6, 64, 64, seed=400, prefix="hdtv")
        prepared = tmp_path / "prepared"
        assert main(["prepare", "--x-dir", str(x_dir), "--y-dir", str(y_dir), "--out", str(prepared), "--write-z"]) == 0

        run = tmp_path / "run"
        assert main(["train", "--manifest", str(prepared / "manifest.json"), "--run-dir", str(run), "--preset", "desk"]) == 0

        degraded = prepared / "Z"
        translated = tmp_path / "translated"
        code = main([
            "translate", "--checkpoint", str(latest_checkpoint(run)),
            "--input", str(degraded), "--out", str(translated), "--preset", "desk",
        ])
        assert code == 0

        report_dir = tmp_path / "report"
        code = main([
            "evaluate", "--dirs", str(degraded), str(translated), "--labels", "degraded", "translated",
            "--metric", "piqe", "--out", str(report_dir),
        ])
        assert code == 0
        cmp = pd.read_csv(report_dir / "comparison.csv").set_index("method")
        assert cmp.loc["translated", "piqe_mean"] <= cmp.loc["degraded", "piqe_mean"]

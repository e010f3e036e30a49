"""Command-line surface: subcommands, artifacts and exit codes."""

import json
import os

import pandas as pd
import pytest

import cli
from backbone import BackboneConfig
from training import AnticipationFramework, save_checkpoint


def _read(path):
    with open(path, encoding="utf-8") as f:
        return f.read()


@pytest.fixture
def trained(tmp_path, experiment_file):
    """A finished baseline run: (config path, run dir, a fully-labelled video id)."""
    config = experiment_file()
    out = str(tmp_path / "train")
    assert cli.main(["--config", config, "--out", out, "train"]) == cli.EXIT_OK
    with open(os.path.join(out, "split.json"), encoding="utf-8") as f:
        video_id = json.load(f)["full_ids"][0]
    return config, out, video_id


class TestGenerate:
    def test_manifest_and_determinism(self, tmp_path, experiment_file):
        config = experiment_file()
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        assert cli.main(["--config", config, "--out", a, "generate"]) == cli.EXIT_OK
        assert cli.main(["--config", config, "--out", b, "generate"]) == cli.EXIT_OK
        with open(os.path.join(a, "manifest.json"), encoding="utf-8") as f:
            entries = json.load(f)
        assert len(entries) == 20
        first = entries[0]["path"]
        assert _read(os.path.join(a, first)) == _read(os.path.join(b, first))
        assert os.path.exists(os.path.join(a, "corpus_summary.json"))


class TestTrain:
    def test_artifacts(self, trained):
        _, out, _ = trained
        for name in ("config.json", "losses.csv", "access.csv", "metrics.json", "split.json", "run.json",
                     os.path.join("checkpoints", "phase1.ckpt")):
            assert os.path.exists(os.path.join(out, name)), name
        metrics = json.loads(_read(os.path.join(out, "metrics.json")))
        assert 0.0 <= metrics["moc"] <= 1.0

    def test_reruns_are_identical(self, tmp_path, trained):
        config, out, _ = trained
        again = str(tmp_path / "again")
        assert cli.main(["--config", config, "--out", again, "train"]) == cli.EXIT_OK
        for name in ("losses.csv", "metrics.json", "split.json"):
            assert _read(os.path.join(out, name)) == _read(os.path.join(again, name))

    def test_seed_override(self, tmp_path, experiment_file):
        out = str(tmp_path / "seeded")
        assert cli.main(["--config", experiment_file(), "--seed", "3", "--out", out, "train"]) == cli.EXIT_OK
        cfg = json.loads(_read(os.path.join(out, "config.json")))
        assert cfg["training"]["seed"] == 3
        assert cfg["dataset"]["split"]["seed"] == 3


class TestEval:
    def test_grid(self, tmp_path, trained):
        config, out, _ = trained
        ev = str(tmp_path / "eval")
        ckpt = os.path.join(out, "checkpoints", "phase1.ckpt")
        assert cli.main(["--config", config, "--out", ev, "eval", "--checkpoint", ckpt]) == cli.EXIT_OK
        reports = json.loads(_read(os.path.join(ev, "metrics.json")))
        assert len(reports) == 8
        grid = pd.read_csv(os.path.join(ev, "moc_grid.csv"))
        assert list(grid.columns) == ["observed", "0.1", "0.2", "0.3", "0.5"]

    def test_custom_cells(self, tmp_path, trained):
        config, out, _ = trained
        ev = str(tmp_path / "eval")
        ckpt = os.path.join(out, "checkpoints", "phase1.ckpt")
        argv = ["--config", config, "--out", ev, "eval", "--checkpoint", ckpt, "--observed", "0.3", "--predicted", "0.2"]
        assert cli.main(argv) == cli.EXIT_OK
        assert len(json.loads(_read(os.path.join(ev, "metrics.json")))) == 1

    def test_missing_checkpoint(self, tmp_path, experiment_file):
        argv = ["--config", experiment_file(), "--out", str(tmp_path / "e"), "eval",
                "--checkpoint", str(tmp_path / "nope.ckpt")]
        assert cli.main(argv) == cli.EXIT_IO

    def test_checkpoint_for_other_dimensions(self, tmp_path, experiment_file):
        ckpt = str(tmp_path / "other.ckpt")
        fw = AnticipationFramework(BackboneConfig(feature_dim=9, n_classes=4, hidden_dim=8, embedding_dim=3))
        save_checkpoint(ckpt, fw, "baseline2", "phase1")
        argv = ["--config", experiment_file(), "--out", str(tmp_path / "e"), "eval", "--checkpoint", ckpt]
        assert cli.main(argv) == cli.EXIT_CONFIG


class TestExports:
    def test_attention(self, tmp_path, trained):
        config, out, video_id = trained
        exp = str(tmp_path / "exp")
        ckpt = os.path.join(out, "checkpoints", "phase1.ckpt")
        argv = ["--config", config, "--out", exp, "export-attention", "--checkpoint", ckpt, "--video-id", video_id]
        assert cli.main(argv) == cli.EXIT_OK
        df = pd.read_csv(os.path.join(exp, f"attention_{video_id}.csv"))
        frames = df[[c for c in df.columns if c.startswith("frame_")]]
        assert frames.sum(axis=1).round(9).eq(1.0).all()
        assert os.path.exists(os.path.join(exp, f"attention_{video_id}_pooled.csv"))

    def test_attention_needs_the_attention_head(self, tmp_path, experiment_file):
        ckpt = str(tmp_path / "plain.ckpt")
        fw = AnticipationFramework(BackboneConfig(feature_dim=6, n_classes=4, hidden_dim=8, embedding_dim=3,
                                                  max_steps=4, attention=False))
        save_checkpoint(ckpt, fw, "baseline2", "phase1")
        argv = ["--config", experiment_file(), "--out", str(tmp_path / "x"), "export-attention",
                "--checkpoint", ckpt, "--video-id", "vid00000"]
        assert cli.main(argv) == cli.EXIT_CONFIG

    def test_segments(self, tmp_path, trained):
        config, out, video_id = trained
        exp = str(tmp_path / "exp")
        ckpt = os.path.join(out, "checkpoints", "phase1.ckpt")
        argv = ["--config", config, "--out", exp, "export-segments", "--checkpoint", ckpt, "--video-id", video_id]
        assert cli.main(argv) == cli.EXIT_OK
        df = pd.read_csv(os.path.join(exp, f"segments_{video_id}.csv"))
        assert set(df["track"]) == {"gt", "pred"}
        for _, track in df.groupby("track"):
            assert track["start_fraction"].iloc[0] == pytest.approx(0.3)
            assert track["end_fraction"].iloc[-1] == pytest.approx(0.5)

    def test_unknown_video(self, tmp_path, trained):
        config, out, _ = trained
        ckpt = os.path.join(out, "checkpoints", "phase1.ckpt")
        argv = ["--config", config, "--out", str(tmp_path / "x"), "export-segments", "--checkpoint", ckpt,
                "--video-id", "missing"]
        assert cli.main(argv) == cli.EXIT_CONFIG


class TestSweeps:
    def test_seed_sweep(self, tmp_path, experiment_file):
        out = str(tmp_path / "sweep")
        assert cli.main(["--config", experiment_file(), "--out", out, "sweep-seeds", "--n-seeds", "2"]) == cli.EXIT_OK
        assert len(pd.read_csv(os.path.join(out, "sweep.csv"))) == 2
        summary = json.loads(_read(os.path.join(out, "sweep_summary.json")))
        assert summary["n_seeds"] == 2

    def test_split_sweep(self, tmp_path, experiment_file):
        out = str(tmp_path / "split")
        argv = ["--config", experiment_file(), "--out", out, "sweep-split", "--fractions", "0.3", "0.5"]
        assert cli.main(argv) == cli.EXIT_OK
        df = pd.read_csv(os.path.join(out, "split_sweep.csv"))
        assert list(df["fraction"]) == [0.3, 0.5, 1.0]
        assert (df["n_seeds"] == 2).all()


class TestExitCodes:
    def test_unknown_key(self, tmp_path, experiment_file):
        argv = ["--config", experiment_file({"training": {"epochs": 3}}), "--out", str(tmp_path / "x"), "train"]
        assert cli.main(argv) == cli.EXIT_CONFIG

    def test_wrong_type(self, tmp_path, experiment_file):
        argv = ["--config", experiment_file({"dataset": {"n_videos": "ten"}}), "--out", str(tmp_path / "x"), "generate"]
        assert cli.main(argv) == cli.EXIT_CONFIG

    def test_malformed_feature_file(self, tmp_path, experiment_file):
        feats = tmp_path / "features"
        feats.mkdir()
        (feats / "v.txt").write_text("frames=2 dim=6 fps=1.0 classes=4\n0 0 0 0 0 0\n0 0\n0 1\n", encoding="utf-8")
        manifest = tmp_path / "manifest.json"
        manifest.write_text(json.dumps([{"id": "v", "path": "features/v.txt"}]), encoding="utf-8")
        argv = ["--config", experiment_file({"dataset": {"manifest": str(manifest)}}), "--out", str(tmp_path / "x"),
                "train"]
        assert cli.main(argv) == cli.EXIT_IO

    def test_missing_subcommand(self):
        with pytest.raises(SystemExit):
            cli.main([])

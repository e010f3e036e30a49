"""Feature files, manifests and split files."""

import json

import numpy as np
import pytest

import parsing
from parsing import FeatureFileError


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestFeatureFiles:
    def test_round_trip_is_exact(self, tmp_path, tiny_corpus):
        sample = tiny_corpus[0]
        path = str(tmp_path / "v.txt")
        parsing.write_feature_file(path, sample, n_classes=4)
        back = parsing.ingest_features(path, video_id=sample.id)
        np.testing.assert_array_equal(back.features, sample.features)
        np.testing.assert_array_equal(back.frame_labels, sample.frame_labels)
        assert back.fps == sample.fps
        assert back.id == sample.id

    def test_id_defaults_to_file_stem(self, tmp_path):
        path = _write(tmp_path / "clip7.txt", "frames=2 dim=1 fps=2.0 classes=2\n0.5\n1.5\n0 1\n")
        sample = parsing.ingest_features(path)
        assert sample.id == "clip7"
        assert sample.seconds == 1.0

    def test_short_row_names_its_line(self, tmp_path):
        path = _write(tmp_path / "bad.txt", "frames=3 dim=2 fps=1.0 classes=4\n0.1 0.2\n0.3\n0.5 0.6\n0 1 1\n")
        with pytest.raises(FeatureFileError) as err:
            parsing.ingest_features(path)
        assert err.value.line == 3
        assert f"{path}:3" in str(err.value)

    def test_label_count_mismatch(self, tmp_path):
        path = _write(tmp_path / "bad.txt", "frames=2 dim=1 fps=1.0 classes=2\n0.1\n0.2\n0 1 1\n")
        with pytest.raises(FeatureFileError) as err:
            parsing.ingest_features(path)
        assert err.value.line == 4

    def test_label_out_of_range(self, tmp_path):
        path = _write(tmp_path / "bad.txt", "frames=2 dim=1 fps=1.0 classes=2\n0.1\n0.2\n0 2\n")
        with pytest.raises(FeatureFileError, match="labels"):
            parsing.ingest_features(path)

    def test_missing_header_field(self, tmp_path):
        path = _write(tmp_path / "bad.txt", "frames=2 dim=1 classes=2\n0.1\n0.2\n0 1\n")
        with pytest.raises(FeatureFileError, match="fps") as err:
            parsing.ingest_features(path)
        assert err.value.line == 1

    def test_non_numeric_value(self, tmp_path):
        path = _write(tmp_path / "bad.txt", "frames=2 dim=1 fps=1.0 classes=2\n0.1\nabc\n0 1\n")
        with pytest.raises(FeatureFileError) as err:
            parsing.ingest_features(path)
        assert err.value.line == 3

    def test_consistent_rows_wider_than_header(self, tmp_path):
        path = _write(tmp_path / "bad.txt", "frames=2 dim=2 fps=1.0 classes=2\n0.1 0.2 0.3\n0.4 0.5 0.6\n0 1\n")
        with pytest.raises(FeatureFileError, match="dim=2") as err:
            parsing.ingest_features(path)
        assert err.value.line == 2

    def test_blank_feature_row(self, tmp_path):
        path = _write(tmp_path / "bad.txt", "frames=3 dim=1 fps=1.0 classes=2\n0.1\n\n0.3\n0 1 1\n")
        with pytest.raises(FeatureFileError) as err:
            parsing.ingest_features(path)
        assert err.value.line == 3

    def test_non_finite_value(self, tmp_path):
        path = _write(tmp_path / "bad.txt", "frames=2 dim=1 fps=1.0 classes=2\n0.1\nnan\n0 1\n")
        with pytest.raises(FeatureFileError, match="non-finite") as err:
            parsing.ingest_features(path)
        assert err.value.line == 3

    def test_truncated_file(self, tmp_path):
        path = _write(tmp_path / "bad.txt", "frames=3 dim=1 fps=1.0 classes=2\n0.1\n")
        with pytest.raises(FeatureFileError, match="expected 5 lines"):
            parsing.ingest_features(path)


class TestManifest:
    def test_corpus_round_trip(self, tmp_path, tiny_corpus):
        manifest = parsing.write_corpus(str(tmp_path), tiny_corpus[:4], n_classes=4)
        loaded = parsing.load_corpus(manifest)
        assert [s.id for s in loaded] == [s.id for s in tiny_corpus[:4]]
        for a, b in zip(loaded, tiny_corpus):
            np.testing.assert_array_equal(a.features, b.features)

    def test_duplicate_ids(self, tmp_path):
        path = _write(tmp_path / "manifest.json", json.dumps([{"id": "a", "path": "x"}, {"id": "a", "path": "y"}]))
        with pytest.raises(FeatureFileError, match="duplicate"):
            parsing.read_manifest(path)

    def test_malformed_manifest(self, tmp_path):
        path = _write(tmp_path / "manifest.json", '{"id": "a"}')
        with pytest.raises(FeatureFileError):
            parsing.read_manifest(path)

    def test_invalid_json_reports_line(self, tmp_path):
        path = _write(tmp_path / "manifest.json", '[\n{"id": "a",\n')
        with pytest.raises(FeatureFileError) as err:
            parsing.read_manifest(path)
        assert err.value.line is not None


class TestSplitFiles:
    def test_round_trip(self, tmp_path, tiny_split):
        full, weak = tiny_split
        path = str(tmp_path / "split.json")
        parsing.write_split(path, 3, full, weak)
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
        assert data["seed"] == 3
        assert data["full_ids"] == [s.id for s in full]
        assert data["weak_ids"] == [s.id for s in weak]

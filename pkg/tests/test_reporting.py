"""Report tables and plot exports."""

import json
import math

import numpy as np
import pandas as pd
import pytest

import reporting
from backbone import AnticipatedSequence, AnticipatedStep
from dataset import AccessLog, ActionSegment, WindowedSample
from evaluation import MetricReport, SweepResult

from conftest import sample_from_labels


def _seq(labels, durations, attn=None):
    steps = []
    for i, (c, d) in enumerate(zip(labels, durations)):
        dist = np.full(4, 0.1)
        dist[c] = 0.7
        steps.append(AnticipatedStep(dist, d, None if attn is None else np.asarray(attn[i], dtype=float)))
    return AnticipatedSequence(steps, "horizon-covered")


def _window(segments, horizon=0.2):
    return WindowedSample(
        id="v", observed_features=np.zeros((3, 2)), target_segments=tuple(ActionSegment(c, d) for c, d in segments),
        weak_label=segments[0][0], horizon_fraction=horizon, horizon_frames=4, observed_frames=3, total_frames=10,
    )


class TestLossTables:
    def test_column_order(self):
        rows = [{"grad_norm": 1.0, "total": 2.0, "epoch": 1, "phase": "phase1", "label_full": 2.0, "extra": 0}]
        df = reporting.losses_frame(rows)
        assert list(df.columns) == ["phase", "epoch", "label_full", "total", "grad_norm", "extra"]

    def test_missing_terms_are_nan(self):
        df = reporting.losses_frame([{"phase": "p", "epoch": 1, "label_full": 1.0},
                                     {"phase": "p", "epoch": 2, "label_weak_c1": 0.5}])
        assert math.isnan(df.loc[0, "label_weak_c1"])
        assert math.isnan(df.loc[1, "label_full"])

    def test_empty(self):
        df = reporting.losses_frame([])
        assert df.empty
        assert list(df.columns) == reporting.PREFERRED_COLUMN_ORDER

    def test_access_rows_sorted(self):
        log = AccessLog()
        w = _window([(1, 0.2)])
        log.weak_label(w)
        log.targets(w)
        df = reporting.access_frame(log)
        assert df.to_dict("records") == [{"sample_id": "v", "field": "target_segments"},
                                         {"sample_id": "v", "field": "weak_label"}]


class TestMetricTables:
    def test_moc_grid(self):
        reports = [MetricReport(moc=0.1 * i, observed=X, predicted=Y)
                   for i, (X, Y) in enumerate([(0.2, 0.1), (0.2, 0.5), (0.3, 0.1), (0.3, 0.5)])]
        grid = reporting.moc_grid(reports)
        assert list(grid.columns) == ["observed", "0.1", "0.5"]
        assert grid["observed"].tolist() == [0.2, 0.3]
        assert grid["0.5"].tolist() == pytest.approx([0.1, 0.3])

    def test_moc_grid_empty(self):
        assert reporting.moc_grid([]).empty

    def test_split_sweep_sorted(self):
        rows = [
            {"fraction": 1.0, "mode": "baseline1", "moc_mean": 0.4, "moc_std": 0.02, "n_seeds": 3},
            {"fraction": 0.3, "mode": "adaptive", "moc_mean": 0.2, "moc_std": 0.05, "n_seeds": 3},
        ]
        df = reporting.split_sweep_frame(rows)
        assert df["fraction"].tolist() == [0.3, 1.0]
        assert list(df.columns) == ["fraction", "mode", "moc_mean", "moc_std", "n_seeds"]

    def test_sweep_summary_serialises(self, tmp_path):
        result = SweepResult(runs=pd.DataFrame({"seed": [0, 1], "moc": [0.2, 0.3]}), mean={"moc": 0.25},
                             std={"moc": 0.0707})
        path = reporting.write_json(str(tmp_path / "deep" / "summary.json"), reporting.sweep_summary(result))
        with open(path, encoding="utf-8") as f:
            assert json.load(f) == {"n_seeds": 2, "mean": {"moc": 0.25}, "std": {"moc": 0.0707}}


class TestCorpusSummary:
    def test_counts(self):
        corpus = [sample_from_labels([0, 0, 1, 1], vid="a"), sample_from_labels([2, 2, 2, 2, 3, 3], vid="b")]
        summary = reporting.corpus_summary(corpus)
        assert summary["n_videos"] == 2
        assert summary["n_classes_seen"] == 4
        assert summary["mean_seconds"] == pytest.approx(5.0)
        assert summary["std_seconds"] == pytest.approx(math.sqrt(2.0))
        assert summary["mean_segments"] == pytest.approx(2.0)

    def test_single_and_empty(self):
        assert reporting.corpus_summary([]) == {"n_videos": 0}
        assert reporting.corpus_summary([sample_from_labels([1, 1])])["std_seconds"] == 0.0


class TestAttentionExport:
    def test_matrix_layout(self):
        seq = _seq([2, 0], [0.1, 0.1], attn=[[0.5, 0.25, 0.25], [0.0, 0.0, 1.0]])
        df = reporting.attention_frame(seq)
        assert list(df.columns) == ["step", "class_id", "frame_0", "frame_1", "frame_2"]
        assert df["class_id"].tolist() == [2, 0]

    def test_requires_weights(self):
        with pytest.raises(ValueError):
            reporting.attention_frame(_seq([1], [0.2]))
        with pytest.raises(ValueError):
            reporting.attention_frame(AnticipatedSequence())

    def test_pooled_by_segment(self):
        seq = _seq([2, 0], [0.1, 0.1], attn=[[0.5, 0.25, 0.25], [0.0, 0.0, 1.0]])
        pooled = reporting.pooled_attention(reporting.attention_frame(seq), [3, 1, 1])
        assert list(pooled.columns) == ["step", "class_id", "seg0_class3", "seg1_class1"]
        np.testing.assert_allclose(pooled["seg0_class3"], [0.5, 0.0])
        np.testing.assert_allclose(pooled["seg1_class1"], [0.25, 0.5])

    def test_pooled_length_mismatch(self):
        seq = _seq([2], [0.1], attn=[[0.5, 0.5]])
        with pytest.raises(ValueError):
            reporting.pooled_attention(reporting.attention_frame(seq), [0, 0, 1])


class TestSegmentsExport:
    def test_tracks_span_the_horizon(self):
        window = _window([(1, 0.05), (2, 0.15)])
        seq = _seq([1, 3, 0], [0.1, 0.05, 0.3])
        df = reporting.segments_frame(window, seq, 0.3, ["a", "b", "c", "d"])
        for track, rows in df.groupby("track"):
            assert rows["start_fraction"].iloc[0] == pytest.approx(0.3)
            assert rows["end_fraction"].iloc[-1] == pytest.approx(0.5)
            np.testing.assert_allclose(rows["start_fraction"].iloc[1:], rows["end_fraction"].iloc[:-1])
        pred = df[df["track"] == "pred"]
        assert pred["class"].tolist() == ["b", "d", "a"]

    def test_weak_window_rejected(self):
        window = _window([(1, 0.2)]).strip()
        with pytest.raises(ValueError):
            reporting.segments_frame(window, _seq([1], [0.2]), 0.3)

"""Shared fixtures: tiny grammars, corpora and micro anticipators."""

import json

import numpy as np
import pytest

import dataset
from backbone import Anticipator, BackboneConfig
from dataset import DatasetConfig, SplitSpec, VideoSample
from training import TrainConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def micro_cfg():
    """d_h=8, K=4, M=3."""
    return BackboneConfig(feature_dim=6, n_classes=4, hidden_dim=8, embedding_dim=3, max_steps=3)


@pytest.fixture
def micro_model(micro_cfg):
    return Anticipator(micro_cfg, np.random.default_rng(7), "primary")


@pytest.fixture
def micro_cond(micro_cfg):
    return Anticipator(micro_cfg, np.random.default_rng(8), "conditional", conditional=True)


@pytest.fixture
def tiny_dataset_cfg():
    return DatasetConfig(
        n_videos=24,
        n_classes=4,
        feature_dim=6,
        mean_segments=4.0,
        segment_seconds=6.0,
        test_fraction=0.25,
        split=SplitSpec(full_fraction=0.25, seed=3),
    )


@pytest.fixture
def tiny_corpus(tiny_dataset_cfg):
    ds = tiny_dataset_cfg
    return dataset.generate_corpus(ds.vocabulary(), ds.grammar(), ds.n_videos, ds.corpus_seed)


@pytest.fixture
def tiny_split(tiny_corpus, tiny_dataset_cfg):
    return dataset.split_full_weak(tiny_corpus, tiny_dataset_cfg.split)


@pytest.fixture
def tiny_backbone(tiny_dataset_cfg):
    return BackboneConfig(feature_dim=6, n_classes=4, hidden_dim=8, embedding_dim=3, max_steps=4)


@pytest.fixture
def quick_train():
    def make(mode="linear", **kwargs):
        base = dict(mode=mode, n1=1, n2=1, n3=1, baseline_epochs=1, batch_size=4, learning_rate=0.05,
                    val_fraction=0.0, seed=5)
        base.update(kwargs)
        return TrainConfig(**base)
    return make


def sample_from_labels(labels, feature_dim=2, vid="v"):
    labels = np.asarray(labels)
    return VideoSample(id=vid, features=np.zeros((len(labels), feature_dim)), frame_labels=labels)


TINY_EXPERIMENT = {
    "dataset": {
        "n_videos": 20,
        "n_classes": 4,
        "feature_dim": 6,
        "mean_segments": 4.0,
        "segment_seconds": 8.0,
        "test_fraction": 0.25,
        "split": {"full_fraction": 0.3},
    },
    "model": {"hidden_dim": 8, "embedding_dim": 3, "max_steps": 4},
    "training": {"mode": "baseline2", "baseline_epochs": 1, "batch_size": 4, "learning_rate": 0.05},
    "evaluation": {"n_seeds": 2},
}


@pytest.fixture
def experiment_dict():
    return json.loads(json.dumps(TINY_EXPERIMENT))


@pytest.fixture
def experiment_file(tmp_path, experiment_dict):
    def write(overrides=None, name="experiment.json"):
        data = experiment_dict
        for block, values in (overrides or {}).items():
            data.setdefault(block, {}).update(values)
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return str(path)
    return write

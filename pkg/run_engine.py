"""
run_engine.py
Controller logic for experiment runs.
Acts as the bridge between the CLI, corpus preparation, the training
algorithms and the report writers.
"""

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from functools import partial
from typing import Any, Callable, Optional, Sequence

from pydantic import with_config

import dataset
import parsing
import reporting
import training
from backbone import BackboneConfig, ModelConfig
from config import CONFIG_BLOCK, SCHEMA_VERSION, ConfigError, config, from_dict, to_dict
from dataset import DatasetConfig, SplitSpec, VideoSample
from evaluation import EvaluationConfig, MetricReport, SweepResult, evaluate, seed_sweep
from training import RunRecord, TrainConfig


# ------------------------------------------------------------
# Experiment Config
# ------------------------------------------------------------

@with_config(CONFIG_BLOCK)
@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema version {self.schema_version}, expected {SCHEMA_VERSION}",
                              "schema_version")
        # Build once so dimension problems surface before any work.
        self.backbone()

    def backbone(self) -> BackboneConfig:
        return self.model.backbone(self.dataset.feature_dim, self.dataset.n_classes)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Override the training seed and the full/weak split seed."""
        split = dataclasses.replace(self.dataset.split, seed=seed)
        return dataclasses.replace(
            self,
            dataset=dataclasses.replace(self.dataset, split=split),
            training=dataclasses.replace(self.training, seed=seed),
        )

    def with_mode(self, mode: str, full_fraction: Optional[float] = None) -> "ExperimentConfig":
        """Switch training mode; epoch counts fall back to the new mode's defaults."""
        train = dataclasses.replace(self.training, mode=mode, n1=None, n2=None, n3=None)
        ds = self.dataset
        if full_fraction is not None:
            ds = dataclasses.replace(ds, split=dataclasses.replace(ds.split, full_fraction=full_fraction))
        return dataclasses.replace(self, dataset=ds, training=train)

    def to_dict(self) -> dict[str, Any]:
        return to_dict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]


def load_experiment(path: Optional[str]) -> ExperimentConfig:
    """
    Read and fully validate an experiment JSON file. Without a path the
    app-level default experiment is used, then the built-in defaults.
    """
    if path is None:
        path = config.default_experiment or None
    if path is None:
        return ExperimentConfig()
    logging.info(f"Loading experiment from {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path} is not valid JSON (line {e.lineno}: {e.msg})")
    return from_dict(ExperimentConfig, data)


# ------------------------------------------------------------
# Corpus
# ------------------------------------------------------------

def build_corpus(ds: DatasetConfig) -> list[VideoSample]:
    """Ingest the manifest when one is configured, otherwise generate from the grammar."""
    if ds.manifest:
        corpus = parsing.load_corpus(ds.manifest)
        for s in corpus:
            if s.features.shape[1] != ds.feature_dim:
                raise ConfigError(f"{s.id} has {s.features.shape[1]}-dim features", "dataset.feature_dim")
            if int(s.frame_labels.max()) >= ds.n_classes:
                raise ConfigError(f"{s.id} uses class {int(s.frame_labels.max())}", "dataset.n_classes")
        return corpus
    return dataset.generate_corpus(ds.vocabulary(), ds.grammar(), ds.n_videos, ds.corpus_seed)


def partition(corpus: Sequence[VideoSample], ds: DatasetConfig) -> tuple[list[VideoSample], list[VideoSample]]:
    """Fixed train/test partition; independent of the full/weak split seed."""
    return dataset.split_train_test(corpus, ds.test_fraction, ds.corpus_seed)


# ------------------------------------------------------------
# Engine
# ------------------------------------------------------------

class RunEngine:
    """
    Encapsulates run orchestration: mode dispatch, evaluation and artifacts.
    """

    def __init__(self) -> None:
        self._handlers = {
            "linear": {
                "func": training.train_linear,
                "kwargs": {},
                "status": "Linear refinement run complete.",
            },
            "pseudo": {
                "func": training.train_linear,
                "kwargs": {},
                "status": "No-refinement pseudo-label run complete.",
            },
            "adaptive": {
                "func": training.train_adaptive,
                "kwargs": {},
                "status": "Adaptive refinement run complete.",
            },
            "baseline1": {
                # Every training video is fully labelled
                "func": partial(training.train_baseline, 1),
                "kwargs": {},
                "full_fraction": 1.0,
                "status": "Baseline 1 (fully supervised) run complete.",
            },
            "baseline2": {
                "func": partial(training.train_baseline, 2),
                "kwargs": {},
                "status": "Baseline 2 (F only) run complete.",
            },
            "baseline3": {
                "func": partial(training.train_baseline, 3),
                "kwargs": {},
                "status": "Baseline 3 (F + weak labels) run complete.",
            },
        }

    def get_status(self, mode: str) -> str:
        return self._handlers.get(mode, {}).get("status", "Run complete.")

    def split_for(self, experiment: ExperimentConfig) -> SplitSpec:
        handler = self._handlers[experiment.training.mode]
        split = experiment.dataset.split
        if "full_fraction" in handler:
            split = dataclasses.replace(split, full_fraction=handler["full_fraction"])
        return split

    def run(
        self,
        experiment: ExperimentConfig,
        out_dir: Optional[str] = None,
        corpus: Optional[Sequence[VideoSample]] = None,
        progress_callback: Optional[Callable] = None,
        is_cancelled: Optional[Callable] = None,
    ) -> RunRecord:
        """
        Master orchestration method.
        """
        mode = experiment.training.mode
        handler = self._handlers.get(mode)
        if not handler:
            raise ConfigError(f"unknown training mode '{mode}'", "training.mode")
        logging.info(f"Run Requested: Mode='{mode}' | Seed={experiment.training.seed} | Out={out_dir or '-'}")

        # --------------------------------------------------------
        # 1. Corpus & Splits
        # --------------------------------------------------------
        if corpus is None:
            corpus = build_corpus(experiment.dataset)
        train_videos, test_videos = partition(corpus, experiment.dataset)
        split = self.split_for(experiment)
        full, weak = dataset.split_full_weak(train_videos, split)

        # --------------------------------------------------------
        # 2. Training
        # --------------------------------------------------------
        record = handler["func"](
            full, weak, experiment.training, experiment.backbone(),
            out_dir=out_dir, progress_callback=progress_callback, is_cancelled=is_cancelled,
            **handler["kwargs"],
        )

        # --------------------------------------------------------
        # 3. Evaluation on the held-out partition
        # --------------------------------------------------------
        test = dataset.window_all(test_videos, split.observed_fraction, split.predicted_fraction)
        if test and not record.cancelled:
            record.metrics = evaluate(
                record.framework.primary, test, seed=experiment.training.seed,
                config_hash=experiment.digest(), max_steps=experiment.evaluation.accuracy_steps,
            )
            logging.info(f"Test MoC ({len(test)} videos): {record.metrics.moc:.4f}")
        elif not test:
            logging.warning("Test partition is empty; no metrics computed.")

        # --------------------------------------------------------
        # 4. Artifacts
        # --------------------------------------------------------
        if out_dir:
            self.write_artifacts(out_dir, experiment, record, split, full, weak)

        logging.info(self.get_status(mode))
        return record

    def write_artifacts(self, out_dir: str, experiment: ExperimentConfig, record: RunRecord,
                        split: SplitSpec, full, weak) -> None:
        os.makedirs(out_dir, exist_ok=True)
        reporting.write_json(os.path.join(out_dir, "config.json"), experiment.to_dict())
        reporting.write_csv(os.path.join(out_dir, "losses.csv"), reporting.losses_frame(record.losses))
        reporting.write_csv(os.path.join(out_dir, "access.csv"), reporting.access_frame(record.access))
        parsing.write_split(os.path.join(out_dir, "split.json"), split.seed, full, weak)
        if record.metrics is not None:
            m = record.metrics
            reporting.write_json(os.path.join(out_dir, "metrics.json"), {
                "moc": m.moc,
                "per_step_accuracy": m.per_step_accuracy,
                "n_videos": m.n_videos,
                "seed": m.seed,
                "config_hash": m.config_hash,
            })
        if record.pseudo_labels:
            items = [(vid, pl.aligned(pl.n_cover)) for vid, pl in sorted(record.pseudo_labels.items())]
            reporting.write_pseudo_labels(os.path.join(out_dir, "pseudo_labels.json"), items)
        reporting.write_json(os.path.join(out_dir, "run.json"), {
            "mode": record.mode,
            "checkpoints": [os.path.relpath(p, out_dir) for p in record.checkpoints],
            "skipped_phases": record.skipped_phases,
            "best_val_moc": record.best_val_moc,
            "substitution_checks": record.substitution_checks,
            "substitution_violations": record.substitution_violations,
            "cancelled": record.cancelled,
            "wall_clock": record.wall_clock,
        })
        logging.info(f"Run artifacts written to {out_dir}")


# ------------------------------------------------------------
# Grids & Sweeps
# ------------------------------------------------------------

def evaluate_grid(framework: training.AnticipationFramework, videos: Sequence[VideoSample],
                  ev: EvaluationConfig, seed: int = 0, config_hash: str = "") -> list[MetricReport]:
    """One MetricReport per (observed, predicted) cell that has evaluable videos."""
    reports = []
    for X in ev.observed:
        for Y in ev.predicted:
            windows = dataset.window_all(videos, X, Y)
            if not windows:
                logging.warning(f"No evaluable videos at observed={X}, predicted={Y}")
                continue
            rep = evaluate(framework.primary, windows, seed=seed, config_hash=config_hash,
                           max_steps=ev.accuracy_steps)
            rep.observed, rep.predicted = X, Y
            reports.append(rep)
    return reports


def seed_run(experiment: ExperimentConfig, seed: int,
             corpus: Optional[Sequence[VideoSample]] = None) -> MetricReport:
    """Train and evaluate one seed; module-level so worker processes can pickle it."""
    record = RunEngine().run(experiment.with_seed(seed), corpus=corpus)
    if record.metrics is None:
        raise ConfigError("seed run produced no metrics (empty test partition)", "dataset.test_fraction")
    return record.metrics


def run_seed_sweep(experiment: ExperimentConfig, n_seeds: Optional[int] = None,
                   workers: Optional[int] = None,
                   corpus: Optional[Sequence[VideoSample]] = None) -> SweepResult:
    ev = experiment.evaluation
    return seed_sweep(partial(seed_run, experiment, corpus=corpus), n_seeds=n_seeds or ev.n_seeds,
                      workers=workers or ev.workers)


def _sweep_row(fraction: float, mode: str, result: SweepResult) -> dict:
    return {
        "fraction": fraction,
        "mode": mode,
        "moc_mean": result.mean["moc"],
        "moc_std": result.std["moc"],
        "n_seeds": int(len(result.runs)),
    }


def run_split_sweep(experiment: ExperimentConfig, fractions: Optional[Sequence[float]] = None,
                    corpus: Optional[Sequence[VideoSample]] = None,
                    n_seeds: Optional[int] = None, workers: Optional[int] = None) -> list[dict]:
    """
    Full model per fully-labelled fraction, plus the fully supervised reference
    row at 1.0. Every row is the MoC mean and std over a seed sweep.
    """
    fractions = list(fractions if fractions is not None else experiment.evaluation.split_fractions)
    for i, f in enumerate(fractions):
        if not 0.0 < f < 1.0:
            raise ConfigError("must lie in (0, 1)", f"evaluation.split_fractions[{i}]")
    if corpus is None:
        corpus = build_corpus(experiment.dataset)

    rows = []
    for f in fractions:
        exp_f = dataclasses.replace(
            experiment,
            dataset=dataclasses.replace(
                experiment.dataset, split=dataclasses.replace(experiment.dataset.split, full_fraction=f)
            ),
        )
        result = run_seed_sweep(exp_f, n_seeds, workers, corpus=corpus)
        rows.append(_sweep_row(f, exp_f.training.mode, result))
        logging.info(f"Split sweep f={f:g}: MoC {rows[-1]['moc_mean']:.4f} +- {rows[-1]['moc_std']:.4f}")

    # Reference row: fully supervised, no refinement.
    reference = experiment.with_mode("baseline1")
    rows.append(_sweep_row(1.0, "baseline1", run_seed_sweep(reference, n_seeds, workers, corpus=corpus)))
    return rows

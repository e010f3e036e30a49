"""
evaluation.py
Frame-wise scoring of anticipated sequences: segment expansion, mean over
classes (MoC), per-step action accuracy and multi-seed statistics.
"""

import logging
from dataclasses import asdict, dataclass, field
from multiprocessing import Pool
from typing import Callable, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import with_config

from backbone import Anticipator, anticipate
from config import CONFIG_BLOCK, ConfigError
from dataset import ActionSegment, WindowedSample

SegmentLike = Union[ActionSegment, tuple[int, float]]


# ------------------------------------------------------------
# Frame expansion & metrics
# ------------------------------------------------------------

def _as_pairs(segments: Sequence[SegmentLike]) -> list[tuple[int, float]]:
    out = []
    for seg in segments:
        if isinstance(seg, ActionSegment):
            out.append((seg.class_id, seg.duration))
        else:
            out.append((int(seg[0]), float(seg[1])))
    return out


def expand_to_frames(segments: Sequence[SegmentLike], horizon_frames: int) -> np.ndarray:
    """
    Lay segments out over exactly `horizon_frames` frames in proportion to
    their durations. Residual frames go to the largest fractional remainders
    (earlier segments win ties).
    """
    if horizon_frames <= 0:
        raise ValueError(f"horizon_frames must be positive, got {horizon_frames}")
    pairs = _as_pairs(segments)
    if not pairs:
        raise ValueError("cannot expand an empty segment list")
    durations = np.array([d for _, d in pairs], dtype=np.float64)
    if np.any(durations <= 0):
        raise ValueError("segment durations must be positive")

    quotas = durations / durations.sum() * horizon_frames
    counts = np.floor(quotas).astype(np.int64)
    residual = horizon_frames - int(counts.sum())
    if residual > 0:
        order = np.argsort(-(quotas - counts), kind="stable")
        counts[order[:residual]] += 1
    return np.repeat(np.array([c for c, _ in pairs], dtype=np.int64), counts)


def mean_over_classes(pred: Sequence[int], gt: Sequence[int]) -> float:
    """Per-class frame accuracy averaged over the classes present in gt."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction has {len(pred)} frames, ground truth {len(gt)}")
    if len(gt) == 0:
        raise ValueError("empty frame sequences")
    accs = [float(np.mean(pred[gt == c] == c)) for c in np.unique(gt)]
    return float(np.mean(accs))


def step_hits(pred_classes: Sequence[int], gt_classes: Sequence[int]) -> list[int]:
    """1/0 per ground-truth step: does the prediction at that step match."""
    return [int(m < len(pred_classes) and pred_classes[m] == g) for m, g in enumerate(gt_classes)]


def per_step_accuracy(preds: Sequence[Sequence[int]], gts: Sequence[Sequence[int]], max_steps: int = 4) -> list[float]:
    """
    Element m is the fraction of videos whose step-m prediction matches the
    ground truth, among videos with more than m ground-truth steps. The list
    stops at the first step no video reaches.
    """
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} ground truths")
    hits = [step_hits(p, g) for p, g in zip(preds, gts)]
    out = []
    for m in range(max_steps):
        col = [h[m] for h in hits if len(h) > m]
        if not col:
            break
        out.append(float(np.mean(col)))
    return out


# ------------------------------------------------------------
# Reports
# ------------------------------------------------------------

@dataclass
class MetricReport:
    moc: float
    per_step_accuracy: list[float] = field(default_factory=list)
    n_videos: int = 0
    seed: int = 0
    config_hash: str = ""
    observed: Optional[float] = None
    predicted: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)

    def flat(self) -> dict[str, float]:
        out = {"moc": self.moc}
        for m, acc in enumerate(self.per_step_accuracy, start=1):
            out[f"step_{m}"] = acc
        return out


def evaluate(model: Anticipator, samples: Sequence[WindowedSample], seed: int = 0,
             config_hash: str = "", max_steps: int = 4) -> MetricReport:
    """Anticipate each window's horizon and score it against its targets."""
    if not samples:
        raise ValueError("nothing to evaluate")

    mocs, preds, gts = [], [], []
    for s in samples:
        if s.target_segments is None:
            raise ValueError(f"{s.id}: cannot evaluate a weak sample")
        seq = anticipate(model, s.observed_features, s.horizon_fraction)
        gt_frames = expand_to_frames(s.target_segments, s.horizon_frames)
        pred_frames = expand_to_frames(seq.segments(), s.horizon_frames)
        mocs.append(mean_over_classes(pred_frames, gt_frames))
        preds.append(seq.labels)
        gts.append([seg.class_id for seg in s.target_segments])

    first = samples[0]
    report = MetricReport(
        moc=float(np.mean(mocs)),
        per_step_accuracy=per_step_accuracy(preds, gts, max_steps),
        n_videos=len(samples),
        seed=seed,
        config_hash=config_hash,
        observed=round(first.observed_frames / first.total_frames, 6),
        predicted=first.horizon_fraction,
    )
    logging.debug(f"Evaluated {report.n_videos} videos: MoC={report.moc:.4f}")
    return report


# ------------------------------------------------------------
# Seed sweeps
# ------------------------------------------------------------

@dataclass
class SweepResult:
    runs: pd.DataFrame  # one row per seed
    mean: dict[str, float]
    std: dict[str, float]


def _metrics_of(result: Union[MetricReport, float, dict]) -> dict[str, float]:
    if isinstance(result, MetricReport):
        return result.flat()
    if isinstance(result, dict):
        return {k: float(v) for k, v in result.items()}
    return {"moc": float(result)}


def seed_sweep(run_fn: Callable[[int], Union[MetricReport, float, dict]], n_seeds: int = 10,
               seeds: Optional[Sequence[int]] = None, workers: int = 1) -> SweepResult:
    """
    Run `run_fn(seed)` per seed and return the sample mean and the n-1 standard
    deviation of each metric. With workers > 1, run_fn must be picklable.
    """
    seeds = list(seeds) if seeds is not None else list(range(n_seeds))
    if len(seeds) < 2:
        raise ConfigError("a standard deviation needs at least 2 seeds", "n_seeds")

    if workers > 1:
        with Pool(min(workers, len(seeds))) as pool:
            results = pool.map(run_fn, seeds)
    else:
        results = [run_fn(s) for s in seeds]

    rows = [{"seed": s, **_metrics_of(r)} for s, r in zip(seeds, results)]
    runs = pd.DataFrame(rows)
    metrics = runs.drop(columns=["seed"])
    mean = {k: float(v) for k, v in metrics.mean().items()}
    std = {k: float(v) for k, v in metrics.std(ddof=1).items()}
    logging.info(f"Seed sweep over {len(seeds)} seeds: MoC {mean.get('moc', float('nan')):.4f} +- {std.get('moc', float('nan')):.4f}")
    return SweepResult(runs=runs, mean=mean, std=std)


# ------------------------------------------------------------
# Experiment block
# ------------------------------------------------------------

@with_config(CONFIG_BLOCK)
@dataclass
class EvaluationConfig:
    observed: list[float] = field(default_factory=lambda: [0.2, 0.3])
    predicted: list[float] = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.5])
    n_seeds: int = 10
    split_fractions: list[float] = field(default_factory=lambda: [0.05, 0.15, 0.25])
    accuracy_steps: int = 4
    workers: int = 1

    def __post_init__(self):
        if not self.observed or not self.predicted:
            raise ConfigError("needs at least one value", "observed" if not self.observed else "predicted")
        for i, x in enumerate(self.observed):
            if not 0.0 < x < 1.0:
                raise ConfigError("must lie in (0, 1)", f"observed[{i}]")
            for j, y in enumerate(self.predicted):
                if not 0.0 < y <= 1.0 or x + y > 1.0 + 1e-12:
                    raise ConfigError(f"observed {x} + predicted {y} must lie in (0, 1]", f"predicted[{j}]")
        if self.n_seeds < 2:
            raise ConfigError("must be >= 2", "n_seeds")
        for i, f in enumerate(self.split_fractions):
            if not 0.0 < f < 1.0:
                raise ConfigError("must lie in (0, 1)", f"split_fractions[{i}]")
        if self.accuracy_steps < 1 or self.workers < 1:
            raise ConfigError("must be >= 1", "accuracy_steps" if self.accuracy_steps < 1 else "workers")

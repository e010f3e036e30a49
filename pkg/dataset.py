"""
dataset.py
Synthetic action-grammar corpora, the full/weak split and the
observation/prediction windows of the anticipation protocol.

Durations are fractions of the total video length throughout.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from pydantic import with_config

from config import CONFIG_BLOCK, ConfigError


class GrammarError(ValueError):
    """Transition matrix or duration parameters are unusable."""


class DegenerateSampleError(ValueError):
    """A window holds zero observed or zero horizon frames."""


# ------------------------------------------------------------
# Core Types
# ------------------------------------------------------------

@dataclass(frozen=True)
class ActionVocabulary:
    classes: tuple[str, ...]

    def __post_init__(self):
        if len(self.classes) < 2:
            raise ConfigError("a vocabulary needs at least 2 classes", "n_classes")
        if len(set(self.classes)) != len(self.classes):
            raise ConfigError("class names must be unique", "classes")

    @property
    def K(self) -> int:
        return len(self.classes)

    @classmethod
    def numbered(cls, n_classes: int) -> "ActionVocabulary":
        return cls(tuple(f"action_{k:02d}" for k in range(n_classes)))


@dataclass(frozen=True)
class ActionSegment:
    class_id: int
    duration: float

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"segment duration must be positive, got {self.duration}")


@dataclass(frozen=True, eq=False)
class VideoSample:
    id: str
    features: np.ndarray  # (T', D), whole video
    frame_labels: np.ndarray  # (T',)
    fps: float = 1.0

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64)
        labels = np.array(self.frame_labels, dtype=np.int64)
        if feats.ndim != 2:
            raise ValueError(f"{self.id}: features must be 2-D, got {feats.shape}")
        if labels.ndim != 1 or len(labels) != feats.shape[0]:
            raise ValueError(f"{self.id}: {len(labels)} labels for {feats.shape[0]} frames")
        if len(labels) == 0:
            raise ValueError(f"{self.id}: empty video")
        feats.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "frame_labels", labels)

    @property
    def n_frames(self) -> int:
        return len(self.frame_labels)

    @property
    def seconds(self) -> float:
        return self.n_frames / self.fps

    def segments(self) -> list[ActionSegment]:
        n = self.n_frames
        return [ActionSegment(c, count / n) for c, count in run_lengths(self.frame_labels)]


@dataclass(frozen=True, eq=False)
class WindowedSample:
    id: str
    observed_features: np.ndarray
    target_segments: Optional[tuple[ActionSegment, ...]]  # None once stripped for the weak set
    weak_label: int
    horizon_fraction: float
    horizon_frames: int
    observed_frames: int
    total_frames: int

    @property
    def is_weak(self) -> bool:
        return self.target_segments is None

    def strip(self) -> "WindowedSample":
        """Drop every future label except the weak one."""
        return WindowedSample(
            id=self.id,
            observed_features=self.observed_features,
            target_segments=None,
            weak_label=self.weak_label,
            horizon_fraction=self.horizon_fraction,
            horizon_frames=self.horizon_frames,
            observed_frames=self.observed_frames,
            total_frames=self.total_frames,
        )


@with_config(CONFIG_BLOCK)
@dataclass(frozen=True)
class SplitSpec:
    full_fraction: float = 0.15
    seed: int = 0
    observed_fraction: float = 0.3
    predicted_fraction: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.full_fraction <= 1.0:
            raise ConfigError("must lie in (0, 1]", "full_fraction")
        if not 0.0 < self.observed_fraction < 1.0:
            raise ConfigError("must lie in (0, 1)", "observed_fraction")
        if not 0.0 < self.predicted_fraction <= 1.0:
            raise ConfigError("must lie in (0, 1]", "predicted_fraction")
        if self.observed_fraction + self.predicted_fraction > 1.0 + 1e-12:
            raise ConfigError("observed + predicted must not exceed 1", "predicted_fraction")


# ------------------------------------------------------------
# Segment helpers
# ------------------------------------------------------------

def run_lengths(labels: Sequence[int]) -> list[tuple[int, int]]:
    """Contiguous (class, frame count) runs."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        return []
    change = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [len(labels)]])
    return [(int(labels[s]), int(e - s)) for s, e in zip(starts, ends)]


def labels_from_runs(runs: Iterable[tuple[int, int]]) -> np.ndarray:
    runs = list(runs)
    if not runs:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([np.full(n, c, dtype=np.int64) for c, n in runs])


# ------------------------------------------------------------
# Grammar & Generation
# ------------------------------------------------------------

@dataclass
class Grammar:
    """Markov walk over action classes with class-conditional durations and features."""
    transition: np.ndarray  # (K, K), zero diagonal
    initial: np.ndarray  # (K,)
    duration_mean: np.ndarray  # seconds, (K,)
    duration_std: np.ndarray  # seconds, (K,)
    centroids: np.ndarray  # (K, D), unit norm
    mean_segments: float = 8.0
    fps: float = 1.0
    noise_sigma: float = 0.5
    oracle: bool = False
    coupling_gain: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.validate()

    @property
    def K(self) -> int:
        return self.transition.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.K if self.oracle else self.centroids.shape[1]

    @property
    def expected_video_seconds(self) -> float:
        """Expected video length from the segment-count law and the walk's class marginals."""
        lam = self.mean_segments - 1.0
        pmf = np.exp(-lam)
        survival = 1.0  # P(segments > m)
        visit = np.asarray(self.initial, dtype=np.float64)
        total = 0.0
        for m in range(int(lam + 20 * np.sqrt(lam + 1) + 20)):
            total += survival * float(visit @ self.duration_mean)
            survival -= pmf
            pmf *= lam / (m + 1)
            visit = visit @ self.transition
        return total

    def validate(self) -> None:
        P = np.asarray(self.transition, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 2:
            raise GrammarError(f"transition must be square with K >= 2, got {P.shape}")
        if np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, atol=1e-9):
            raise GrammarError("transition rows must lie on the simplex")
        if np.any(np.diag(P) > 0):
            raise GrammarError("self-transitions would merge adjacent segments; diagonal must be zero")
        init = np.asarray(self.initial, dtype=np.float64)
        if init.shape != (P.shape[0],) or np.any(init < 0) or not np.isclose(init.sum(), 1.0, atol=1e-9):
            raise GrammarError("initial distribution must lie on the simplex")
        if np.any(np.asarray(self.duration_mean) <= 0) or np.any(np.asarray(self.duration_std) < 0):
            raise GrammarError("duration parameters must be positive")
        if self.mean_segments < 1 or self.fps <= 0 or self.noise_sigma < 0:
            raise GrammarError("mean_segments >= 1, fps > 0 and noise_sigma >= 0 are required")
        if not self.oracle and self.centroids.shape[0] != P.shape[0]:
            raise GrammarError("one centroid per class is required")
        if len(self.coupling_gain) not in (0, P.shape[0]):
            raise GrammarError("coupling_gain needs one entry per class")

    @classmethod
    def random(cls, n_classes: int = 10, feature_dim: int = 64, seed: int = 0,
               segment_seconds: float = 10.0, duration_std: float = 0.25,
               mean_segments: float = 8.0, fps: float = 1.0, noise_sigma: float = 0.5,
               duration_coupling: float = 0.0, oracle: bool = False) -> "Grammar":
        """
        Seeded random grammar. Per-class mean durations spread +-40% around
        `segment_seconds`; `duration_std` is relative to each class mean.
        With `duration_coupling` > 0 a segment's duration is scaled by a gain
        attached to the preceding class.
        """
        rng = np.random.default_rng([seed, 7919])
        K = n_classes
        P = rng.dirichlet(np.full(K - 1, 0.3), size=K)
        transition = np.zeros((K, K))
        for k in range(K):
            transition[k, np.arange(K) != k] = P[k]
        means = segment_seconds * rng.uniform(0.6, 1.4, size=K)
        centroids = rng.normal(size=(K, feature_dim))
        centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
        gain = duration_coupling * rng.uniform(-1.0, 1.0, size=K) if duration_coupling > 0 else np.zeros(0)
        return cls(
            transition=transition,
            initial=np.full(K, 1.0 / K),
            duration_mean=means,
            duration_std=duration_std * means,
            centroids=centroids,
            mean_segments=mean_segments,
            fps=fps,
            noise_sigma=noise_sigma,
            oracle=oracle,
            coupling_gain=gain,
        )

    @classmethod
    def cycle(cls, n_classes: int, feature_dim: int = 16, seed: int = 0, **kwargs) -> "Grammar":
        """Deterministic successor grammar: class k is always followed by k+1 (mod K)."""
        base = cls.random(n_classes, feature_dim, seed, **kwargs)
        transition = np.roll(np.eye(n_classes), 1, axis=1)
        base.transition = transition
        base.validate()
        return base


def _video_runs(grammar: Grammar, rng: np.random.Generator) -> list[tuple[int, int]]:
    n_segments = 1 + int(rng.poisson(grammar.mean_segments - 1.0))
    runs: list[tuple[int, int]] = []
    cls = int(rng.choice(grammar.K, p=grammar.initial))
    prev = None
    for _ in range(n_segments):
        mean = grammar.duration_mean[cls]
        if prev is not None and len(grammar.coupling_gain):
            mean = mean * (1.0 + grammar.coupling_gain[prev])
        seconds = rng.normal(mean, grammar.duration_std[cls])
        seconds = float(np.clip(seconds, 0.25 * mean, 2.0 * mean))
        frames = max(1, int(round(seconds * grammar.fps)))
        runs.append((cls, frames))
        prev = cls
        cls = int(rng.choice(grammar.K, p=grammar.transition[cls]))
    return runs


def generate_corpus(vocab: ActionVocabulary, grammar: Grammar, n_videos: int, seed: int,
                    prefix: str = "vid") -> list[VideoSample]:
    """
    Each video is a Markov walk over classes; per-frame features are
    Gaussian around the class centroid (or one-hot labels in oracle mode).
    Videos are seeded independently from (seed, index).
    """
    if vocab.K != grammar.K:
        raise GrammarError(f"vocabulary has {vocab.K} classes, grammar has {grammar.K}")
    grammar.validate()

    corpus = []
    for i in range(n_videos):
        rng = np.random.default_rng([seed, i])
        labels = labels_from_runs(_video_runs(grammar, rng))
        if grammar.oracle:
            feats = np.eye(grammar.K)[labels]
        else:
            feats = grammar.centroids[labels] + grammar.noise_sigma * rng.normal(size=(len(labels), grammar.centroids.shape[1]))
        corpus.append(VideoSample(id=f"{prefix}{i:05d}", features=feats, frame_labels=labels, fps=grammar.fps))

    logging.info(f"Generated {len(corpus)} videos over {vocab.K} classes (seed={seed})")
    return corpus


# ------------------------------------------------------------
# Windowing & Splits
# ------------------------------------------------------------

def window(sample: VideoSample, X: float, Y: float) -> WindowedSample:
    """
    Observe the first floor(X*T') frames; targets cover the frames up to
    floor((X+Y)*T'). Target durations are rescaled to sum to Y exactly.
    """
    if not (X > 0 and Y > 0 and X + Y <= 1.0 + 1e-12):
        raise ConfigError(f"invalid window X={X}, Y={Y}", "window")

    n = sample.n_frames
    T = int(np.floor(X * n + 1e-9))
    end = min(n, int(np.floor((X + Y) * n + 1e-9)))
    if T <= 0:
        raise DegenerateSampleError(f"{sample.id}: no observed frames at X={X} ({n} frames)")
    if end <= T:
        raise DegenerateSampleError(f"{sample.id}: empty prediction horizon at X={X}, Y={Y} ({n} frames)")

    horizon = end - T
    runs = run_lengths(sample.frame_labels[T:end])
    targets = tuple(ActionSegment(c, count / horizon * Y) for c, count in runs)

    return WindowedSample(
        id=sample.id,
        observed_features=sample.features[:T],
        target_segments=targets,
        weak_label=int(sample.frame_labels[T]),
        horizon_fraction=Y,
        horizon_frames=horizon,
        observed_frames=T,
        total_frames=n,
    )


def window_all(corpus: Sequence[VideoSample], X: float, Y: float) -> list[WindowedSample]:
    """Window every video, skipping (and logging) degenerate ones."""
    out = []
    for sample in corpus:
        try:
            out.append(window(sample, X, Y))
        except DegenerateSampleError as e:
            logging.warning(f"Skipping degenerate sample: {e}")
    return out


def split_train_test(corpus: Sequence[VideoSample], test_fraction: float, seed: int
                     ) -> tuple[list[VideoSample], list[VideoSample]]:
    if not 0.0 <= test_fraction < 1.0:
        raise ConfigError("must lie in [0, 1)", "test_fraction")
    order = np.random.default_rng([seed, 104729]).permutation(len(corpus))
    n_test = int(round(test_fraction * len(corpus)))
    test_idx = set(order[:n_test].tolist())
    train = [s for i, s in enumerate(corpus) if i not in test_idx]
    test = [s for i, s in enumerate(corpus) if i in test_idx]
    return train, test


def split_full_weak(corpus: Sequence[VideoSample], split: SplitSpec
                    ) -> tuple[list[WindowedSample], list[WindowedSample]]:
    """
    Partition the training videos into the fully-labelled set F and the
    weakly-labelled set W. W members keep only observed features and the weak
    label. full_fraction == 1 puts everything in F (supervised upper bound).
    """
    if not corpus:
        raise ConfigError("cannot split an empty corpus", "dataset")
    N = len(corpus)
    n_full = int(round(split.full_fraction * N))
    if split.full_fraction < 1.0 and (n_full == 0 or n_full == N):
        raise ConfigError(f"full_fraction={split.full_fraction} leaves an empty set for N={N}", "full_fraction")

    order = np.random.default_rng(split.seed).permutation(N)
    full_idx = set(order[:n_full].tolist())
    full, weak = [], []
    for i, sample in enumerate(corpus):
        try:
            w = window(sample, split.observed_fraction, split.predicted_fraction)
        except DegenerateSampleError as e:
            logging.warning(f"Skipping degenerate sample: {e}")
            continue
        if i in full_idx:
            full.append(w)
        else:
            weak.append(w.strip())

    logging.info(f"Split {N} videos: |F|={len(full)} |W|={len(weak)} (seed={split.seed})")
    return full, weak


# ------------------------------------------------------------
# Data-access audit
# ------------------------------------------------------------

class AccessLog:
    """Records which sample ids and label fields a run read."""

    def __init__(self) -> None:
        self.entries: set[tuple[str, str]] = set()

    def targets(self, sample: WindowedSample) -> tuple[ActionSegment, ...]:
        if sample.target_segments is None:
            raise ValueError(f"{sample.id}: target segments are not available for weak samples")
        self.entries.add((sample.id, "target_segments"))
        return sample.target_segments

    def weak_label(self, sample: WindowedSample) -> int:
        self.entries.add((sample.id, "weak_label"))
        return sample.weak_label

    def ids(self, field_name: Optional[str] = None) -> set[str]:
        return {i for i, f in self.entries if field_name is None or f == field_name}

    def rows(self) -> list[dict[str, str]]:
        return [{"sample_id": i, "field": f} for i, f in sorted(self.entries)]


# ------------------------------------------------------------
# Experiment block
# ------------------------------------------------------------

@with_config(CONFIG_BLOCK)
@dataclass
class DatasetConfig:
    n_videos: int = 200
    n_classes: int = 10
    feature_dim: int = 64
    fps: float = 1.0
    mean_segments: float = 8.0
    segment_seconds: float = 10.0
    duration_std: float = 0.25
    noise_sigma: float = 0.5
    duration_coupling: float = 0.0
    oracle: bool = False
    grammar_seed: int = 0
    corpus_seed: int = 1
    test_fraction: float = 0.2
    manifest: Optional[str] = None
    split: SplitSpec = field(default_factory=SplitSpec)

    def __post_init__(self):
        if self.n_videos < 0:
            raise ConfigError("must be >= 0", "n_videos")
        if self.n_classes < 2:
            raise ConfigError("must be >= 2", "n_classes")
        if self.feature_dim < 1:
            raise ConfigError("must be >= 1", "feature_dim")
        if self.oracle and self.feature_dim != self.n_classes:
            raise ConfigError("oracle features are one-hot labels: feature_dim must equal n_classes", "feature_dim")
        if self.fps <= 0 or self.segment_seconds <= 0:
            raise ConfigError("fps and segment_seconds must be positive", "fps")
        if self.mean_segments < 1:
            raise ConfigError("must be >= 1", "mean_segments")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigError("must lie in [0, 1)", "test_fraction")

    def vocabulary(self) -> ActionVocabulary:
        return ActionVocabulary.numbered(self.n_classes)

    def grammar(self) -> Grammar:
        return Grammar.random(
            n_classes=self.n_classes,
            feature_dim=self.feature_dim,
            seed=self.grammar_seed,
            segment_seconds=self.segment_seconds,
            duration_std=self.duration_std,
            mean_segments=self.mean_segments,
            fps=self.fps,
            noise_sigma=self.noise_sigma,
            duration_coupling=self.duration_coupling,
            oracle=self.oracle,
        )

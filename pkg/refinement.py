"""
refinement.py
Pseudo-labelling with the weak-label-conditioned anticipator, and the two
refiners that mix primary predictions with pseudo-labels: the scheduled
weighted geometric mean (linear) and a learned per-step mixing layer (adaptive).
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from backbone import Anticipator, AnticipatedSequence, AnticipatedStep, StepOutput, steps_to_cover
from config import ConfigError
from diffcore import (
    EPS_PROB,
    DimensionError,
    Linear,
    Matrix,
    Module,
    Tape,
    clamped_log,
    concat_cols,
    exp,
    slice_cols,
    softmax_row,
)

TINY = np.finfo(np.float64).tiny


# ------------------------------------------------------------
# Schedule
# ------------------------------------------------------------

@dataclass(frozen=True)
class RefineSchedule:
    alpha0: float = 30.0
    decay: float = 0.95
    floor: float = 0.5

    def __post_init__(self):
        if not self.floor > 0:
            raise ConfigError("must be > 0", "floor")
        if self.alpha0 < self.floor:
            raise ConfigError("must be >= floor", "alpha0")
        if not 0.0 < self.decay < 1.0:
            raise ConfigError("must lie in (0, 1)", "decay")


def alpha_at(schedule: RefineSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return max(schedule.floor, schedule.alpha0 * schedule.decay ** epoch)


def mixing_weights(alpha: float) -> tuple[float, float]:
    """(primary, pseudo) exponents 1/(a+1) and a/(a+1); a = inf gives (0, 1)."""
    if alpha < 0 or math.isnan(alpha):
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if math.isinf(alpha):
        return 0.0, 1.0
    return 1.0 / (alpha + 1.0), alpha / (alpha + 1.0)


# ------------------------------------------------------------
# Conditional Module
# ------------------------------------------------------------

class ConditionalModule(Module):
    """Weak-label-conditioned anticipator. Frozen after its training phase."""

    def __init__(self, model: Anticipator) -> None:
        if not model.conditional:
            raise ValueError("ConditionalModule needs an anticipator built with conditional=True")
        self.model = model
        self.frozen = False
        self._frozen_digest: Optional[str] = None

    def freeze(self) -> None:
        self.frozen = True
        self._frozen_digest = self.model.digest()
        logging.info(f"Conditional module frozen (sha256 {self._frozen_digest[:12]})")

    def check_frozen(self) -> None:
        """Raise if a frozen module's parameters moved."""
        if self.frozen and self.model.digest() != self._frozen_digest:
            raise RuntimeError("frozen conditional module parameters changed")


def pseudo_label(cond: ConditionalModule, observed_features: np.ndarray, weak_label: int,
                 horizon: float, n_steps: Optional[int] = None) -> AnticipatedSequence:
    """
    Conditional anticipation with step 1's class replaced by one_hot(weak_label).
    Step 1's duration stays the model's own estimate. With n_steps the rollout
    ignores the horizon stop.
    """
    model = cond.model
    K = model.cfg.n_classes
    if not 0 <= int(weak_label) < K:
        raise IndexError(f"weak label {weak_label} outside 0..{K - 1}")

    tape = Tape()
    if n_steps is None:
        _, steps = model.rollout(tape, observed_features, model.cfg.max_steps, weak_label=weak_label, horizon=horizon)
        seq = AnticipatedSequence.from_steps(steps)
        if seq.durations.sum() >= horizon - 1e-12:
            seq.stop_reason = "horizon-covered"
    else:
        _, steps = model.rollout(tape, observed_features, n_steps, weak_label=weak_label)
        seq = AnticipatedSequence.from_steps(steps)

    first = seq.steps[0]
    seq.steps[0] = AnticipatedStep(np.eye(K)[int(weak_label)], first.duration, first.attn_weights)
    return seq


@dataclass
class PseudoLabel:
    """Cached full-length pseudo rollout for one sample."""
    sequence: AnticipatedSequence  # max_steps long
    n_cover: int  # steps needed to cover the horizon

    def aligned(self, n_steps: int) -> AnticipatedSequence:
        return self.sequence.head(n_steps)


def make_pseudo_label(cond: ConditionalModule, observed_features: np.ndarray, weak_label: int,
                      horizon: float) -> PseudoLabel:
    seq = pseudo_label(cond, observed_features, weak_label, horizon, n_steps=cond.model.cfg.max_steps)
    return PseudoLabel(seq, steps_to_cover(seq.durations, horizon, cond.model.cfg.max_steps))


# ------------------------------------------------------------
# Linear Refinement
# ------------------------------------------------------------

def _check_aligned(primary: AnticipatedSequence, pseudo: AnticipatedSequence) -> None:
    if len(primary) != len(pseudo):
        raise DimensionError(f"refinement: {len(primary)} primary steps vs {len(pseudo)} pseudo steps")
    if len(primary) == 0:
        raise DimensionError("refinement: empty sequences")


def geometric_mix(p: np.ndarray, q: np.ndarray, alpha: float) -> np.ndarray:
    """Normalized p^(1/(a+1)) * q^(a/(a+1))."""
    wp, wq = mixing_weights(alpha)
    logr = wp * np.log(np.maximum(p, TINY)) + wq * np.log(np.maximum(q, TINY))
    r = np.exp(logr - logr.max())
    return r / r.sum()


def linear_refine(primary: AnticipatedSequence, pseudo: AnticipatedSequence, alpha: float) -> AnticipatedSequence:
    """Per step weighted geometric mean of class distributions and of durations."""
    _check_aligned(primary, pseudo)
    wp, wq = mixing_weights(alpha)
    steps = []
    for a, b in zip(primary.steps, pseudo.steps):
        dist = geometric_mix(a.class_dist, b.class_dist, alpha)
        duration = float(np.exp(wp * np.log(a.duration) + wq * np.log(b.duration)))
        steps.append(AnticipatedStep(dist, duration))
    return AnticipatedSequence(steps, primary.stop_reason)


def kl_divergence(r: np.ndarray, p: np.ndarray) -> float:
    r = np.asarray(r, dtype=np.float64)
    live = r > 0
    return float(np.sum(r[live] * (np.log(r[live]) - np.log(np.maximum(p[live], TINY)))))


def refinement_objective(r: np.ndarray, p: np.ndarray, q: np.ndarray, alpha: float) -> float:
    """Weighted KL that the geometric mean minimizes over the simplex."""
    wp, wq = mixing_weights(alpha)
    return wp * kl_divergence(r, p) + wq * kl_divergence(r, q)


# ------------------------------------------------------------
# Adaptive Refinement
# ------------------------------------------------------------

class AdaptiveRefiner(Module):
    """
    Shared per-step linear layer over [log p, log d_p, log q, log d_q].
    The first K outputs are class logits, the last is a log-duration.
    Initialized to reproduce linear_refine at `init_alpha`
    (0 copies the primary, inf copies the pseudo-label).
    """

    def __init__(self, n_classes: int, rng: np.random.Generator, init_alpha: float = 30.0,
                 name: str = "refiner") -> None:
        K = n_classes
        self.n_classes = K
        self.mix = Linear(2 * K + 2, K + 1, rng, f"{name}.mix")
        wp, wq = mixing_weights(init_alpha)
        W = np.zeros((2 * K + 2, K + 1))
        W[np.arange(K), np.arange(K)] = wp
        W[K, K] = wp
        W[K + 1 + np.arange(K), np.arange(K)] = wq
        W[2 * K + 1, K] = wq
        self.mix.W.value = W
        self.mix.b.value = np.zeros((1, K + 1))

    def refine_step(self, tape: Tape, p_dist: Matrix, p_dur: Matrix,
                    q_dist: np.ndarray, q_dur: float) -> tuple[Matrix, Matrix]:
        K = self.n_classes
        if p_dist.shape != (1, K) or np.shape(q_dist) not in ((K,), (1, K)):
            raise DimensionError(f"refiner: primary {p_dist.shape}, pseudo {np.shape(q_dist)}, K={K}")
        q_log = np.log(np.maximum(np.asarray(q_dist, dtype=np.float64).reshape(1, K), EPS_PROB))
        qd_log = np.log(max(float(q_dur), EPS_PROB))
        x = concat_cols([
            clamped_log(p_dist),
            clamped_log(p_dur),
            tape.constant(q_log),
            tape.constant([[qd_log]]),
        ])
        out = self.mix(tape, x)
        return softmax_row(slice_cols(out, 0, K)), exp(slice_cols(out, K, K + 1))

    def refine(self, tape: Tape, primary: Sequence[StepOutput], pseudo: AnticipatedSequence) -> list[StepOutput]:
        """Differentiable refinement of primary step outputs."""
        if len(primary) != len(pseudo):
            raise DimensionError(f"refinement: {len(primary)} primary steps vs {len(pseudo)} pseudo steps")
        refined = []
        for step, target in zip(primary, pseudo.steps):
            dist, dur = self.refine_step(tape, step.class_dist, step.duration, target.class_dist, target.duration)
            refined.append(StepOutput(dist, dur, None))
        return refined


def adaptive_refine(refiner: AdaptiveRefiner, primary: AnticipatedSequence,
                    pseudo: AnticipatedSequence) -> AnticipatedSequence:
    """Numeric refinement of two aligned sequences (no gradients kept)."""
    _check_aligned(primary, pseudo)
    tape = Tape()
    steps = []
    for a, b in zip(primary.steps, pseudo.steps):
        dist, dur = refiner.refine_step(
            tape, tape.constant(a.class_dist), tape.constant([[a.duration]]), b.class_dist, b.duration
        )
        steps.append(AnticipatedStep(dist.value[0].copy(), float(dur.value[0, 0])))
    return AnticipatedSequence(steps, primary.stop_reason)

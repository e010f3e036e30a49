"""
losses.py
Training objectives. Every loss is a 1x1 Matrix on the caller's tape so the
terms of one batch share a single backward pass.

Sequences are compared over their first min(M_out, M_target) steps.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np

from backbone import AnticipatedSequence, StepOutput
from config import ConfigError
from dataset import ActionSegment, DegenerateSampleError
from diffcore import (
    DimensionError,
    Matrix,
    Tape,
    cross_entropy,
    mse,
    soft_cross_entropy,
    squared_distance,
    total,
)

TERM_NAMES = (
    "label_full",
    "label_weak_c1",
    "pseudo_class",
    "pseudo_duration",
    "refined_supervised",
    "attn_reg",
)


def validate_weights(weights: dict[str, float]) -> dict[str, float]:
    for name, w in weights.items():
        if name not in TERM_NAMES:
            raise ConfigError(f"unknown loss term '{name}'", f"loss_weights.{name}")
        if w < 0:
            raise ConfigError("must be >= 0", f"loss_weights.{name}")
    return {name: float(weights.get(name, 1.0)) for name in TERM_NAMES}


# ------------------------------------------------------------
# Batch Items
# ------------------------------------------------------------

@dataclass
class FullItem:
    """A fully-labelled sample's rollout (and, in adaptive mode, its refined rollout)."""
    steps: list[StepOutput]
    targets: Sequence[ActionSegment]
    refined: Optional[list[StepOutput]] = None


@dataclass
class WeakItem:
    """
    A weakly-labelled sample's rollout with its weak label and refined target.
    The target is a numeric AnticipatedSequence (linear refinement) or the
    refiner's step outputs on the same tape (adaptive refinement).
    """
    steps: list[StepOutput]
    weak_label: int
    refined: Union[AnticipatedSequence, list[StepOutput], None] = None


@dataclass
class AttentionPair:
    primary: list[Matrix]
    conditional: list[np.ndarray]


@dataclass
class LossBreakdown:
    terms: dict[str, Matrix]
    weights: dict[str, float] = field(default_factory=dict)

    @cached_property
    def total(self) -> Matrix:
        parts = []
        for name, term in self.terms.items():
            w = self.weights.get(name, 1.0)
            parts.append(term if w == 1.0 else term * w)
        return total(parts)

    def values(self) -> dict[str, float]:
        out = {name: term.item() for name, term in self.terms.items()}
        out["total"] = self.total.item()
        return out


# ------------------------------------------------------------
# Per-sample terms
# ------------------------------------------------------------

def _aligned(steps: Sequence, targets: Sequence) -> int:
    n = min(len(steps), len(targets))
    if n == 0:
        raise DegenerateSampleError("no aligned steps between prediction and target")
    return n


def sequence_loss(steps: Sequence[StepOutput], targets: Sequence[ActionSegment]) -> Matrix:
    """Summed per-step class cross-entropy plus duration squared error."""
    n = _aligned(steps, targets)
    parts = []
    for step, seg in zip(steps[:n], targets[:n]):
        parts.append(cross_entropy(step.class_dist, seg.class_id))
        parts.append(mse(step.duration, seg.duration))
    return total(parts)


def _refined_targets(refined: Union[AnticipatedSequence, Sequence[StepOutput]]) -> list[tuple]:
    if isinstance(refined, AnticipatedSequence):
        return [(s.class_dist, s.duration) for s in refined.steps]
    return [(s.class_dist, s.duration) for s in refined]


def pseudo_terms(steps: Sequence[StepOutput],
                 refined: Union[AnticipatedSequence, Sequence[StepOutput]]) -> tuple[Optional[Matrix], Matrix]:
    """
    Soft cross-entropy against refined classes from step 2 on, and duration
    error against refined durations from step 1 on. The class term is None
    when only one step is aligned. Refined step outputs stay attached.
    """
    targets = _refined_targets(refined)
    n = _aligned(steps, targets)
    cls = [soft_cross_entropy(steps[m].class_dist, targets[m][0]) for m in range(1, n)]
    dur = [mse(steps[m].duration, targets[m][1]) for m in range(n)]
    return (total(cls) if cls else None), total(dur)


def attn_regularizer(primary_attn: Sequence[Matrix], cond_attn: Sequence[Union[np.ndarray, Matrix]]) -> Matrix:
    """Sum over steps of ||a_prim - a_cond||^2."""
    if len(primary_attn) != len(cond_attn):
        raise DimensionError(f"attention regularizer: {len(primary_attn)} vs {len(cond_attn)} steps")
    if not primary_attn:
        raise DimensionError("attention regularizer: no steps")
    return total(squared_distance(a, b) for a, b in zip(primary_attn, cond_attn))


def _mean(terms: list[Matrix]) -> Matrix:
    return total(terms) * (1.0 / len(terms))


# ------------------------------------------------------------
# Objectives
# ------------------------------------------------------------

def loss_cond(items: Sequence[FullItem]) -> Matrix:
    """Mean sequence loss over the fully-labelled batch."""
    if not items:
        raise DegenerateSampleError("empty fully-labelled batch")
    return _mean([sequence_loss(it.steps, it.targets) for it in items])


def loss_label(full: Sequence[FullItem], weak: Sequence[WeakItem],
               weights: Optional[dict[str, float]] = None) -> LossBreakdown:
    """Full supervision on F plus the step-1 weak-label term on W."""
    terms: dict[str, Matrix] = {}
    if full:
        terms["label_full"] = loss_cond(full)
    if weak:
        terms["label_weak_c1"] = _mean([cross_entropy(it.steps[0].class_dist, it.weak_label) for it in weak])
    if not terms:
        raise DegenerateSampleError("empty batch")
    return LossBreakdown(terms, weights or {})


def loss_prim(full: Sequence[FullItem], weak: Sequence[WeakItem],
              attention: Sequence[AttentionPair] = (),
              weights: Optional[dict[str, float]] = None) -> LossBreakdown:
    """loss_label plus pseudo-label terms on W and the optional attention regularizer."""
    out = loss_label(full, weak, weights)
    if weak:
        cls_terms, dur_terms = [], []
        for it in weak:
            if it.refined is None:
                raise RuntimeError("weak sample is missing its refined target")
            cls, dur = pseudo_terms(it.steps, it.refined)
            if cls is not None:
                cls_terms.append(cls)
            dur_terms.append(dur)
        if cls_terms:
            out.terms["pseudo_class"] = _mean(cls_terms)
        out.terms["pseudo_duration"] = _mean(dur_terms)
    if attention:
        out.terms["attn_reg"] = _mean([attn_regularizer(a.primary, a.conditional) for a in attention])
    return out


def loss_adap(full: Sequence[FullItem], weak: Sequence[WeakItem],
              attention: Sequence[AttentionPair] = (),
              weights: Optional[dict[str, float]] = None) -> LossBreakdown:
    """
    loss_prim plus the supervised term on the refined outputs of F. Refined
    targets of W are expected attached, so the pseudo terms also train the refiner.
    """
    out = loss_prim(full, weak, attention, weights)
    if full:
        for it in full:
            if it.refined is None:
                raise RuntimeError("fully-labelled sample is missing its refined output")
        out.terms["refined_supervised"] = _mean([sequence_loss(it.refined, it.targets) for it in full])
    return out


def constant_steps(tape: Tape, seq: AnticipatedSequence) -> list[StepOutput]:
    """Lift a numeric sequence onto a tape as constants."""
    return [
        StepOutput(
            tape.constant(s.class_dist),
            tape.constant([[s.duration]]),
            None if s.attn_weights is None else tape.constant(s.attn_weights),
        )
        for s in seq.steps
    ]

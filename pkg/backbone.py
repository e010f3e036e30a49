"""
backbone.py
Recursive encoder-decoder anticipator (LSTM encoder, LSTM decoder) with the
duration-attention head, plus parameter counting and checkpoint files.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
from pydantic import with_config

from config import CONFIG_BLOCK, ConfigError
from diffcore import (
    DimensionError,
    LSTMCell,
    Linear,
    Matrix,
    Module,
    NumericError,
    Parameter,
    Tape,
    concat_cols,
    count_trainable,
    lstm_step,
    matmul,
    softmax_row,
    softplus,
    stack_rows,
    transpose,
    uniform_init,
)

CHECKPOINT_FORMAT = 1
DURATION_FLOOR = 1e-6  # stopping arithmetic floor for the raw-linear duration mode


# ------------------------------------------------------------
# Configuration
# ------------------------------------------------------------

@dataclass(frozen=True)
class BackboneConfig:
    feature_dim: int
    n_classes: int
    hidden_dim: int = 512
    encoding_dim: Optional[int] = None  # defaults to hidden_dim (no projection)
    embedding_dim: int = 32
    max_steps: int = 12
    attention: bool = True
    duration_activation: str = "softplus"  # or "linear": raw affine output, may go negative

    def __post_init__(self):
        for name in ("feature_dim", "hidden_dim", "embedding_dim", "max_steps"):
            if getattr(self, name) < 1:
                raise ConfigError("must be >= 1", name)
        if self.n_classes < 2:
            raise ConfigError("must be >= 2", "n_classes")
        if self.encoding_dim is not None and self.encoding_dim < 1:
            raise ConfigError("must be >= 1", "encoding_dim")
        if self.duration_activation not in ("softplus", "linear"):
            raise ConfigError("must be 'softplus' or 'linear'", "duration_activation")

    @property
    def d_I(self) -> int:
        return self.encoding_dim or self.hidden_dim


@with_config(CONFIG_BLOCK)
@dataclass(frozen=True)
class ModelConfig:
    """The `model` block of an experiment; dataset dims are filled in later."""
    hidden_dim: int = 512
    encoding_dim: Optional[int] = None
    embedding_dim: int = 32
    max_steps: int = 12
    attention: bool = True
    duration_activation: str = "softplus"

    def __post_init__(self):
        # Reuse the full validation with placeholder dataset dims.
        self.backbone(feature_dim=1, n_classes=2)

    def backbone(self, feature_dim: int, n_classes: int) -> BackboneConfig:
        return BackboneConfig(
            feature_dim=feature_dim,
            n_classes=n_classes,
            hidden_dim=self.hidden_dim,
            encoding_dim=self.encoding_dim,
            embedding_dim=self.embedding_dim,
            max_steps=self.max_steps,
            attention=self.attention,
            duration_activation=self.duration_activation,
        )


# ------------------------------------------------------------
# Sequence Types
# ------------------------------------------------------------

@dataclass
class VideoEncoding:
    I: Matrix  # (T, d_I)
    final_state: tuple[Matrix, Matrix]


@dataclass
class StepOutput:
    """Differentiable output of one decoder step."""
    class_dist: Matrix  # (1, K)
    duration: Matrix  # (1, 1)
    attn: Optional[Matrix]  # (1, T)


@dataclass
class AnticipatedStep:
    class_dist: np.ndarray
    duration: float
    attn_weights: Optional[np.ndarray] = None

    @property
    def label(self) -> int:
        return int(np.argmax(self.class_dist))


@dataclass
class AnticipatedSequence:
    steps: list[AnticipatedStep] = field(default_factory=list)
    stop_reason: str = "max-steps"  # or "horizon-covered"

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def labels(self) -> list[int]:
        return [s.label for s in self.steps]

    @property
    def durations(self) -> np.ndarray:
        return np.array([s.duration for s in self.steps], dtype=np.float64)

    def head(self, n: int) -> "AnticipatedSequence":
        if n > len(self.steps):
            raise ValueError(f"requested {n} steps from a {len(self.steps)}-step sequence")
        return AnticipatedSequence(list(self.steps[:n]), self.stop_reason)

    def segments(self) -> list[tuple[int, float]]:
        return [(s.label, s.duration) for s in self.steps]

    @classmethod
    def from_steps(cls, steps: list[StepOutput], stop_reason: str = "max-steps") -> "AnticipatedSequence":
        """Numeric copy of step outputs. Non-positive raw durations are floored at DURATION_FLOOR."""
        floored = [m + 1 for m, s in enumerate(steps) if s.duration.item() < DURATION_FLOOR]
        if floored:
            logging.warning(f"Floored non-positive durations at steps {floored} to {DURATION_FLOOR:g}")
        return cls(
            [
                AnticipatedStep(
                    class_dist=s.class_dist.value[0].copy(),
                    duration=max(s.duration.item(), DURATION_FLOOR),
                    attn_weights=None if s.attn is None else s.attn.value[0].copy(),
                )
                for s in steps
            ],
            stop_reason,
        )


def steps_to_cover(durations, horizon: float, max_steps: int) -> int:
    """Number of leading steps whose cumulative duration reaches the horizon (capped)."""
    cum = np.cumsum(np.maximum(np.asarray(durations, dtype=np.float64), DURATION_FLOOR))
    hit = np.flatnonzero(cum >= horizon - 1e-12)
    n = int(hit[0]) + 1 if len(hit) else len(cum)
    return max(1, min(n, max_steps))


# ------------------------------------------------------------
# Heads
# ------------------------------------------------------------

class AttentionProjection(Module):
    """H' = W H + b, stored transposed (d_h x d_I) for row-vector products."""

    def __init__(self, d_h: int, d_I: int, rng: np.random.Generator, name: str) -> None:
        self.W = Parameter(f"{name}.W", uniform_init(rng, (d_h, d_I), d_h))
        self.b = Parameter(f"{name}.b", uniform_init(rng, (1, d_I), d_h))


class DurationHead(Module):
    def __init__(self, width: int, rng: np.random.Generator, name: str) -> None:
        self.beta = Parameter(f"{name}.beta", uniform_init(rng, (width, 1), width))
        self.epsilon = Parameter(f"{name}.epsilon", uniform_init(rng, (1, 1), width))


def attention_score(tape: Tape, H_m: Matrix, I: Matrix, proj: AttentionProjection) -> tuple[Matrix, Matrix]:
    """softmax((W H_m + b) I^T / sqrt(d_I)) and the weighted sum of I's rows."""
    d_I = I.cols
    if H_m.cols != proj.W.shape[0] or proj.W.shape[1] != d_I:
        raise DimensionError(f"attention: hidden {H_m.shape}, encoding {I.shape}, projection {proj.W.shape}")
    Hp = matmul(H_m, tape.bind(proj.W)) + tape.bind(proj.b)
    logits = matmul(Hp, transpose(I)) * (1.0 / np.sqrt(d_I))
    weights = softmax_row(logits)
    return weights, matmul(weights, I)


# ------------------------------------------------------------
# Anticipator
# ------------------------------------------------------------

class Anticipator(Module):
    """
    Encoder-decoder anticipator. With conditional=True the first decoder
    input additionally carries an embedding of the weak label.
    """

    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator, name: str = "primary",
                 conditional: bool = False) -> None:
        self.cfg = cfg
        self.name = name
        self.conditional = conditional
        H, E, K, d_I = cfg.hidden_dim, cfg.embedding_dim, cfg.n_classes, cfg.d_I

        self.encoder = LSTMCell(cfg.feature_dim, H, rng, f"{name}.encoder")
        self.enc_proj = Linear(H, d_I, rng, f"{name}.enc_proj") if d_I != H else None
        self.decoder = LSTMCell(2 * E if conditional else E, H, rng, f"{name}.decoder")
        self.class_embedding = Parameter(f"{name}.class_embedding", uniform_init(rng, (K, E), K))
        self.start_embedding = Parameter(f"{name}.start_embedding", uniform_init(rng, (1, E), E))
        self.weak_embedding = (
            Parameter(f"{name}.weak_embedding", uniform_init(rng, (K, E), K)) if conditional else None
        )
        self.class_head = Linear(H, K, rng, f"{name}.class_head")
        self.attention = AttentionProjection(H, d_I, rng, f"{name}.attention")
        self.duration_head = DurationHead(d_I + H, rng, f"{name}.duration_head")
        self.plain_duration = Linear(H, 1, rng, f"{name}.plain_duration")

        # Only the active duration path is trainable.
        for p in self.attention.parameters() + self.duration_head.parameters():
            p.trainable = cfg.attention
        for p in self.plain_duration.parameters():
            p.trainable = not cfg.attention

    # --- encoder -------------------------------------------------------

    def encode(self, tape: Tape, observed_features: np.ndarray) -> VideoEncoding:
        feats = np.asarray(observed_features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] == 0:
            raise DimensionError(f"encode: need at least one observed frame, got shape {feats.shape}")
        if feats.shape[1] != self.cfg.feature_dim:
            raise DimensionError(f"encode: feature dim {feats.shape[1]}, model expects {self.cfg.feature_dim}")

        H = self.cfg.hidden_dim
        h = tape.constant(np.zeros((1, H)))
        c = tape.constant(np.zeros((1, H)))
        hidden = []
        for t in range(feats.shape[0]):
            h, c = lstm_step(tape, tape.constant(feats[t:t + 1]), h, c, self.encoder)
            hidden.append(h)
        I = stack_rows(hidden)
        if self.enc_proj is not None:
            I = self.enc_proj(tape, I)
        return VideoEncoding(I=I, final_state=(h, c))

    # --- decoder -------------------------------------------------------

    def first_input(self, tape: Tape, weak_label: Optional[int]) -> Matrix:
        start = tape.bind(self.start_embedding)
        if not self.conditional:
            return start
        if weak_label is None:
            raise ValueError(f"{self.name}: the conditional decoder needs a weak label")
        K = self.cfg.n_classes
        if not 0 <= int(weak_label) < K:
            raise IndexError(f"weak label {weak_label} outside 0..{K - 1}")
        one_hot = tape.constant(np.eye(K)[int(weak_label)])
        return concat_cols([start, matmul(one_hot, tape.bind(self.weak_embedding))])

    def next_input(self, tape: Tape, class_dist: Matrix) -> Matrix:
        emb = matmul(class_dist, tape.bind(self.class_embedding))
        if not self.conditional:
            return emb
        return concat_cols([emb, tape.constant(np.zeros((1, self.cfg.embedding_dim)))])

    def decode_step(self, tape: Tape, h_prev: Matrix, c_prev: Matrix, prev_input: Matrix,
                    I: Matrix) -> tuple[StepOutput, Matrix, Matrix]:
        h, c = lstm_step(tape, prev_input, h_prev, c_prev, self.decoder)
        class_dist = softmax_row(self.class_head(tape, h))

        attn = None
        if self.cfg.attention:
            attn, context = attention_score(tape, h, I, self.attention)
            raw = matmul(concat_cols([context, h_prev]), tape.bind(self.duration_head.beta))
            raw = raw + tape.bind(self.duration_head.epsilon)
        else:
            raw = self.plain_duration(tape, h)

        duration = softplus(raw) if self.cfg.duration_activation == "softplus" else raw
        if not np.isfinite(duration.value).all():
            raise NumericError(f"{self.name}: non-finite duration")
        return StepOutput(class_dist, duration, attn), h, c

    def rollout(self, tape: Tape, observed_features: np.ndarray, n_steps: int,
                weak_label: Optional[int] = None, horizon: Optional[float] = None,
                min_steps: int = 1) -> tuple[VideoEncoding, list[StepOutput]]:
        """
        Decode up to n_steps, feeding back the soft class distribution through
        the class embedding. With a horizon, stop once the cumulative duration
        covers it (but never before min_steps).
        """
        if n_steps < 1:
            raise ValueError("rollout needs at least one step")
        enc = self.encode(tape, observed_features)
        h, c = enc.final_state
        inp = self.first_input(tape, weak_label)
        steps: list[StepOutput] = []
        covered = 0.0
        for m in range(n_steps):
            out, h, c = self.decode_step(tape, h, c, inp, enc.I)
            steps.append(out)
            covered += max(out.duration.item(), DURATION_FLOOR)
            if horizon is not None and m + 1 >= min_steps and covered >= horizon - 1e-12:
                break
            inp = self.next_input(tape, out.class_dist)
        return enc, steps


def anticipate(model: Anticipator, observed_features: np.ndarray, horizon: float,
               weak_label: Optional[int] = None) -> AnticipatedSequence:
    """
    Roll out until the horizon is covered or max_steps is reached; the last
    duration is truncated so the sequence fills the horizon exactly.
    """
    if not horizon > 0:
        raise ConfigError(f"horizon must be positive, got {horizon}", "horizon")
    tape = Tape()
    _, steps = model.rollout(tape, observed_features, model.cfg.max_steps, weak_label=weak_label, horizon=horizon)
    seq = AnticipatedSequence.from_steps(steps)
    return truncate_to_horizon(seq, horizon)


def truncate_to_horizon(seq: AnticipatedSequence, horizon: float) -> AnticipatedSequence:
    covered = 0.0
    kept: list[AnticipatedStep] = []
    for step in seq.steps:
        if covered + step.duration >= horizon - 1e-12:
            kept.append(AnticipatedStep(step.class_dist, horizon - covered, step.attn_weights))
            return AnticipatedSequence(kept, "horizon-covered")
        kept.append(step)
        covered += step.duration
    return AnticipatedSequence(kept, "max-steps")


def count_parameters(model: Module) -> int:
    """Total trainable scalar count."""
    return count_trainable(model)


# ------------------------------------------------------------
# Checkpoint Files
# ------------------------------------------------------------

def write_checkpoint(path: str, header: dict[str, Any], state: dict[str, np.ndarray]) -> None:
    """JSON checkpoint: versioned header plus named parameter arrays."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT,
        **header,
        "parameters": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in state.items()
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)
    logging.info(f"Checkpoint written: {path} ({len(state)} arrays)")


def read_checkpoint(path: str) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    version = payload.pop("format_version", None)
    if version != CHECKPOINT_FORMAT:
        raise ConfigError(f"unsupported checkpoint format {version!r} in {path}", "checkpoint")
    params = payload.pop("parameters", {})
    state = {
        name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in params.items()
    }
    return payload, state

"""
training.py
Training algorithms: linear refinement (conditional step, then primary with
scheduled geometric-mean targets), adaptive refinement (conditional step,
primary + refiner on F, then on F + W), the no-refinement pseudo-label
ablation and the three supervised baselines.
"""

import logging
import math
import os
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from pydantic import with_config

import losses
from backbone import (
    AnticipatedSequence,
    Anticipator,
    BackboneConfig,
    count_parameters,
    read_checkpoint,
    write_checkpoint,
)
from config import CONFIG_BLOCK, ConfigError, to_dict
from dataset import AccessLog, WindowedSample
from diffcore import SGD, Module, Tape
from evaluation import evaluate
from refinement import (
    AdaptiveRefiner,
    ConditionalModule,
    PseudoLabel,
    RefineSchedule,
    alpha_at,
    linear_refine,
    make_pseudo_label,
)

MODES = ("linear", "adaptive", "pseudo", "baseline1", "baseline2", "baseline3")
DEFAULT_EPOCHS = {
    "linear": (20, 25, 0),
    "pseudo": (20, 25, 0),
    "adaptive": (15, 20, 20),
}


# ------------------------------------------------------------
# Configuration
# ------------------------------------------------------------

@with_config(CONFIG_BLOCK)
@dataclass
class TrainConfig:
    mode: str = "adaptive"
    n1: Optional[int] = None
    n2: Optional[int] = None
    n3: Optional[int] = None
    baseline_epochs: int = 25
    batch_size: int = 16
    learning_rate: float = 1e-3
    momentum: float = 0.9
    clip_norm: Optional[float] = 5.0
    alpha0: float = 30.0
    decay: float = 0.95
    floor: float = 0.5
    cond_train_fraction: float = 0.5
    val_fraction: float = 0.1
    refiner_init_alpha: float = 30.0
    loss_weights: dict[str, float] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"must be one of {', '.join(MODES)}", "mode")
        defaults = DEFAULT_EPOCHS.get(self.mode, (0, 0, 0))
        for name, default in zip(("n1", "n2", "n3"), defaults):
            if getattr(self, name) is None:
                setattr(self, name, default)
            if getattr(self, name) < 0:
                raise ConfigError("must be >= 0", name)
        if self.baseline_epochs < 0:
            raise ConfigError("must be >= 0", "baseline_epochs")
        if self.batch_size < 1:
            raise ConfigError("must be >= 1", "batch_size")
        if not self.learning_rate > 0:
            raise ConfigError("must be positive", "learning_rate")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("must lie in [0, 1)", "momentum")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError("must be positive or null", "clip_norm")
        if not 0.0 < self.cond_train_fraction <= 1.0:
            raise ConfigError("must lie in (0, 1]", "cond_train_fraction")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("must lie in [0, 1)", "val_fraction")
        if self.refiner_init_alpha < 0:
            raise ConfigError("must be >= 0", "refiner_init_alpha")
        RefineSchedule(self.alpha0, self.decay, self.floor)
        losses.validate_weights(self.loss_weights)

    @property
    def schedule(self) -> RefineSchedule:
        return RefineSchedule(self.alpha0, self.decay, self.floor)

    @property
    def weights(self) -> dict[str, float]:
        return losses.validate_weights(self.loss_weights)


# ------------------------------------------------------------
# Framework & Checkpoints
# ------------------------------------------------------------

class AnticipationFramework(Module):
    """Primary anticipator, conditional pseudo-labeller and optional adaptive refiner."""

    def __init__(self, cfg: BackboneConfig, seed: int = 0, with_refiner: bool = False,
                 refiner_init_alpha: float = 30.0) -> None:
        self.cfg = cfg
        self.primary = Anticipator(cfg, np.random.default_rng([seed, 11]), "primary")
        self.conditional = ConditionalModule(
            Anticipator(cfg, np.random.default_rng([seed, 13]), "conditional", conditional=True)
        )
        self.refiner = (
            AdaptiveRefiner(cfg.n_classes, np.random.default_rng([seed, 17]), refiner_init_alpha)
            if with_refiner else None
        )

    def digests(self) -> dict[str, str]:
        out = {"primary": self.primary.digest(), "conditional": self.conditional.model.digest()}
        if self.refiner is not None:
            out["refiner"] = self.refiner.digest()
        return out


def save_checkpoint(path: str, framework: AnticipationFramework, mode: str, phase: str) -> str:
    header = {
        "mode": mode,
        "phase": phase,
        "model": to_dict(framework.cfg),
        "attention": framework.cfg.attention,
        "conditional_frozen": framework.conditional.frozen,
        "n_parameters": count_parameters(framework),
    }
    write_checkpoint(path, header, framework.state_dict())
    return path


def load_checkpoint(path: str) -> tuple[dict, AnticipationFramework]:
    header, state = read_checkpoint(path)
    try:
        cfg = BackboneConfig(**header["model"])
    except (KeyError, TypeError) as e:
        raise ConfigError(f"checkpoint {path} has an unusable model header: {e}", "checkpoint")
    with_refiner = any(name.startswith("refiner.") for name in state)
    framework = AnticipationFramework(cfg, with_refiner=with_refiner)
    framework.load_state_dict(state)
    if header.get("conditional_frozen"):
        framework.conditional.freeze()
    return header, framework


# ------------------------------------------------------------
# Run Record
# ------------------------------------------------------------

@dataclass
class RunRecord:
    mode: str
    config: dict
    losses: list[dict] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)
    digests: list[dict] = field(default_factory=list)
    skipped_phases: list[str] = field(default_factory=list)
    phase_sizes: dict[int, tuple[int, int]] = field(default_factory=dict)  # phase -> (|F|, |W|)
    metrics: Optional[object] = None  # evaluation.MetricReport, filled by the run engine
    best_val_moc: Optional[float] = None
    wall_clock: float = 0.0
    access: AccessLog = field(default_factory=AccessLog)
    substitution_checks: int = 0
    substitution_violations: int = 0
    cancelled: bool = False
    pseudo_labels: dict[str, PseudoLabel] = field(default_factory=dict, repr=False)
    framework: Optional[AnticipationFramework] = field(default=None, repr=False)


# ------------------------------------------------------------
# Trainer
# ------------------------------------------------------------

StepFn = Callable[[Tape, list[WindowedSample], list[WindowedSample], Optional[float]], losses.LossBreakdown]


class Trainer:
    """Shared epoch/batch machinery for every training mode."""

    def __init__(self, framework: AnticipationFramework, config: TrainConfig, record: RunRecord,
                 out_dir: Optional[str] = None, progress_callback: Optional[Callable] = None,
                 is_cancelled: Optional[Callable] = None) -> None:
        self.fw = framework
        self.config = config
        self.record = record
        self.access = record.access
        self.out_dir = out_dir
        self.progress_callback = progress_callback
        self.is_cancelled = is_cancelled
        self.weights = config.weights
        self.rng = np.random.default_rng([config.seed, 2])
        self.pseudo_cache: dict[str, PseudoLabel] = {}
        self.validation: list[WindowedSample] = []
        self.best_state: Optional[dict[str, np.ndarray]] = None
        self.total_epochs = 0
        self.epochs_done = 0

    # --- data -----------------------------------------------------------

    def hold_out(self, full: Sequence[WindowedSample]) -> list[WindowedSample]:
        """Move val_fraction of F into the validation set; return the rest."""
        full = list(full)
        n_val = int(round(self.config.val_fraction * len(full)))
        if n_val >= len(full):
            n_val = 0
        order = self.rng.permutation(len(full))
        val_idx = set(order[:n_val].tolist())
        self.validation = [s for i, s in enumerate(full) if i in val_idx]
        for s in self.validation:
            self.access.targets(s)
        if self.validation:
            logging.info(f"Holding out {len(self.validation)} of {len(full)} fully-labelled samples for validation")
        return [s for i, s in enumerate(full) if i not in val_idx]

    def batches(self, full: Sequence[WindowedSample], weak: Sequence[WindowedSample]
                ) -> list[tuple[list[WindowedSample], list[WindowedSample]]]:
        """Shuffle F and W and interleave them proportionally across the epoch's steps."""
        n = len(full) + len(weak)
        if n == 0:
            return []
        n_steps = math.ceil(n / self.config.batch_size)
        f_parts = np.array_split(self.rng.permutation(len(full)), n_steps)
        w_parts = np.array_split(self.rng.permutation(len(weak)), n_steps)[::-1]
        return [
            ([full[i] for i in fp], [weak[i] for i in wp])
            for fp, wp in zip(f_parts, w_parts)
            if len(fp) + len(wp) > 0
        ]

    def n_gt_steps(self, sample: WindowedSample) -> int:
        return min(len(self.access.targets(sample)), self.fw.cfg.max_steps)

    def pseudo(self, sample: WindowedSample) -> PseudoLabel:
        cached = self.pseudo_cache.get(sample.id)
        if cached is not None:
            return cached
        c1 = self.access.weak_label(sample)
        pl = make_pseudo_label(self.fw.conditional, sample.observed_features, c1, sample.horizon_fraction)
        self.record.substitution_checks += 1
        if int(np.argmax(pl.sequence.steps[0].class_dist)) != c1:
            self.record.substitution_violations += 1
            logging.error(f"{sample.id}: pseudo-label step 1 does not carry the weak label {c1}")
        self.pseudo_cache[sample.id] = pl
        return pl

    # --- phases ---------------------------------------------------------

    def run_phase(self, phase: int, label: str, epochs: int, modules: Sequence[Module], step_fn: StepFn,
                  full: Sequence[WindowedSample], weak: Sequence[WindowedSample],
                  alpha_fn: Optional[Callable[[int], float]] = None, validate: bool = True) -> None:
        before = self.fw.digests()
        self.record.phase_sizes[phase] = (len(full), len(weak))
        if epochs == 0:
            logging.info(f"Phase {phase} ({label}) skipped: 0 epochs")
            self.record.skipped_phases.append(f"phase{phase}")
        else:
            logging.info(f"Phase {phase} ({label}): {epochs} epochs, |F|={len(full)} |W|={len(weak)}")

        params = [p for m in modules for p in m.parameters()]
        opt = SGD(params, lr=self.config.learning_rate, momentum=self.config.momentum,
                  clip_norm=self.config.clip_norm)

        for epoch in range(epochs):
            if self.is_cancelled and self.is_cancelled():
                logging.info(f"Training cancelled in phase {phase} at epoch {epoch}.")
                self.record.cancelled = True
                break
            alpha = alpha_fn(epoch) if alpha_fn else None
            sums: dict[str, list[float]] = defaultdict(list)
            norms = []
            for fb, wb in self.batches(full, weak):
                opt.zero_grad()
                tape = Tape()
                breakdown = step_fn(tape, fb, wb, alpha)
                tape.backward(breakdown.total)
                norms.append(opt.step())
                for name, value in breakdown.values().items():
                    sums[name].append(value)

            row = {"phase": phase, "epoch": epoch, "alpha": alpha if alpha is not None else float("nan")}
            for name in (*losses.TERM_NAMES, "total"):
                row[name] = float(np.mean(sums[name])) if sums[name] else float("nan")
            row["grad_norm"] = float(np.mean(norms)) if norms else float("nan")
            self.record.losses.append(row)
            logging.info(f"Phase {phase} epoch {epoch + 1}/{epochs}: loss={row['total']:.5f}")

            if validate:
                self._validate()
            self.epochs_done += 1
            if self.progress_callback:
                self.progress_callback(self.epochs_done, max(self.total_epochs, 1), f"Phase {phase}: epoch {epoch + 1}/{epochs}")

        self.record.digests.append({"phase": phase, "when": "start", **before})
        self.record.digests.append({"phase": phase, "when": "end", **self.fw.digests()})
        if self.out_dir:
            path = os.path.join(self.out_dir, "checkpoints", f"phase{phase}.ckpt")
            self.record.checkpoints.append(save_checkpoint(path, self.fw, self.config.mode, f"phase{phase}"))

    def _validate(self) -> None:
        if not self.validation:
            return
        moc = evaluate(self.fw.primary, self.validation).moc
        if self.record.best_val_moc is None or moc > self.record.best_val_moc:
            self.record.best_val_moc = moc
            self.best_state = self.fw.state_dict()
            logging.info(f"New best validation MoC: {moc:.4f}")

    def finish(self) -> None:
        if self.out_dir and self.best_state is not None:
            current = self.fw.state_dict()
            self.fw.load_state_dict(self.best_state)
            path = os.path.join(self.out_dir, "checkpoints", "best.ckpt")
            self.record.checkpoints.append(save_checkpoint(path, self.fw, self.config.mode, "best"))
            self.fw.load_state_dict(current)

    # --- step functions -------------------------------------------------

    def full_items(self, tape: Tape, model: Anticipator, batch: Sequence[WindowedSample],
                   conditional: bool = False) -> list[losses.FullItem]:
        items = []
        for s in batch:
            weak_label = self.access.weak_label(s) if conditional else None
            _, steps = model.rollout(tape, s.observed_features, self.n_gt_steps(s), weak_label=weak_label)
            items.append(losses.FullItem(steps, self.access.targets(s)))
        return items

    def cond_step(self, tape, fb, wb, alpha):
        items = self.full_items(tape, self.fw.conditional.model, fb, conditional=True)
        return losses.LossBreakdown({"label_full": losses.loss_cond(items)}, self.weights)

    def supervised_step(self, tape, fb, wb, alpha):
        primary = self.fw.primary
        weak_items = []
        for s in wb:
            _, steps = primary.rollout(tape, s.observed_features, 1)
            weak_items.append(losses.WeakItem(steps, self.access.weak_label(s)))
        return losses.loss_label(self.full_items(tape, primary, fb), weak_items, self.weights)

    def _weak_rollout(self, tape: Tape, s: WindowedSample, min_steps: int = 1):
        pl = self.pseudo(s)
        _, steps = self.fw.primary.rollout(
            tape, s.observed_features, self.fw.cfg.max_steps,
            horizon=s.horizon_fraction, min_steps=max(min_steps, pl.n_cover),
        )
        return steps, pl.aligned(len(steps))

    def _attention(self, steps, pseudo: AnticipatedSequence) -> Optional[losses.AttentionPair]:
        if not self.fw.cfg.attention:
            return None
        return losses.AttentionPair([st.attn for st in steps], [p.attn_weights for p in pseudo.steps])

    def linear_step(self, tape, fb, wb, alpha):
        """alpha=None trains on raw pseudo-labels."""
        weak_items, pairs = [], []
        for s in wb:
            steps, pseudo = self._weak_rollout(tape, s)
            primary_seq = AnticipatedSequence.from_steps(steps)
            refined = linear_refine(primary_seq, pseudo, math.inf if alpha is None else alpha)
            weak_items.append(losses.WeakItem(steps, self.access.weak_label(s), refined))
            pair = self._attention(steps, pseudo)
            if pair:
                pairs.append(pair)
        return losses.loss_prim(self.full_items(tape, self.fw.primary, fb), weak_items, pairs, self.weights)

    def adaptive_step(self, tape, fb, wb, alpha):
        refiner = self.fw.refiner
        full_items, weak_items, pairs = [], [], []
        for s in fb:
            steps, pseudo = self._weak_rollout(tape, s, min_steps=self.n_gt_steps(s))
            refined = refiner.refine(tape, steps, pseudo)
            full_items.append(losses.FullItem(steps, self.access.targets(s), refined))
            pair = self._attention(steps, pseudo)
            if pair:
                pairs.append(pair)
        for s in wb:
            steps, pseudo = self._weak_rollout(tape, s)
            refined = refiner.refine(tape, steps, pseudo)
            weak_items.append(losses.WeakItem(steps, self.access.weak_label(s), refined))
            pair = self._attention(steps, pseudo)
            if pair:
                pairs.append(pair)
        return losses.loss_adap(full_items, weak_items, pairs, self.weights)


# ------------------------------------------------------------
# Algorithms
# ------------------------------------------------------------

def _check_sets(full: Sequence[WindowedSample], weak: Sequence[WindowedSample]) -> None:
    if not full:
        raise ConfigError("the fully-labelled set is empty", "split.full_fraction")
    if any(s.is_weak for s in full):
        raise ConfigError("fully-labelled set contains stripped samples", "split")
    overlap = {s.id for s in full} & {s.id for s in weak}
    if overlap:
        raise ConfigError(f"full and weak sets share {len(overlap)} samples", "split")


def _new_record(config: TrainConfig, backbone: BackboneConfig) -> RunRecord:
    return RunRecord(mode=config.mode, config={"training": to_dict(config), "model": to_dict(backbone)})


def _finish(trainer: Trainer, record: RunRecord, started: float) -> RunRecord:
    trainer.fw.conditional.check_frozen()
    trainer.finish()
    record.framework = trainer.fw
    record.pseudo_labels = trainer.pseudo_cache
    record.wall_clock = time.perf_counter() - started
    logging.info(f"Training ({record.mode}) finished in {record.wall_clock:.1f}s")
    return record


def train_linear(full: Sequence[WindowedSample], weak: Sequence[WindowedSample], config: TrainConfig,
                 backbone: BackboneConfig, out_dir: Optional[str] = None,
                 progress_callback: Optional[Callable] = None,
                 is_cancelled: Optional[Callable] = None) -> RunRecord:
    """
    Step 1 trains the conditional module on F and freezes it. Step 2 trains the
    primary on F with ground truth and on W with refined pseudo-labels, alpha
    following the decay schedule. mode="pseudo" uses raw pseudo-labels instead.
    """
    if config.mode not in ("linear", "pseudo"):
        raise ConfigError(f"train_linear cannot run mode '{config.mode}'", "mode")
    _check_sets(full, weak)
    started = time.perf_counter()
    record = _new_record(config, backbone)
    fw = AnticipationFramework(backbone, config.seed)
    trainer = Trainer(fw, config, record, out_dir, progress_callback, is_cancelled)
    trainer.total_epochs = config.n1 + config.n2

    train_full = trainer.hold_out(full)
    trainer.run_phase(1, "conditional", config.n1, [fw.conditional.model], trainer.cond_step,
                      train_full, [], validate=False)
    fw.conditional.freeze()

    schedule = config.schedule
    alpha_fn = None if config.mode == "pseudo" else (lambda e: alpha_at(schedule, e))
    if not record.cancelled:
        trainer.run_phase(2, "primary", config.n2, [fw.primary], trainer.linear_step,
                          train_full, list(weak), alpha_fn=alpha_fn)
    return _finish(trainer, record, started)


def train_adaptive(full: Sequence[WindowedSample], weak: Sequence[WindowedSample], config: TrainConfig,
                   backbone: BackboneConfig, out_dir: Optional[str] = None,
                   progress_callback: Optional[Callable] = None,
                   is_cancelled: Optional[Callable] = None) -> RunRecord:
    """
    Step 1 trains the conditional module on a cond_train_fraction share of F.
    Step 2 trains primary and refiner jointly on F; Step 3 adds W.
    """
    if config.mode != "adaptive":
        raise ConfigError(f"train_adaptive cannot run mode '{config.mode}'", "mode")
    _check_sets(full, weak)
    started = time.perf_counter()
    record = _new_record(config, backbone)
    fw = AnticipationFramework(backbone, config.seed, with_refiner=True,
                               refiner_init_alpha=config.refiner_init_alpha)
    trainer = Trainer(fw, config, record, out_dir, progress_callback, is_cancelled)
    trainer.total_epochs = config.n1 + config.n2 + config.n3

    train_full = trainer.hold_out(full)
    if config.cond_train_fraction * len(train_full) < 1:
        raise ConfigError(
            f"{config.cond_train_fraction} of {len(train_full)} fully-labelled samples is less than one",
            "cond_train_fraction",
        )
    n_cond = math.ceil(config.cond_train_fraction * len(train_full) - 1e-9)
    cond_idx = sorted(trainer.rng.permutation(len(train_full))[:n_cond].tolist())
    cond_full = [train_full[i] for i in cond_idx]

    trainer.run_phase(1, "conditional", config.n1, [fw.conditional.model], trainer.cond_step,
                      cond_full, [], validate=False)
    fw.conditional.freeze()

    modules = [fw.primary, fw.refiner]
    if not record.cancelled:
        trainer.run_phase(2, "primary+refiner on F", config.n2, modules, trainer.adaptive_step, train_full, [])
    if not record.cancelled:
        trainer.run_phase(3, "primary+refiner on F+W", config.n3, modules, trainer.adaptive_step,
                          train_full, list(weak))
    return _finish(trainer, record, started)


def train_baseline(kind: int, full: Sequence[WindowedSample], weak: Sequence[WindowedSample],
                   config: TrainConfig, backbone: BackboneConfig, out_dir: Optional[str] = None,
                   progress_callback: Optional[Callable] = None,
                   is_cancelled: Optional[Callable] = None) -> RunRecord:
    """
    Supervised baselines on the primary alone:
    1 = every training video fully labelled (pass them all as `full`),
    2 = F only, 3 = F plus the step-1 weak-label term on W.
    """
    if kind not in (1, 2, 3):
        raise ConfigError(f"unknown baseline kind {kind}", "mode")
    if kind == 1 and weak:
        raise ConfigError("baseline 1 trains on fully-labelled videos only", "split.full_fraction")
    _check_sets(full, weak)
    started = time.perf_counter()
    record = _new_record(config, backbone)
    fw = AnticipationFramework(backbone, config.seed)
    trainer = Trainer(fw, config, record, out_dir, progress_callback, is_cancelled)
    trainer.total_epochs = config.baseline_epochs

    train_full = trainer.hold_out(full)
    train_weak = list(weak) if kind == 3 else []
    trainer.run_phase(1, f"baseline {kind}", config.baseline_epochs, [fw.primary], trainer.supervised_step,
                      train_full, train_weak)
    return _finish(trainer, record, started)

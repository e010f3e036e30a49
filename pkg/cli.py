"""
cli.py
Command-line entry point for densea: corpus generation, training, evaluation,
sweeps and exports for external plotting.

Exit codes: 0 success, 2 invalid configuration, 3 numeric failure, 4 I/O.
"""

import argparse
import dataclasses
import logging
import os
import sys
from typing import Optional, Sequence

import dataset
import parsing
import reporting
from backbone import anticipate
from config import ConfigError, config
from dataset import GrammarError
from diffcore import DimensionError, NumericError
from run_engine import (
    ExperimentConfig,
    RunEngine,
    build_corpus,
    evaluate_grid,
    load_experiment,
    partition,
    run_seed_sweep,
    run_split_sweep,
)
from training import load_checkpoint

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


class CapabilityError(RuntimeError):
    """The checkpoint cannot provide what the command asks for."""


# ------------------------------------------------------------
# Logging
# ------------------------------------------------------------

def setup_logging(out_dir: Optional[str] = None) -> None:
    """
    Configure logging to <out_dir>/densea.log and the console.
    Level comes from config.log_level (DENSEA_LOG overrides).
    """
    level_str = config.log_level.upper()

    if level_str == "NONE":
        logging.getLogger().handlers = []
        logging.getLogger().setLevel(logging.CRITICAL + 1)
        return

    level_map = {
        "WARNING": logging.WARNING,
        "INFO": logging.INFO,
        "DEBUG": logging.DEBUG,
    }
    target_level = level_map.get(level_str, logging.INFO)

    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stdout)]
    try:
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            handlers.insert(0, logging.FileHandler(os.path.join(out_dir, config.log_name), mode="w", encoding="utf-8"))
        logging.basicConfig(
            level=target_level,
            format="%(asctime)s [%(levelname)s] %(message)s",
            handlers=handlers,
            force=True,
        )
    except PermissionError:
        # Fallback to Console Only if the file cannot be opened
        logging.basicConfig(
            level=target_level,
            format="%(asctime)s [%(levelname)s] [FILE LOCKED] %(message)s",
            handlers=[logging.StreamHandler(sys.stdout)],
            force=True,
        )
        logging.warning(f"Could not write {config.log_name} in {out_dir}. Logging to console only.")

    logging.captureWarnings(True)

    def handle_exception(exc_type, exc_value, exc_traceback):
        if issubclass(exc_type, KeyboardInterrupt):
            sys.__excepthook__(exc_type, exc_value, exc_traceback)
            return
        logging.error("Uncaught exception", exc_info=(exc_type, exc_value, exc_traceback))

    sys.excepthook = handle_exception


# ------------------------------------------------------------
# Helpers
# ------------------------------------------------------------

def _default_out(args, experiment: ExperimentConfig) -> str:
    if args.out:
        return args.out
    name = args.command
    if args.command in ("train", "sweep-seeds", "sweep-split"):
        name = f"{args.command}-{experiment.training.mode}-seed{experiment.training.seed}"
    return os.path.join(config.runs_dir, name)


def _load_model(path: str, experiment: ExperimentConfig):
    header, framework = load_checkpoint(path)
    cfg = framework.cfg
    ds = experiment.dataset
    if cfg.feature_dim != ds.feature_dim:
        raise ConfigError(f"checkpoint expects {cfg.feature_dim}-dim features, config has {ds.feature_dim}",
                          "dataset.feature_dim")
    if cfg.n_classes != ds.n_classes:
        raise ConfigError(f"checkpoint has {cfg.n_classes} classes, config has {ds.n_classes}", "dataset.n_classes")
    return header, framework


def _find_video(corpus, video_id: str):
    for sample in corpus:
        if sample.id == video_id:
            return sample
    raise ConfigError(f"unknown video '{video_id}'", "video_id")


# ------------------------------------------------------------
# Commands
# ------------------------------------------------------------

def cmd_generate(args, experiment: ExperimentConfig, out_dir: str) -> str:
    ds = experiment.dataset
    corpus = dataset.generate_corpus(ds.vocabulary(), ds.grammar(), ds.n_videos, ds.corpus_seed)
    manifest = parsing.write_corpus(out_dir, corpus, ds.n_classes)
    summary = reporting.corpus_summary(corpus)
    summary["expected_seconds"] = ds.grammar().expected_video_seconds
    reporting.write_json(os.path.join(out_dir, "corpus_summary.json"), summary)
    print(f"Videos: {summary['n_videos']} | Mean duration: {summary.get('mean_seconds', 0.0):.1f}s "
          f"(+- {summary.get('std_seconds', 0.0):.1f}) | Mean segments: {summary.get('mean_segments', 0.0):.1f}")
    print(f"Manifest: {manifest}")
    return manifest


def cmd_train(args, experiment: ExperimentConfig, out_dir: str) -> str:
    record = RunEngine().run(experiment, out_dir=out_dir)
    if record.metrics is not None:
        print(f"Test MoC: {record.metrics.moc:.4f} | Per-step accuracy: "
              + ", ".join(f"{a:.3f}" for a in record.metrics.per_step_accuracy))
    print(f"Run directory: {out_dir}")
    return out_dir


def cmd_eval(args, experiment: ExperimentConfig, out_dir: str) -> str:
    _, framework = _load_model(args.checkpoint, experiment)
    ev = experiment.evaluation
    if args.observed or args.predicted:
        ev = dataclasses.replace(ev, observed=args.observed or ev.observed, predicted=args.predicted or ev.predicted)

    corpus = build_corpus(experiment.dataset)
    train_videos, test_videos = partition(corpus, experiment.dataset)
    videos = train_videos if args.partition == "train" else test_videos
    reports = evaluate_grid(framework, videos, ev, seed=experiment.training.seed, config_hash=experiment.digest())

    path = reporting.write_json(os.path.join(out_dir, "metrics.json"), [r.to_dict() for r in reports])
    grid = reporting.moc_grid(reports)
    reporting.write_csv(os.path.join(out_dir, "moc_grid.csv"), grid)
    if not grid.empty:
        print(grid.to_string(index=False))
    return path


def cmd_export_attention(args, experiment: ExperimentConfig, out_dir: str) -> str:
    _, framework = _load_model(args.checkpoint, experiment)
    if not framework.cfg.attention:
        raise CapabilityError("checkpoint was trained without duration attention")
    split = experiment.dataset.split
    sample = _find_video(build_corpus(experiment.dataset), args.video_id)
    window = dataset.window(sample, split.observed_fraction, split.predicted_fraction)

    seq = anticipate(framework.primary, window.observed_features, window.horizon_fraction)
    attn = reporting.attention_frame(seq)
    pooled = reporting.pooled_attention(attn, sample.frame_labels[:window.observed_frames])
    path = reporting.write_csv(os.path.join(out_dir, f"attention_{sample.id}.csv"), attn)
    reporting.write_csv(os.path.join(out_dir, f"attention_{sample.id}_pooled.csv"), pooled)
    print(f"Attention matrix {len(seq)} x {window.observed_frames} written to {path}")
    return path


def cmd_export_segments(args, experiment: ExperimentConfig, out_dir: str) -> str:
    _, framework = _load_model(args.checkpoint, experiment)
    split = experiment.dataset.split
    sample = _find_video(build_corpus(experiment.dataset), args.video_id)
    window = dataset.window(sample, split.observed_fraction, split.predicted_fraction)

    seq = anticipate(framework.primary, window.observed_features, window.horizon_fraction)
    df = reporting.segments_frame(window, seq, split.observed_fraction, experiment.dataset.vocabulary().classes)
    path = reporting.write_csv(os.path.join(out_dir, f"segments_{sample.id}.csv"), df)
    print(f"Segments written to {path}")
    return path


def cmd_sweep_split(args, experiment: ExperimentConfig, out_dir: str) -> str:
    rows = run_split_sweep(experiment, args.fractions, n_seeds=args.n_seeds, workers=args.workers)
    df = reporting.split_sweep_frame(rows)
    path = reporting.write_csv(os.path.join(out_dir, "split_sweep.csv"), df)
    print(df.to_string(index=False))
    return path


def cmd_sweep_seeds(args, experiment: ExperimentConfig, out_dir: str) -> str:
    result = run_seed_sweep(experiment, n_seeds=args.n_seeds, workers=args.workers)
    path = reporting.write_csv(os.path.join(out_dir, "sweep.csv"), result.runs)
    reporting.write_json(os.path.join(out_dir, "sweep_summary.json"), reporting.sweep_summary(result))
    print(f"MoC over {len(result.runs)} seeds: {result.mean['moc']:.4f} +- {result.std['moc']:.4f}")
    return path


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "export-attention": cmd_export_attention,
    "export-segments": cmd_export_segments,
    "sweep-split": cmd_sweep_split,
    "sweep-seeds": cmd_sweep_seeds,
}


# ------------------------------------------------------------
# Argument Parsing
# ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="densea", description="Weakly-supervised dense action anticipation.")
    parser.add_argument("--config", help="experiment JSON file (defaults apply when omitted)")
    parser.add_argument("--seed", type=int, help="overrides training.seed and dataset.split.seed")
    parser.add_argument("--out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("generate", help="write a synthetic corpus and its manifest")
    sub.add_parser("train", help="train the configured mode and evaluate on the test partition")

    p = sub.add_parser("eval", help="evaluate a checkpoint over the observed x predicted grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--observed", type=float, nargs="+")
    p.add_argument("--predicted", type=float, nargs="+")
    p.add_argument("--partition", choices=("test", "train"), default="test")

    for name in ("export-attention", "export-segments"):
        p = sub.add_parser(name)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--video-id", required=True)

    p = sub.add_parser("sweep-split", help="MoC mean and std per fully-labelled fraction")
    p.add_argument("--fractions", type=float, nargs="+")
    p.add_argument("--n-seeds", type=int)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("sweep-seeds", help="MoC mean and std over seeds")
    p.add_argument("--n-seeds", type=int)
    p.add_argument("--workers", type=int)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.out)

    try:
        experiment = load_experiment(args.config)
        if args.seed is not None:
            experiment = experiment.with_seed(args.seed)
        out_dir = _default_out(args, experiment)
        os.makedirs(out_dir, exist_ok=True)
        if not args.out:
            setup_logging(out_dir)
        logging.info(f"Command '{args.command}' | config={args.config or 'defaults'} | out={out_dir}")
        COMMANDS[args.command](args, experiment, out_dir)
        return EXIT_OK
    except parsing.FeatureFileError as e:
        logging.error(f"Feature file error: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, GrammarError, CapabilityError) as e:
        logging.error(f"Invalid configuration: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DimensionError, NumericError) as e:
        logging.error(f"Numeric failure: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        logging.error(f"I/O error: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

"""
reporting.py
Report assembly for densea.

This module is responsible for:
- Loss curves and data-access audits as CSV.
- Metrics, pseudo-label dumps and sweep summaries as JSON.
- Observed x predicted MoC tables and split sweeps.
- Attention heat-map and segmentation exports for external plotting.
"""

import json
import os
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from backbone import AnticipatedSequence
from dataset import AccessLog, VideoSample, WindowedSample, run_lengths
from losses import TERM_NAMES

# ------------------------------------------------------------
# Constants
# ------------------------------------------------------------

PREFERRED_COLUMN_ORDER = [
    "phase",
    "epoch",
    "alpha",
    *TERM_NAMES,
    "total",
    "grad_norm",
]


def apply_column_order(df: pd.DataFrame) -> pd.DataFrame:
    """Reorder DataFrame columns based on PREFERRED_COLUMN_ORDER; unknown columns go last."""
    cols = [c for c in PREFERRED_COLUMN_ORDER if c in df.columns]
    rest = [c for c in df.columns if c not in cols]
    return df[cols + rest]


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def write_json(path: str, data) -> str:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
    return path


def write_csv(path: str, df: pd.DataFrame) -> str:
    _ensure_parent(path)
    df.to_csv(path, index=False)
    return path


# ------------------------------------------------------------
# Training artifacts
# ------------------------------------------------------------

def losses_frame(rows: Sequence[dict]) -> pd.DataFrame:
    """One row per (phase, epoch) with every loss term; absent terms are NaN."""
    if not rows:
        return pd.DataFrame(columns=PREFERRED_COLUMN_ORDER)
    return apply_column_order(pd.DataFrame(list(rows)))


def access_frame(access: AccessLog) -> pd.DataFrame:
    return pd.DataFrame(access.rows(), columns=["sample_id", "field"])


def write_pseudo_labels(path: str, items: Sequence[tuple[str, AnticipatedSequence]]) -> str:
    """Per-video dump: [{id, steps: [{class_dist, duration}]}]."""
    payload = [
        {
            "id": vid,
            "steps": [{"class_dist": s.class_dist.tolist(), "duration": s.duration} for s in seq.steps],
        }
        for vid, seq in items
    ]
    return write_json(path, payload)


# ------------------------------------------------------------
# Metric tables
# ------------------------------------------------------------

def moc_grid(reports: Sequence) -> pd.DataFrame:
    """Pivot MetricReports into an observed x predicted MoC table."""
    df = pd.DataFrame([{"observed": r.observed, "predicted": r.predicted, "moc": r.moc} for r in reports])
    if df.empty:
        return df
    grid = df.pivot_table(index="observed", columns="predicted", values="moc", aggfunc="mean")
    grid.columns = [f"{c:g}" for c in grid.columns]
    return grid.reset_index()


def split_sweep_frame(rows: Sequence[dict]) -> pd.DataFrame:
    df = pd.DataFrame(list(rows), columns=["fraction", "mode", "moc_mean", "moc_std", "n_seeds"])
    return df.sort_values(["fraction", "mode"], kind="stable").reset_index(drop=True)


def sweep_summary(result) -> dict:
    """Mean and n-1 standard deviation per metric of a SweepResult."""
    return {
        "n_seeds": int(len(result.runs)),
        "mean": result.mean,
        "std": result.std,
    }


# ------------------------------------------------------------
# Corpus summary
# ------------------------------------------------------------

def corpus_summary(corpus: Sequence[VideoSample]) -> dict:
    """Video count, classes seen, mean/std duration in seconds and mean segments per video."""
    if not corpus:
        return {"n_videos": 0}
    df = pd.DataFrame(
        {
            "seconds": [s.seconds for s in corpus],
            "frames": [s.n_frames for s in corpus],
            "segments": [len(run_lengths(s.frame_labels)) for s in corpus],
        }
    )
    classes = set()
    for s in corpus:
        classes.update(np.unique(s.frame_labels).tolist())
    return {
        "n_videos": len(corpus),
        "n_classes_seen": len(classes),
        "mean_seconds": float(df["seconds"].mean()),
        "std_seconds": float(df["seconds"].std(ddof=1)) if len(df) > 1 else 0.0,
        "mean_frames": float(df["frames"].mean()),
        "mean_segments": float(df["segments"].mean()),
    }


# ------------------------------------------------------------
# Exports
# ------------------------------------------------------------

def attention_frame(seq: AnticipatedSequence) -> pd.DataFrame:
    """Rows = predicted steps, columns = observed frames."""
    if not seq.steps or any(s.attn_weights is None for s in seq.steps):
        raise ValueError("sequence carries no attention weights")
    matrix = np.vstack([s.attn_weights for s in seq.steps])
    df = pd.DataFrame(matrix, columns=[f"frame_{t}" for t in range(matrix.shape[1])])
    df.insert(0, "step", np.arange(1, len(seq.steps) + 1))
    df.insert(1, "class_id", seq.labels)
    return df


def pooled_attention(attn: pd.DataFrame, observed_labels: Sequence[int]) -> pd.DataFrame:
    """Mean attention weight per observed ground-truth segment."""
    frame_cols = [c for c in attn.columns if c.startswith("frame_")]
    if len(frame_cols) != len(observed_labels):
        raise ValueError(f"{len(frame_cols)} attention columns for {len(observed_labels)} observed frames")
    out = attn[["step", "class_id"]].copy()
    start = 0
    for i, (cls, n) in enumerate(run_lengths(observed_labels)):
        out[f"seg{i}_class{cls}"] = attn[frame_cols[start:start + n]].mean(axis=1)
        start += n
    return out


def segments_frame(window: WindowedSample, seq: AnticipatedSequence, observed_fraction: float,
                   class_names: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """Ground-truth and predicted segments side by side over [X, X+Y] as video fractions."""
    if window.target_segments is None:
        raise ValueError(f"{window.id}: no ground-truth segments for a weak sample")
    rows = []
    tracks = (
        ("gt", [(s.class_id, s.duration) for s in window.target_segments]),
        ("pred", seq.segments()),
    )
    for track, segs in tracks:
        start = observed_fraction
        for i, (cls, dur) in enumerate(segs):
            end = observed_fraction + window.horizon_fraction if i == len(segs) - 1 else start + dur
            rows.append({
                "track": track,
                "start_fraction": start,
                "end_fraction": end,
                "class_id": int(cls),
                "class": class_names[cls] if class_names else str(cls),
            })
            start = end
    return pd.DataFrame(rows)

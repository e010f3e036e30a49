"""
parsing.py
Corpus ingestion and persistence for densea: per-video feature files, the
corpus manifest and the full/weak split files.

Feature file layout (text):
    frames=<T> dim=<D> fps=<F> classes=<K>
    T lines of D space-separated decimals
    one line of T space-separated integer labels
"""

import json
import logging
import os
from typing import Optional, Sequence

import numpy as np

from dataset import VideoSample, WindowedSample


class FeatureFileError(ValueError):
    """Malformed feature file. The message names the file and line."""

    def __init__(self, path: str, line: Optional[int], message: str):
        self.path = path
        self.line = line
        where = f"{path}:{line}" if line is not None else path
        super().__init__(f"{where}: {message}")


HEADER_KEYS = ("frames", "dim", "fps", "classes")


# ------------------------------------------------------------
# Feature Files
# ------------------------------------------------------------

def _parse_header(path: str, line: str) -> dict[str, float]:
    fields = {}
    for token in line.split():
        key, sep, value = token.partition("=")
        if not sep or key not in HEADER_KEYS:
            raise FeatureFileError(path, 1, f"unexpected header token '{token}'")
        try:
            fields[key] = float(value) if key == "fps" else int(value)
        except ValueError:
            raise FeatureFileError(path, 1, f"header value for '{key}' is not a number: '{value}'")
    missing = [k for k in HEADER_KEYS if k not in fields]
    if missing:
        raise FeatureFileError(path, 1, f"header is missing {', '.join(missing)}")
    if fields["frames"] < 1 or fields["dim"] < 1 or fields["classes"] < 2 or not fields["fps"] > 0:
        raise FeatureFileError(path, 1, "header needs frames >= 1, dim >= 1, classes >= 2 and fps > 0")
    return fields


def _locate_bad_row(path: str, rows: Sequence[str], D: int) -> None:
    """Scan feature rows one by one to name the first malformed line."""
    for i, line in enumerate(rows):
        parts = line.split()
        if len(parts) != D:
            raise FeatureFileError(path, i + 2, f"row has {len(parts)} values, header says dim={D}")
        try:
            np.array(parts, dtype=np.float64)
        except ValueError as e:
            raise FeatureFileError(path, i + 2, f"bad feature value ({e})")
    raise FeatureFileError(path, 2, "feature rows could not be parsed")


def ingest_features(path: str, video_id: Optional[str] = None) -> VideoSample:
    """Parse one feature file into a VideoSample."""
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise FeatureFileError(path, None, "empty file")

    header = _parse_header(path, lines[0])
    T, D, K = header["frames"], header["dim"], header["classes"]
    if len(lines) != T + 2:
        raise FeatureFileError(path, len(lines), f"expected {T + 2} lines for {T} frames, found {len(lines)}")

    rows = lines[1:T + 1]
    try:
        feats = np.loadtxt(rows, dtype=np.float64, comments=None, ndmin=2)
    except ValueError:
        feats = None
    if feats is None or feats.shape != (T, D):
        _locate_bad_row(path, rows, D)
    if not np.all(np.isfinite(feats)):
        bad = int(np.flatnonzero(~np.isfinite(feats).all(axis=1))[0]) + 2
        raise FeatureFileError(path, bad, "non-finite feature value")

    label_line = T + 2
    parts = lines[label_line - 1].split()
    if len(parts) != T:
        raise FeatureFileError(path, label_line, f"{len(parts)} labels for {T} frames")
    try:
        labels = np.array(parts, dtype=np.int64)
    except ValueError as e:
        raise FeatureFileError(path, label_line, f"bad label ({e})")
    if labels.min() < 0 or labels.max() >= K:
        raise FeatureFileError(path, label_line, f"labels must lie in 0..{K - 1}")

    if video_id is None:
        video_id = os.path.splitext(os.path.basename(path))[0]
    return VideoSample(id=video_id, features=feats, frame_labels=labels, fps=header["fps"])


def write_feature_file(path: str, sample: VideoSample, n_classes: int) -> None:
    """Inverse of ingest_features; floats are written with repr so values round-trip exactly."""
    T, D = sample.features.shape
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"frames={T} dim={D} fps={sample.fps!r} classes={n_classes}\n")
        for row in sample.features:
            f.write(" ".join(repr(float(v)) for v in row) + "\n")
        f.write(" ".join(str(int(c)) for c in sample.frame_labels) + "\n")


# ------------------------------------------------------------
# Manifest
# ------------------------------------------------------------

def write_corpus(out_dir: str, corpus: Sequence[VideoSample], n_classes: int) -> str:
    """Write one feature file per video plus manifest.json; returns the manifest path."""
    feat_dir = os.path.join(out_dir, "features")
    os.makedirs(feat_dir, exist_ok=True)
    entries = []
    for sample in corpus:
        rel = os.path.join("features", f"{sample.id}.txt")
        write_feature_file(os.path.join(out_dir, rel), sample, n_classes)
        entries.append({"id": sample.id, "path": rel})

    manifest = os.path.join(out_dir, "manifest.json")
    with open(manifest, "w", encoding="utf-8") as f:
        json.dump(entries, f, indent=2)
    logging.info(f"Wrote {len(entries)} feature files and manifest to {out_dir}")
    return manifest


def read_manifest(path: str) -> list[dict[str, str]]:
    with open(path, "r", encoding="utf-8") as f:
        try:
            entries = json.load(f)
        except json.JSONDecodeError as e:
            raise FeatureFileError(path, e.lineno, f"manifest is not valid JSON ({e.msg})")
    if not isinstance(entries, list) or not all(isinstance(e, dict) and {"id", "path"} <= set(e) for e in entries):
        raise FeatureFileError(path, None, "manifest must be a list of {id, path} objects")
    ids = [e["id"] for e in entries]
    if len(set(ids)) != len(ids):
        raise FeatureFileError(path, None, "manifest lists duplicate video ids")
    return entries


def load_corpus(manifest_path: str) -> list[VideoSample]:
    """Ingest every video a manifest lists. Paths resolve relative to the manifest."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    corpus = []
    for entry in read_manifest(manifest_path):
        path = entry["path"] if os.path.isabs(entry["path"]) else os.path.join(base, entry["path"])
        corpus.append(ingest_features(path, video_id=entry["id"]))
    logging.info(f"Loaded {len(corpus)} videos from {manifest_path}")
    return corpus


# ------------------------------------------------------------
# Split Files
# ------------------------------------------------------------

def write_split(path: str, seed: int, full: Sequence[WindowedSample], weak: Sequence[WindowedSample]) -> None:
    data = {"seed": seed, "full_ids": [s.id for s in full], "weak_ids": [s.id for s in weak]}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2)


"""Dataset CSVs and vertical (feature-wise) partitioning across providers.

CSV layout: a header row, numeric cells, and an optional column named
``label`` holding the class (only the label provider's file has it).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigurationError

LABEL = "label"
# Train/test sizes per dataset.
SPLITS = {"iris": (120, 30), "wine": (142, 36)}


@dataclass
class Block:
    """One provider's columns; ``labels`` is set only for the label holder."""

    columns: list[str]
    values: np.ndarray
    labels: Optional[np.ndarray] = None


def load_builtin(name: str) -> tuple[np.ndarray, np.ndarray, list[str]]:
    from sklearn import datasets as skd

    loaders = {"iris": skd.load_iris, "wine": skd.load_wine}
    if name not in loaders:
        raise ConfigurationError(f"unknown built-in dataset {name!r}; have {sorted(loaders)}")
    d = loaders[name]()
    cols = [c.replace(" ", "_").replace("(cm)", "cm").replace("/", "_") for c in d.feature_names]
    return d.data.astype(np.float64), d.target.astype(np.int64), cols


def split_columns(n_features: int, parts: Sequence[int]) -> list[list[int]]:
    """Column indices per provider for a split such as (2, 1, 1)."""
    if sum(parts) != n_features or any(p < 0 for p in parts):
        raise ConfigurationError(f"split {tuple(parts)} does not cover {n_features} features")
    out, start = [], 0
    for p in parts:
        out.append(list(range(start, start + p)))
        start += p
    return out


def default_split(n_features: int) -> tuple[int, int, int]:
    base, extra = divmod(n_features, 3)
    return tuple(base + (1 if k < extra else 0) for k in range(3))


def write_csv(path: Union[str, Path], columns: list[str], values: np.ndarray,
              labels: Optional[np.ndarray] = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns + ([LABEL] if labels is not None else []))
        for r in range(values.shape[0]):
            row = [repr(float(v)) for v in values[r]]
            if labels is not None:
                row.append(str(int(labels[r])))
            w.writerow(row)


def write_vertical(name: str, out_dir: Union[str, Path], parts: Optional[Sequence[int]] = None,
                   label_provider: int = 0) -> list[Path]:
    """Export a built-in dataset as three provider CSVs."""
    X, y, cols = load_builtin(name)
    parts = parts or default_split(X.shape[1])
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, idx in enumerate(split_columns(X.shape[1], parts)):
        p = out_dir / f"{name}_provider{k}.csv"
        write_csv(p, [cols[i] for i in idx], X[:, idx], y if k == label_provider else None)
        paths.append(p)
    return paths


def read_block(path: Union[str, Path]) -> Block:
    """Read one provider CSV; errors name the file and line."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigurationError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    label_col = header.index(LABEL) if LABEL in header else None
    feat_cols = [k for k in range(len(header)) if k != label_col]
    vals, labels = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ConfigurationError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
        try:
            vals.append([float(row[k]) for k in feat_cols])
            if label_col is not None:
                labels.append(row[label_col].strip())
        except ValueError as exc:
            raise ConfigurationError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
    values = np.array(vals, dtype=np.float64).reshape(len(vals), len(feat_cols))
    lab = None
    if label_col is not None:
        try:
            lab = np.array([int(float(v)) for v in labels], dtype=np.int64)
        except ValueError as exc:
            raise ConfigurationError(f"{path}: unknown label ({exc})") from None
    return Block([header[k] for k in feat_cols], values, lab)


def standardize(values: np.ndarray) -> np.ndarray:
    """Per-column z-score; constant columns are only centred."""
    sd = values.std(axis=0)
    return (values - values.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


def one_hot(labels: np.ndarray, n_classes: Optional[int] = None) -> np.ndarray:
    n_classes = n_classes or int(labels.max()) + 1
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ConfigurationError(f"labels outside 0..{n_classes - 1}")
    return np.eye(n_classes)[labels]


def train_test_indices(labels: np.ndarray, n_test: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Stratified split from a public seed; indices are returned sorted."""
    from sklearn.model_selection import train_test_split

    idx = np.arange(labels.size)
    tr, te = train_test_split(idx, test_size=n_test, stratify=labels, random_state=seed)
    return np.sort(tr), np.sort(te)

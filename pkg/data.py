"""
Datasets: synthetic 2D classification families, synthetic regression, CSV
ingestion, min-max normalization to the unit cube and deterministic splits.

Generators are reconstructions chosen to look like the usual toy datasets;
they are not bit-compatible with any external generator.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from errors import ConfigError, DataIOError, InputError

FAMILIES = ("circles", "moons", "streaks", "polynomials")
TASKS = ("classification", "regression")
SPLIT_FRACTION = 0.8
UNIT_TOL = 1e-12


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    task: str
    n_classes: Optional[int]
    train_idx: np.ndarray
    test_idx: np.ndarray
    provenance: Dict[str, object] = field(default_factory=dict)
    col_min: Optional[np.ndarray] = None
    col_max: Optional[np.ndarray] = None
    target_mean: float = 0.0
    target_std: float = 1.0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be classification or regression, got {self.task!r}")
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise InputError(f"dataset has {self.X.shape[0]} rows but {self.y.shape[0]} labels")
        if np.any(self.X < -UNIT_TOL) or np.any(self.X > 1 + UNIT_TOL):
            raise InputError("dataset features must lie in [0, 1] after normalization")
        both = np.intersect1d(self.train_idx, self.test_idx)
        covered = np.union1d(self.train_idx, self.test_idx)
        if both.size or covered.size != self.X.shape[0]:
            raise InputError("train and test splits must be disjoint and cover every row")

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def train(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.X[self.train_idx], self.y[self.train_idx]

    def test(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.X[self.test_idx], self.y[self.test_idx]

    def split_labels(self) -> np.ndarray:
        labels = np.full(self.n, "test", dtype=object)
        labels[self.train_idx] = "train"
        return labels

    def denormalize(self, X) -> np.ndarray:
        """Back to the original feature scale using the stored column ranges"""
        X = np.asarray(X, dtype=np.float64)
        if self.col_min is None:
            return X.copy()
        return self.col_min + X * (self.col_max - self.col_min)

    @property
    def fingerprint(self) -> str:
        return fingerprint(self)


def fingerprint(ds: Dataset) -> str:
    """64-bit BLAKE2 hash of the canonical dataset bytes"""
    digest = hashlib.blake2b(digest_size=8)
    digest.update(ds.task.encode())
    digest.update(np.ascontiguousarray(ds.X, dtype="<f8").tobytes())
    digest.update(np.ascontiguousarray(ds.y, dtype="<f8").tobytes())
    digest.update(np.ascontiguousarray(np.sort(ds.train_idx), dtype="<i8").tobytes())
    return digest.hexdigest()


def min_max(X: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-column min-max scaling; constant columns map to 0.5"""
    X = np.asarray(X, dtype=np.float64)
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = hi - lo
    constant = span == 0
    for col in np.flatnonzero(constant):
        logging.warning(f"feature column {col} is constant, normalized to 0.5")
    scaled = (X - lo) / np.where(constant, 1.0, span)
    scaled[:, constant] = 0.5
    return np.clip(scaled, 0.0, 1.0), lo, hi


def split_indices(n: int, fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"data.split_fraction must lie in (0, 1], got {fraction}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fraction * n))
    n_train = min(max(n_train, 1), n)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def _class_counts(n: int, n_classes: int) -> list:
    return [n // n_classes + (1 if c < n % n_classes else 0) for c in range(n_classes)]


def _circles(rng, counts, noise):
    parts = []
    for label, (count, radius) in enumerate(zip(counts, (0.5, 1.0))):
        phi = rng.uniform(0.0, 2.0 * np.pi, count)
        parts.append(np.column_stack([radius * np.cos(phi), radius * np.sin(phi)]))
    return parts


def _moons(rng, counts, noise):
    t0 = rng.uniform(0.0, np.pi, counts[0])
    t1 = rng.uniform(0.0, np.pi, counts[1])
    outer = np.column_stack([np.cos(t0), np.sin(t0)])
    inner = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    return [outer, inner]


def _streak_label(pts):
    band = np.digitize(pts[:, 1] - pts[:, 0], [-0.5, 0.0, 0.5])
    return band % 2


def _polynomial_label(pts):
    curve = 4.0 * (pts[:, 0] - 0.5) ** 3 + 0.5
    return ((pts[:, 1] > curve - 0.25) & (pts[:, 1] <= curve + 0.25)).astype(int)


def _rejection(labeler):
    def sample(rng, counts, noise):
        pools = [[] for _ in counts]
        have = [0] * len(counts)
        while any(h < c for h, c in zip(have, counts)):
            pts = rng.uniform(0.0, 1.0, size=(256, 2))
            labels = labeler(pts)
            for c in range(len(counts)):
                take = pts[labels == c][: counts[c] - have[c]]
                pools[c].append(take)
                have[c] += take.shape[0]
        return [np.vstack(pool) for pool in pools]

    return sample


_GENERATORS = {
    "circles": _circles,
    "moons": _moons,
    "streaks": _rejection(_streak_label),
    "polynomials": _rejection(_polynomial_label),
}


def raw_2d(family: str, n: int, noise: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Unnormalized points and labels, rows in a seed-determined order"""
    if family not in _GENERATORS:
        raise ConfigError(f"data.family must be one of {', '.join(FAMILIES)}, got {family!r}")
    problems = []
    if n < 10:
        problems.append(f"data.n must be >= 10, got {n}")
    if noise < 0:
        problems.append(f"data.noise must be non-negative, got {noise}")
    if problems:
        raise ConfigError(problems)
    rng = np.random.default_rng(seed)
    counts = _class_counts(n, 2)
    parts = _GENERATORS[family](rng, counts, noise)
    X = np.vstack(parts)
    y = np.concatenate([np.full(part.shape[0], c) for c, part in enumerate(parts)])
    X = X + noise * rng.standard_normal(X.shape)
    order = rng.permutation(n)
    return X[order], y[order].astype(int)


def generate_2d(family: str, n: int, noise: float, seed: int, split_fraction: float = SPLIT_FRACTION) -> Dataset:
    X_raw, y = raw_2d(family, n, noise, seed)
    X, lo, hi = min_max(X_raw)
    train_idx, test_idx = split_indices(n, split_fraction, seed)
    ds = Dataset(
        X, y, "classification", 2, train_idx, test_idx,
        provenance={"generator": family, "n": n, "noise": noise, "seed": seed},
        col_min=lo, col_max=hi,
    )
    logging.info(f"generated {family} dataset n={n} noise={noise} seed={seed} fingerprint={ds.fingerprint}")
    return ds


def _standardize(ds_y: np.ndarray, train_idx: np.ndarray) -> Tuple[np.ndarray, float, float]:
    mean = float(ds_y[train_idx].mean())
    std = float(ds_y[train_idx].std())
    if std == 0.0:
        logging.warning("target is constant on the training split, not scaled")
        std = 1.0
    return (ds_y - mean) / std, mean, std


def generate_regression(
    n: int,
    dim: int = 2,
    noise: float = 0.05,
    seed: int = 0,
    split_fraction: float = SPLIT_FRACTION,
    standardize: bool = True,
) -> Dataset:
    """Linear plus sinusoidal target over uniform features"""
    if n < 10 or dim < 1:
        raise ConfigError(f"need n >= 10 and dim >= 1, got n={n}, dim={dim}")
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(n, dim))
    weights = rng.uniform(-1.0, 1.0, size=dim)
    y = X @ weights + np.sin(2.0 * np.pi * X[:, 0]) + noise * rng.standard_normal(n)
    train_idx, test_idx = split_indices(n, split_fraction, seed)
    mean, std = 0.0, 1.0
    if standardize:
        y, mean, std = _standardize(y, train_idx)
    X, lo, hi = min_max(X)
    return Dataset(
        X, y, "regression", None, train_idx, test_idx,
        provenance={"generator": "regression", "n": n, "dim": dim, "noise": noise, "seed": seed},
        col_min=lo, col_max=hi, target_mean=mean, target_std=std,
    )


def load_regression_csv(
    path,
    target_column: str,
    split_fraction: float = SPLIT_FRACTION,
    seed: int = 0,
    standardize: bool = True,
) -> Dataset:
    """Numeric CSV with a header; every column but the target is a feature"""
    path = Path(path)
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataIOError(f"cannot read {path}: {e}")
    if target_column not in frame.columns:
        raise ConfigError(f"target column {target_column!r} not in {path} (columns: {', '.join(map(str, frame.columns))})")
    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1)
    if bad.any():
        # header is line 1
        lines = [int(i) + 2 for i in np.flatnonzero(bad.to_numpy())]
        raise InputError(f"{path}: missing or non-numeric values on lines {lines}")
    if len(numeric) < 2:
        raise InputError(f"{path}: need at least 2 rows, got {len(numeric)}")

    features = numeric.drop(columns=[target_column]).to_numpy(dtype=np.float64)
    if features.shape[1] == 0:
        raise InputError(f"{path}: no feature columns besides {target_column!r}")
    y = numeric[target_column].to_numpy(dtype=np.float64)
    train_idx, test_idx = split_indices(len(y), split_fraction, seed)
    mean, std = 0.0, 1.0
    if standardize:
        y, mean, std = _standardize(y, train_idx)
    X, lo, hi = min_max(features)
    digest = hashlib.blake2b(path.read_bytes(), digest_size=8).hexdigest()
    ds = Dataset(
        X, y, "regression", None, train_idx, test_idx,
        provenance={"file": str(path), "file_fingerprint": digest, "target": target_column, "seed": seed},
        col_min=lo, col_max=hi, target_mean=mean, target_std=std,
    )
    logging.info(f"loaded {path}: {ds.n} rows, {ds.dim} features, fingerprint={ds.fingerprint}")
    return ds


def grid(resolution: int) -> np.ndarray:
    """resolution² evenly spaced points of [0,1]², x1 varying fastest"""
    if resolution < 2:
        raise ConfigError(f"grid resolution must be >= 2, got {resolution}")
    ticks = np.arange(resolution) / (resolution - 1)
    x1, x2 = np.meshgrid(ticks, ticks, indexing="xy")
    return np.column_stack([x1.reshape(-1), x2.reshape(-1)])


# -- files ----------------------------------------------------------------

def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def write_dataset(ds: Dataset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = {f"x{i + 1}": ds.X[:, i] for i in range(ds.dim)}
    target = "label" if ds.task == "classification" else "target"
    columns[target] = ds.y.astype(int) if ds.task == "classification" else ds.y
    columns["split"] = ds.split_labels()
    pd.DataFrame(columns).to_csv(path, index=False, float_format="%.17g")
    meta = {
        "task": ds.task,
        "n_classes": ds.n_classes,
        "provenance": ds.provenance,
        "col_min": None if ds.col_min is None else ds.col_min.tolist(),
        "col_max": None if ds.col_max is None else ds.col_max.tolist(),
        "target_mean": ds.target_mean,
        "target_std": ds.target_std,
        "fingerprint": ds.fingerprint,
    }
    meta_path(path).write_text(json.dumps(meta, indent=2))
    logging.info(f"wrote dataset {path} ({ds.n} rows, fingerprint={ds.fingerprint})")
    return path


def read_dataset(path) -> Dataset:
    path = Path(path)
    try:
        meta = json.loads(meta_path(path).read_text())
        frame = pd.read_csv(path, float_precision="round_trip")
    except (OSError, ValueError, pd.errors.ParserError) as e:
        raise DataIOError(f"cannot read dataset {path}: {e}")
    target = "label" if meta.get("task") == "classification" else "target"
    feature_cols = [c for c in frame.columns if c.startswith("x")]
    missing = [c for c in (target, "split") if c not in frame.columns]
    if missing or not feature_cols:
        raise DataIOError(f"dataset {path} lacks columns {missing or ['x1']}")
    split = frame["split"].to_numpy()
    y = frame[target].to_numpy()
    y = y.astype(int) if target == "label" else y.astype(np.float64)
    ds = Dataset(
        frame[feature_cols].to_numpy(dtype=np.float64),
        y,
        meta["task"],
        meta.get("n_classes"),
        np.flatnonzero(split == "train"),
        np.flatnonzero(split == "test"),
        provenance=meta.get("provenance", {}),
        col_min=None if meta.get("col_min") is None else np.asarray(meta["col_min"]),
        col_max=None if meta.get("col_max") is None else np.asarray(meta["col_max"]),
        target_mean=float(meta.get("target_mean", 0.0)),
        target_std=float(meta.get("target_std", 1.0)),
    )
    recorded = meta.get("fingerprint")
    if recorded and recorded != ds.fingerprint:
        raise DataIOError(f"dataset {path} does not match its recorded fingerprint {recorded}")
    return ds

"""Datasets: CSV ingestion, stratified 64/16/20 splits, standardisation, synthetic blobs."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

VAL_FRAC, TEST_FRAC = 0.16, 0.20  # train keeps the remaining 64%
STD_FLOOR = 1e-12


class DataError(ValueError):
    """Problem with an input dataset; ``row``/``column`` locate it when known."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray  # class indices 1..d
    d: int
    feature_names: list[str] = field(default_factory=list)
    class_names: list[str] = field(default_factory=list)
    source: str | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise DataError(f"feature matrix {self.X.shape} does not match {self.y.shape[0]} labels")
        if self.y.size and (self.y.min() < 1 or self.y.max() > self.d):
            raise DataError(f"labels must lie in 1..{self.d}")
        if not self.feature_names:
            self.feature_names = [f"x{i}" for i in range(self.X.shape[1])]
        if not self.class_names:
            self.class_names = [str(k) for k in range(1, self.d + 1)]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y - 1, minlength=self.d)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return replace(self, X=self.X[idx], y=self.y[idx])


# --------------------------------------------------------------------------
# CSV

def _is_int(v: str) -> bool:
    try:
        int(v)
    except ValueError:
        return False
    return True


def _encode_labels(raw: list[str]) -> tuple[np.ndarray, list[str]]:
    if all(_is_int(v) for v in raw):
        values = sorted({int(v) for v in raw})
        lookup = {v: k + 1 for k, v in enumerate(values)}
        return np.array([lookup[int(v)] for v in raw]), [str(v) for v in values]
    names = list(dict.fromkeys(raw))
    lookup = {v: k + 1 for k, v in enumerate(names)}
    return np.array([lookup[v] for v in raw]), names


def load_csv(path, label_column: str = "label") -> Dataset:
    """Read a headed, comma-separated numeric CSV.

    Integer labels map to classes in ascending order; string labels map
    in order of first appearance.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataError(f"{path} has no header row")
        header = [h.strip() for h in header]
        if label_column not in header:
            raise DataError(f"label column {label_column!r} not found", column=label_column)
        li = header.index(label_column)
        feature_names = [h for i, h in enumerate(header) if i != li]
        rows, labels = [], []
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(record)}", row=lineno)
            values = []
            for i, cell in enumerate(record):
                cell = cell.strip()
                if cell == "":
                    raise DataError("missing value", row=lineno, column=header[i])
                if i == li:
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataError(f"non-numeric feature {cell!r}", row=lineno, column=header[i]) from None
            labels.append(record[li].strip())
            rows.append(values)
    if not rows:
        raise DataError(f"{path} contains no data rows")
    y, class_names = _encode_labels(labels)
    if len(class_names) < 2:
        raise DataError("need at least two distinct labels", column=label_column)
    return Dataset(np.array(rows), y, len(class_names), feature_names, class_names, str(path))


def save_csv(ds: Dataset, path, label_column: str = "label") -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([*ds.feature_names, label_column])
        for x, y in zip(ds.X, ds.y):
            writer.writerow([repr(float(v)) for v in x] + [ds.class_names[y - 1]])
    return path


def write_manifest(ds: Dataset, path, label_column: str = "label", split_seed: int | None = None,
                   extra: dict | None = None) -> Path:
    doc = {
        "source": ds.source,
        "label_column": label_column,
        "class_mapping": {name: k + 1 for k, name in enumerate(ds.class_names)},
        "n": ds.n,
        "d": ds.d,
        "input_dim": ds.input_dim,
        "class_counts": ds.class_counts().tolist(),
        "split_seed": split_seed,
    }
    doc.update(extra or {})
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2))
    return path


# --------------------------------------------------------------------------
# splitting and scaling

def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_indices(y: np.ndarray, d: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    y = np.asarray(y)
    if y.size < 10 * d:
        raise DataError(f"need at least {10 * d} examples to split {d} classes, got {y.size}")
    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[], [], []]
    for k in range(1, d + 1):
        members = np.flatnonzero(y == k)
        if members.size < 3:
            raise DataError(f"class {k} has {members.size} examples; at least 3 are needed")
        members = rng.permutation(members)
        n_val = _round_half_up(VAL_FRAC * members.size)
        n_test = _round_half_up(TEST_FRAC * members.size)
        n_train = members.size - n_val - n_test
        parts[0].append(members[:n_train])
        parts[1].append(members[n_train:n_train + n_val])
        parts[2].append(members[n_train + n_val:])
    return tuple(np.sort(np.concatenate(p)) for p in parts)


def split(ds: Dataset, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Stratified 64/16/20 train/val/test split; remainders go to train."""
    train, val, test = split_indices(ds.y, ds.d, seed)
    return ds.subset(train), ds.subset(val), ds.subset(test)


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        return cls(X.mean(axis=0), np.maximum(X.std(axis=0), STD_FLOOR))

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def apply(self, ds: Dataset) -> Dataset:
        return replace(ds, X=self.transform(ds.X))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Standardizer":
        return cls(np.asarray(data["mean"]), np.asarray(data["std"]))


def standardize_fit_apply(train: Dataset, *others: Dataset) -> tuple[list[Dataset], Standardizer]:
    """Fit on ``train`` only; returns ``[train, *others]`` transformed plus the scaler."""
    scaler = Standardizer.fit(train.X)
    return [scaler.apply(ds) for ds in (train, *others)], scaler


# --------------------------------------------------------------------------
# synthetic data and balance

def gen_synthetic(d: int, n: int, class_weights: Sequence[float], cluster_separation: float,
                  seed: int, n_features: int | None = None) -> Dataset:
    """Unit-covariance Gaussian blobs; class ``k`` is centred at ``separation * e_k``.

    Extra feature dimensions beyond ``d`` are pure noise.
    """
    weights = np.asarray(class_weights, dtype=np.float64)
    if weights.shape != (d,) or np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise DataError(f"class_weights must be {d} nonnegative numbers summing to 1")
    if d < 2:
        raise DataError("need at least two classes")
    if n < 10 * d:
        raise DataError(f"need n >= {10 * d}")
    n_features = d if n_features is None else int(n_features)
    if n_features < d:
        raise DataError("n_features must be at least d")
    rng = np.random.default_rng(seed)
    labels = rng.choice(d, size=n, p=weights)
    means = np.zeros((d, n_features))
    means[np.arange(d), np.arange(d)] = cluster_separation
    X = means[labels] + rng.standard_normal((n, n_features))
    return Dataset(X, labels + 1, d, source=f"synthetic(seed={seed})")


def shannon_equitability(labels, d: int) -> float:
    """Label entropy divided by ``ln d``."""
    if d < 2:
        raise ValueError("equitability needs d >= 2")
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("equitability of an empty label set")
    q = np.bincount(labels.astype(int) - 1, minlength=d) / labels.size
    q = q[q > 0]
    return float(-(q * np.log(q)).sum() / np.log(d))

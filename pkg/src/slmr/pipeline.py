"""Data ingestion, min-max normalization, sliding windows and a synthetic
multivariate series generator with labelled anomaly segments."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class SeriesDataset:
    name: str
    train: np.ndarray
    test: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    feature_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.float64)
        if self.train.ndim != 2:
            raise DataError(f"{self.name}: train matrix must be 2-D")
        k = self.train.shape[1]
        if not self.feature_names:
            self.feature_names = [f"f{i}" for i in range(k)]
        if len(self.feature_names) != k:
            raise DataError(f"{self.name}: {len(self.feature_names)} feature names for {k} columns")
        if self.test is not None:
            self.test = np.asarray(self.test, dtype=np.float64)
            if self.test.ndim != 2 or self.test.shape[1] != k:
                raise DataError(
                    f"{self.name}: test has {self.test.shape[-1]} features, train has {k}"
                )
        if self.labels is not None:
            self.labels = np.asarray(self.labels).astype(np.int64)
            if self.test is None or len(self.labels) != len(self.test):
                raise DataError(f"{self.name}: labels must align with test rows")
            if not np.isin(self.labels, (0, 1)).all():
                raise DataError(f"{self.name}: labels must be 0/1")
        for part in (self.train, self.test):
            if part is not None and not np.all(np.isfinite(part)):
                raise DataError(f"{self.name}: non-finite values after ingestion")

    @property
    def n_features(self) -> int:
        return self.train.shape[1]


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def parse_label_map(text: Optional[str]) -> Optional[Dict[str, int]]:
    """``"Normal=0,Attack=1"`` -> ``{"Normal": 0, "Attack": 1}``."""
    if not text:
        return None
    out = {}
    for item in text.split(","):
        key, _, val = item.partition("=")
        if not _ or val.strip() not in ("0", "1"):
            raise ValueError(f"bad label mapping entry {item!r}; expected NAME=0 or NAME=1")
        out[key.strip()] = int(val)
    return out


def read_csv(
    path,
    label_column: Optional[str] = None,
    label_map: Optional[Dict[str, int]] = None,
    drop_columns: Sequence[str] = (),
    skip_rows: int = 0,
) -> Tuple[np.ndarray, Optional[np.ndarray], List[str]]:
    """Parse a header + numeric-columns CSV into ``(matrix, labels, names)``.

    Rows that fail to parse are reported by their 1-based file line number.
    """
    if not os.path.exists(path):
        raise DataError(f"{path}: no such file")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if label_column is not None and label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not found in header {header}")
        for col in drop_columns:
            if col not in header:
                raise DataError(f"{path}: column {col!r} not found in header")
        lab_idx = header.index(label_column) if label_column is not None else None
        keep = [i for i, h in enumerate(header) if i != lab_idx and h not in drop_columns]
        rows, labels, bad = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if lineno - 2 < skip_rows:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: line {lineno} has {len(row)} fields, header has {len(header)}")
            try:
                rows.append([float(row[i]) for i in keep])
            except ValueError:
                bad.append(lineno)
                continue
            if lab_idx is not None:
                labels.append(_parse_label(row[lab_idx].strip(), label_map, path, lineno))
        if bad:
            shown = ", ".join(map(str, bad[:10])) + (" ..." if len(bad) > 10 else "")
            raise DataError(f"{path}: unparseable numeric values on lines {shown}")
    matrix = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(keep))
    if not np.all(np.isfinite(matrix)):
        raise DataError(f"{path}: NaN/Inf values present")
    lab = np.asarray(labels, dtype=np.int64) if lab_idx is not None else None
    return matrix, lab, [header[i] for i in keep]


def _parse_label(raw: str, label_map, path, lineno) -> int:
    if label_map is not None:
        if raw not in label_map:
            raise DataError(f"{path}: line {lineno}: label {raw!r} missing from label map")
        return label_map[raw]
    try:
        val = float(raw)
    except ValueError:
        raise DataError(f"{path}: line {lineno}: non-numeric label {raw!r} (pass a label map)") from None
    if val not in (0.0, 1.0):
        raise DataError(f"{path}: line {lineno}: label {raw!r} is not binary")
    return int(val)


def load_csv(path, label_column=None, label_map=None, name=None, **kwargs) -> SeriesDataset:
    """Single-file dataset: with ``label_column`` the file is treated as test data."""
    matrix, labels, names = read_csv(path, label_column, label_map, **kwargs)
    name = name or os.path.splitext(os.path.basename(path))[0]
    if labels is None:
        return SeriesDataset(name, matrix, feature_names=names)
    return SeriesDataset(name, matrix[:0], matrix, labels, names)


def load_dataset(train_path, test_path=None, label_column=None, label_map=None,
                 name=None, train_skip_rows: int = 0, drop_columns: Sequence[str] = ()) -> SeriesDataset:
    train, _, names = read_csv(train_path, None if label_column is None else optional_column(train_path, label_column),
                               label_map, drop_columns, train_skip_rows)
    test = labels = None
    if test_path is not None:
        test, labels, test_names = read_csv(test_path, label_column, label_map, drop_columns)
        if test_names != names:
            raise DataError(f"{test_path}: feature columns {test_names} differ from train columns {names}")
    name = name or os.path.splitext(os.path.basename(train_path))[0]
    return SeriesDataset(name, train, test, labels, names)


def optional_column(path, column) -> Optional[str]:
    # train files may or may not carry the label column
    with open(path, newline="") as fh:
        header = [h.strip() for h in next(csv.reader(fh), [])]
    return column if column in header else None


def write_csv(path, matrix: np.ndarray, names: Sequence[str], labels: Optional[np.ndarray] = None,
              label_column: str = "label") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(names) + ([label_column] if labels is not None else []))
        for i, row in enumerate(np.asarray(matrix, dtype=np.float64)):
            vals = [repr(float(v)) for v in row]
            if labels is not None:
                vals.append(str(int(labels[i])))
            w.writerow(vals)


def save_dataset(dataset: SeriesDataset, directory, label_column: str = "label") -> Tuple[str, Optional[str]]:
    os.makedirs(directory, exist_ok=True)
    train_path = os.path.join(directory, "train.csv")
    write_csv(train_path, dataset.train, dataset.feature_names)
    test_path = None
    if dataset.test is not None:
        test_path = os.path.join(directory, "test.csv")
        write_csv(test_path, dataset.test, dataset.feature_names, dataset.labels, label_column)
    return train_path, test_path


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_manifest(path) -> List[dict]:
    """Entity list for multi-entity collections (one model per entity).

    JSON: ``{"entities": [{"name": ..., "train": ..., "test": ..., "label_column": ...}]}``;
    relative paths resolve against the manifest's directory.
    """
    with open(path) as fh:
        doc = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    out = []
    for i, ent in enumerate(doc.get("entities", [])):
        for key in ("name", "train", "test"):
            if key not in ent:
                raise DataError(f"{path}: entity {i} missing {key!r}")
        ent = dict(ent)
        for key in ("train", "test"):
            ent[key] = os.path.join(base, ent[key])
        out.append(ent)
    if not out:
        raise DataError(f"{path}: no entities listed")
    return out


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

class MinMaxNormalizer(TransformerMixin, BaseEstimator):
    """Per-feature ``(x - min) / (max - min)`` with statistics from fit data only.

    Constant features map to 0. Values outside the fitted range are not
    clipped, so out-of-range test points stay visible to the detector.
    """

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.min_ = X.min(axis=0)
        self.max_ = X.max(axis=0)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, ("min_", "max_"))
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DataError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        span = self.max_ - self.min_
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (X - self.min_) / safe, 0.0)

    def to_dict(self) -> dict:
        return {"min": self.min_.tolist(), "max": self.max_.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxNormalizer":
        obj = cls()
        obj.min_ = np.asarray(d["min"], dtype=np.float64)
        obj.max_ = np.asarray(d["max"], dtype=np.float64)
        obj.n_features_in_ = len(obj.min_)
        return obj


def normalize(dataset: SeriesDataset, stats: Optional[MinMaxNormalizer] = None) -> Tuple[SeriesDataset, MinMaxNormalizer]:
    stats = stats or MinMaxNormalizer().fit(dataset.train)
    test = stats.transform(dataset.test) if dataset.test is not None and len(dataset.test) else dataset.test
    out = SeriesDataset(dataset.name, stats.transform(dataset.train), test, dataset.labels,
                        list(dataset.feature_names))
    return out, stats


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------

class Windows:
    """Sliding windows over a ``(n, k)`` matrix.

    Window ``i`` covers rows ``[i*stride, i*stride + w)`` and its forecast
    target is row ``i*stride + w``. Arrays are views; :meth:`batch` copies.
    """

    def __init__(self, matrix: np.ndarray, w: int, labels: Optional[np.ndarray] = None, stride: int = 1):
        matrix = np.ascontiguousarray(matrix, dtype=np.float64)
        n = len(matrix)
        if w < 1 or stride < 1:
            raise ValueError("window and stride must be positive")
        if n <= w:
            raise DataError(f"series of length {n} is too short for window {w}")
        self.matrix, self.w, self.stride = matrix, w, stride
        self.starts = np.arange(0, n - w, stride)
        self._view = sliding_window_view(matrix, w, axis=0)   # (n-w+1, k, w)
        self.labels = None if labels is None else np.asarray(labels)[self.starts + w]

    def __len__(self) -> int:
        return len(self.starts)

    @property
    def targets(self) -> np.ndarray:
        return self.starts + self.w

    def batch(self, idx) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(inputs[B, k, w], recon_targets[B, w, k], forecast_targets[B, k])``."""
        s = self.starts[idx]
        x = np.ascontiguousarray(self._view[s])
        return x, x.transpose(0, 2, 1), self.matrix[s + self.w]


@dataclass
class WindowBatch:
    inputs: np.ndarray
    forecast_targets: np.ndarray
    recon_targets: np.ndarray
    labels: Optional[np.ndarray]
    target_index: np.ndarray


def make_windows(matrix, labels=None, w: int = 100, stride: int = 1, batch_size: int = 256) -> Iterator[WindowBatch]:
    """Yield window batches in order; there are ``floor((n - w - 1) / stride) + 1`` windows."""
    win = Windows(matrix, w, labels, stride)
    for start in range(0, len(win), batch_size):
        idx = np.arange(start, min(start + batch_size, len(win)))
        x, rt, ft = win.batch(idx)
        lab = None if win.labels is None else win.labels[idx]
        yield WindowBatch(x, ft, rt, lab, win.targets[idx])


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

ANOMALY_TYPES = ("level-shift", "amplitude", "frequency", "correlation-break")


@dataclass(frozen=True)
class AnomalySegment:
    start: int
    end: int
    kind: str = "level-shift"
    features: Optional[Tuple[int, ...]] = None
    magnitude: float = 1.0

    def __post_init__(self):
        if self.kind not in ANOMALY_TYPES:
            raise ValueError(f"unknown anomaly type {self.kind!r}; expected one of {ANOMALY_TYPES}")
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad segment [{self.start}, {self.end})")


def default_anomaly_spec(n_test: int, k: int, fraction: float = 0.1, seed: int = 0,
                         min_len: int = 50, max_len: int = 150) -> List[AnomalySegment]:
    """Non-overlapping segments covering ``fraction`` of the test span, cycling through all types."""
    rng = np.random.default_rng(seed)
    target = int(round(fraction * n_test))
    lengths = []
    while sum(lengths) < target:
        lengths.append(int(rng.integers(min_len, max_len + 1)))
    lengths[-1] -= sum(lengths) - target
    if lengths[-1] < min_len // 2 and len(lengths) > 1:
        tail = lengths.pop()
        lengths[-1] += tail
    # spread segments over the test span with random gaps, leaving a clean lead-in
    lead = min(max_len * 2, n_test // 10)
    free = n_test - lead - sum(lengths)
    if free < len(lengths):
        raise ValueError("test span too short for the requested anomaly fraction")
    cuts = np.sort(rng.choice(np.arange(1, free), size=len(lengths), replace=False))
    gaps = np.diff(np.concatenate([[0], cuts]))
    segs, pos = [], lead
    for i, (gap, length) in enumerate(zip(gaps, lengths)):
        pos += int(gap)
        kind = ANOMALY_TYPES[i % len(ANOMALY_TYPES)]
        nfeat = int(rng.integers(1, max(2, k // 2) + 1))
        feats = tuple(sorted(rng.choice(k, size=min(nfeat, k), replace=False).tolist()))
        segs.append(AnomalySegment(pos, pos + length, kind, feats, magnitude=float(rng.uniform(0.8, 1.2))))
        pos += length
    return segs


def synth_generate(k: int = 8, n: int = 20000, anomaly_spec: Optional[Sequence[AnomalySegment]] = None,
                   seed: int = 0, train_fraction: float = 0.5, anomaly_fraction: float = 0.1,
                   noise: float = 0.05) -> SeriesDataset:
    """Correlated sinusoids with noise; anomalies only in the test portion.

    ``anomaly_spec=None`` draws the default spec covering ``anomaly_fraction``
    of the test rows; pass ``[]`` for a clean test split. Segment indices are
    relative to the test split.
    """
    if k < 1 or n < 4:
        raise ValueError("need k >= 1 and n >= 4")
    rng = np.random.default_rng(seed)
    n_train = int(n * train_fraction)
    n_test = n - n_train
    t = np.arange(n, dtype=np.float64)
    # a few latent periodic drivers shared across features give cross-feature correlation
    n_latent = min(3, k)
    periods = rng.uniform(20.0, 80.0, size=n_latent)
    phases = rng.uniform(0, 2 * np.pi, size=n_latent)
    mix = rng.normal(size=(n_latent, k))
    mix /= np.linalg.norm(mix, axis=0, keepdims=True)
    own_period = rng.uniform(15.0, 60.0, size=k)
    own_phase = rng.uniform(0, 2 * np.pi, size=k)

    def drivers(tt, freq_scale=1.0):
        return np.stack([np.sin(2 * np.pi * tt * freq_scale / p + ph) for p, ph in zip(periods, phases)], axis=1)

    base = drivers(t) @ mix + 0.5 * np.sin(2 * np.pi * t[:, None] / own_period + own_phase)
    amp = np.abs(base).max(axis=0)
    series = base + noise * amp * rng.normal(size=(n, k))

    segs = list(default_anomaly_spec(n_test, k, anomaly_fraction, seed + 1)) if anomaly_spec is None else list(anomaly_spec)
    labels = np.zeros(n_test, dtype=np.int64)
    test = series[n_train:].copy()
    clean_test = base[n_train:]
    for seg in sorted(segs, key=lambda s: s.start):
        if seg.end > n_test:
            raise ValueError(f"segment [{seg.start}, {seg.end}) exceeds test length {n_test}")
        if labels[seg.start:seg.end].any():
            raise ValueError(f"segment [{seg.start}, {seg.end}) overlaps another segment")
        labels[seg.start:seg.end] = 1
        feats = list(seg.features) if seg.features is not None else list(range(k))
        sl = slice(seg.start, seg.end)
        m = seg.magnitude
        if seg.kind == "level-shift":
            test[sl, feats] += m * amp[feats]
        elif seg.kind == "amplitude":
            test[sl, feats] += m * 1.5 * clean_test[sl, feats]
        elif seg.kind == "frequency":
            tt = t[n_train + seg.start: n_train + seg.end]
            fast = drivers(tt, 1.0 + 2.0 * m) @ mix[:, feats]
            fast += 0.5 * np.sin(2 * np.pi * tt[:, None] * (1.0 + 2.0 * m) / own_period[feats] + own_phase[feats])
            test[sl, feats] += fast - clean_test[sl, feats]
        else:  # correlation-break: features decouple from the shared drivers
            test[sl, feats] = -clean_test[sl, feats] + noise * amp[feats] * rng.normal(size=(seg.end - seg.start, len(feats)))
    names = [f"x{i}" for i in range(k)]
    return SeriesDataset("synthetic", series[:n_train], test, labels, names)

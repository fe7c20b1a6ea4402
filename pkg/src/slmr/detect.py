"""Anomaly scoring, point-adjusted evaluation and best-F1 thresholding."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import no_grad


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------

@dataclass
class ScoreSeries:
    """Per-timestamp scores for rows ``w .. n-1`` of the scored matrix."""

    timestamps: np.ndarray
    forecast_term: np.ndarray
    recon_term: np.ndarray
    n_features: int
    gamma: float = 1.0

    @property
    def scores(self) -> np.ndarray:
        return combine_score(self.forecast_term, self.recon_term, self.gamma, self.n_features)

    def with_gamma(self, gamma: float) -> "ScoreSeries":
        return ScoreSeries(self.timestamps, self.forecast_term, self.recon_term, self.n_features, gamma)

    def __len__(self) -> int:
        return len(self.timestamps)


def combine_score(forecast_term, recon_term, gamma: float, k: int) -> np.ndarray:
    """``(forecast_rmse + gamma * recon_rmse) / k``."""
    return (np.asarray(forecast_term) + gamma * np.asarray(recon_term)) / k


def score(model, matrix: np.ndarray, gamma_score: Optional[float] = None, batch_size: int = 512,
          full_window_recon: bool = False) -> ScoreSeries:
    """Score every timestamp ``t >= w`` of an (already normalized) matrix.

    The forecast term uses the window ``[t-w, t)`` predicting row ``t``; the
    reconstruction term reconstructs ``[t-w+1, t+1)`` and keeps the residual
    of its final row (or of the whole window with ``full_window_recon``).
    Windows are never masked here.
    """
    cfg = model.config
    w, k = cfg.window, cfg.n_features
    matrix = np.ascontiguousarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != k:
        raise ValueError(f"model expects {k} features, data has {matrix.shape[-1]}")
    n = len(matrix)
    if n <= w:
        raise ValueError(f"series of length {n} is too short for window {w}")
    for name, p in model.params.items():
        if not np.all(np.isfinite(p.data)):
            raise FloatingPointError(f"parameter {name} contains non-finite values")
    view = sliding_window_view(matrix, w, axis=0)    # window i = rows [i, i+w), shape (n-w+1, k, w)
    n_out = n - w
    f_term = np.zeros(n_out)
    r_term = np.zeros(n_out)
    with no_grad():
        for start in range(0, n_out + 1, batch_size):
            idx = np.arange(start, min(start + batch_size, n_out + 1))
            forecast, recon = model.forward(np.ascontiguousarray(view[idx]))
            if forecast is not None:
                ok = idx < n_out
                tgt = matrix[idx[ok] + w]
                f_term[idx[ok]] = np.sqrt(((forecast.data[ok] - tgt) ** 2).sum(axis=1))
            if recon is not None:
                ok = idx >= 1
                win = view[idx[ok]].transpose(0, 2, 1)        # (b, w, k)
                res = recon.data[ok] - win
                if full_window_recon:
                    r_term[idx[ok] - 1] = np.sqrt((res ** 2).sum(axis=(1, 2)))
                else:
                    r_term[idx[ok] - 1] = np.sqrt((res[:, -1] ** 2).sum(axis=1))
    gamma = cfg.gamma_score if gamma_score is None else gamma_score
    out = ScoreSeries(np.arange(w, n), f_term, r_term, k, gamma)
    if not np.all(np.isfinite(out.scores)):
        raise FloatingPointError("non-finite anomaly scores")
    return out


# ---------------------------------------------------------------------------
# point adjust
# ---------------------------------------------------------------------------

def segments(binary) -> List[Tuple[int, int]]:
    """Maximal runs of ones as half-open ``(start, end)`` pairs."""
    b = np.asarray(binary).astype(np.int8)
    edges = np.flatnonzero(np.diff(np.concatenate([[0], b, [0]])))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def point_adjust(pred, truth) -> np.ndarray:
    """Mark a whole true anomaly segment as detected if any of its points is."""
    pred = np.asarray(pred).astype(np.int64)
    truth = np.asarray(truth).astype(np.int64)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction length {pred.shape} != truth length {truth.shape}")
    out = pred.copy()
    for s, e in segments(truth):
        if out[s:e].any():
            out[s:e] = 1
    return out


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _prf(tp, fp, fn):
    tp, fp, fn = (np.asarray(v, dtype=np.float64) for v in (tp, fp, fn))
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(tp > 0, 2 * tp / (2 * tp + fp + fn), 0.0)
    return precision, recall, f1


@dataclass
class SegmentHit:
    start: int
    end: int
    detected: bool
    overlap: int


@dataclass
class Localization:
    true_segments: List[SegmentHit] = field(default_factory=list)
    detected_segments: List[Tuple[int, int, List[int]]] = field(default_factory=list)

    @property
    def hits(self) -> int:
        return sum(s.detected for s in self.true_segments)

    @property
    def misses(self) -> int:
        return len(self.true_segments) - self.hits

    @property
    def false_alarms(self) -> int:
        return sum(1 for _, _, covered in self.detected_segments if not covered)

    def to_dict(self) -> dict:
        return {
            "hits": self.hits,
            "misses": self.misses,
            "false_alarms": self.false_alarms,
            "true_segments": [asdict(s) for s in self.true_segments],
            "detected_segments": [
                {"start": s, "end": e, "true_segments": cov} for s, e, cov in self.detected_segments
            ],
        }


def localize(pred, truth, offset: int = 0) -> Localization:
    """Match detected runs against true segments (indices shifted by ``offset``)."""
    pred = np.asarray(pred).astype(np.int64)
    truth = np.asarray(truth).astype(np.int64)
    true_segs = segments(truth)
    rep = Localization()
    for s, e in true_segs:
        ov = int(pred[s:e].sum())
        rep.true_segments.append(SegmentHit(s + offset, e + offset, ov > 0, ov))
    for s, e in segments(pred):
        covered = [j for j, (ts, te) in enumerate(true_segs) if ts < e and s < te]
        rep.detected_segments.append((s + offset, e + offset, covered))
    return rep


@dataclass
class EvalReport:
    threshold: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    localization: Optional[Localization] = None

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("threshold", "precision", "recall", "f1", "tp", "fp", "fn", "tn")}
        if self.localization is not None:
            d["localization"] = self.localization.to_dict()
        return d


def evaluate(scores, truth, threshold: float, adjust: bool = True) -> Tuple[EvalReport, np.ndarray]:
    """Report for ``pred = scores > threshold`` (point-adjusted by default)."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(np.int64)
    pred = (scores > threshold).astype(np.int64)
    if adjust:
        pred = point_adjust(pred, truth)
    return report_from_predictions(pred, truth, threshold), pred


def report_from_predictions(pred, truth, threshold: float = float("nan")) -> EvalReport:
    pred = np.asarray(pred).astype(np.int64)
    truth = np.asarray(truth).astype(np.int64)
    tp = int(((pred == 1) & (truth == 1)).sum())
    fp = int(((pred == 1) & (truth == 0)).sum())
    fn = int(((pred == 0) & (truth == 1)).sum())
    tn = int(((pred == 0) & (truth == 0)).sum())
    p, r, f = _prf(tp, fp, fn)
    return EvalReport(float(threshold), float(p), float(r), float(f), tp, fp, fn, tn,
                      localize(pred, truth))


def pooled_report(parts: Sequence[Tuple[np.ndarray, np.ndarray]]) -> EvalReport:
    """Global P/R/F1 over several entities' (adjusted prediction, truth) pairs."""
    if not parts:
        raise ValueError("no entities to pool")
    pred = np.concatenate([np.asarray(p) for p, _ in parts])
    truth = np.concatenate([np.asarray(t) for _, t in parts])
    return report_from_predictions(pred, truth)


# ---------------------------------------------------------------------------
# best-F1 threshold
# ---------------------------------------------------------------------------

def candidate_thresholds(scores) -> np.ndarray:
    """A value just below the minimum, then every unique score ascending.

    With ``pred = score > tau`` these cover every distinct prediction vector,
    from all-positive to all-negative (tau = max score).
    """
    u = np.unique(np.asarray(scores, dtype=np.float64))
    return np.concatenate([[np.nextafter(u[0], -np.inf)], u])


def _pick(cands, f1, precision) -> int:
    # max F1, then max precision, then the highest threshold
    order = np.lexsort((cands, precision, f1))
    return int(order[-1])


def _reported_threshold(cands: np.ndarray, i: int) -> float:
    # midpoint to the next candidate reads better and gives identical predictions
    if 0 < i < len(cands) - 1:
        mid = (cands[i] + cands[i + 1]) / 2.0
        if cands[i] < mid < cands[i + 1]:
            return float(mid)
    return float(cands[i])


def _check_inputs(scores, truth):
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(np.int64)
    if scores.shape != truth.shape or scores.ndim != 1:
        raise ValueError(f"scores {scores.shape} and truth {truth.shape} must be equal-length 1-D arrays")
    if not truth.any():
        raise ValueError("best-F1 threshold is undefined: truth contains no anomalies")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    return scores, truth


def f1_curve(scores, truth) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Point-adjusted ``(thresholds, tp, fp, fn, f1)`` for every candidate, in O(T log T).

    A true segment is fully detected exactly when its maximum score exceeds
    the threshold, so TP follows from sorted segment maxima and FP from
    sorted normal-point scores.
    """
    scores, truth = _check_inputs(scores, truth)
    cands = candidate_thresholds(scores)
    normal = np.sort(scores[truth == 0])
    fp = len(normal) - np.searchsorted(normal, cands, side="right")
    segs = segments(truth)
    seg_max = np.array([scores[s:e].max() for s, e in segs])
    seg_len = np.array([e - s for s, e in segs])
    order = np.argsort(seg_max)
    seg_max, seg_len = seg_max[order], seg_len[order]
    tail = np.concatenate([np.cumsum(seg_len[::-1])[::-1], [0]])
    tp = tail[np.searchsorted(seg_max, cands, side="right")]
    fn = int(truth.sum()) - tp
    _, _, f1 = _prf(tp, fp, fn)
    return cands, tp, fp, fn, f1


def best_f1_threshold(scores, truth) -> Tuple[float, EvalReport]:
    """Global threshold maximizing point-adjusted F1 (ties: higher precision)."""
    cands, tp, fp, fn, f1 = f1_curve(scores, truth)
    precision, _, _ = _prf(tp, fp, fn)
    i = _pick(cands, f1, precision)
    thr = _reported_threshold(cands, i)
    report, _ = evaluate(scores, truth, thr)
    return thr, report


def best_f1_threshold_bruteforce(scores, truth) -> Tuple[float, EvalReport]:
    """Reference search: point-adjust and count at every candidate threshold."""
    scores, truth = _check_inputs(scores, truth)
    cands = candidate_thresholds(scores)
    tps, fps, fns = [], [], []
    for tau in cands:
        pred = point_adjust((scores > tau).astype(np.int64), truth)
        tps.append(int(((pred == 1) & (truth == 1)).sum()))
        fps.append(int(((pred == 1) & (truth == 0)).sum()))
        fns.append(int(((pred == 0) & (truth == 1)).sum()))
    precision, _, f1 = _prf(tps, fps, fns)
    i = _pick(cands, f1, precision)
    thr = _reported_threshold(cands, i)
    report, _ = evaluate(scores, truth, thr)
    return thr, report


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def write_scores_csv(path, series: ScoreSeries, pred=None, truth=None) -> None:
    s = series.scores
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        header = ["timestamp", "score", "forecast_term", "recon_term"]
        if pred is not None:
            header.append("pred")
        if truth is not None:
            header.append("truth")
        wr.writerow(header)
        for i, t in enumerate(series.timestamps):
            row = [int(t), repr(float(s[i])), repr(float(series.forecast_term[i])), repr(float(series.recon_term[i]))]
            if pred is not None:
                row.append(int(pred[i]))
            if truth is not None:
                row.append(int(truth[i]))
            wr.writerow(row)


def write_metrics_json(path, report: EvalReport, extra: Optional[dict] = None) -> None:
    doc = report.to_dict()
    doc.update(extra or {})
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)

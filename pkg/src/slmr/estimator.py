"""scikit-learn style front end for the SLMR detector."""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .detect import EvalReport, ScoreSeries, best_f1_threshold, evaluate, score
from .masking import MaskSpec
from .model import SlmrConfig, SlmrModel, TrainConfig, train
from .pipeline import DataError, MinMaxNormalizer, Windows


class SLMRDetector(BaseEstimator):
    """Unsupervised multivariate time-series anomaly detector.

    ``fit`` takes an anomaly-free ``(n, k)`` training matrix. Scores are
    produced for timestamps ``w .. n-1`` of the scored matrix, so
    ``score_samples`` and ``predict`` return ``n - window`` values.

    Parameters mirror :class:`slmr.model.SlmrConfig` (architecture and
    ablation switches), :class:`slmr.masking.MaskSpec` and
    :class:`slmr.model.TrainConfig`.
    """

    def __init__(
        self,
        window: int = 100,
        groups: int = 4,
        channels: int = 32,
        hidden: int = 64,
        se_hidden: int = 4,
        gamma_score: float = 1.0,
        mask: bool = True,
        odd_even: bool = True,
        multi_cnn: bool = True,
        senet: bool = True,
        forecast_head: bool = True,
        reconstruct_head: bool = True,
        masked_loss_only: bool = False,
        mask_ratio: float = 0.1,
        mask_mean_len: float = 3.0,
        lr: float = 1e-3,
        batch_size: int = 256,
        epochs: int = 30,
        val_fraction: float = 0.1,
        train_stride: int = 1,
        full_window_recon: bool = False,
        random_state: int = 0,
    ):
        self.window = window
        self.groups = groups
        self.channels = channels
        self.hidden = hidden
        self.se_hidden = se_hidden
        self.gamma_score = gamma_score
        self.mask = mask
        self.odd_even = odd_even
        self.multi_cnn = multi_cnn
        self.senet = senet
        self.forecast_head = forecast_head
        self.reconstruct_head = reconstruct_head
        self.masked_loss_only = masked_loss_only
        self.mask_ratio = mask_ratio
        self.mask_mean_len = mask_mean_len
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.val_fraction = val_fraction
        self.train_stride = train_stride
        self.full_window_recon = full_window_recon
        self.random_state = random_state

    # -- configuration views ---------------------------------------------------
    def model_config(self, n_features: int) -> SlmrConfig:
        return SlmrConfig(
            window=self.window, n_features=n_features, groups=self.groups, channels=self.channels,
            hidden=self.hidden, se_hidden=self.se_hidden, gamma_score=self.gamma_score,
            mask=self.mask, odd_even=self.odd_even, multi_cnn=self.multi_cnn, senet=self.senet,
            forecast_head=self.forecast_head, reconstruct_head=self.reconstruct_head,
            masked_loss_only=self.masked_loss_only,
        ).validate()

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr, batch_size=self.batch_size, epochs=self.epochs, val_fraction=self.val_fraction,
            seed=self.random_state, mask_spec=MaskSpec(self.mask_mean_len, self.mask_ratio),
        )

    # -- estimator API -----------------------------------------------------------
    def fit(self, X, y=None, progress=None):
        X = check_array(X, dtype=np.float64)
        self.normalizer_ = MinMaxNormalizer().fit(X)
        Xn = self.normalizer_.transform(X)
        cfg = self.model_config(X.shape[1])
        self.model_ = SlmrModel(cfg, seed=self.random_state)
        windows = Windows(Xn, self.window, stride=self.train_stride)
        self.history_ = train(self.model_, windows, self.train_config(), progress=progress)
        self.n_features_in_ = X.shape[1]
        return self

    def _prepare(self, X) -> np.ndarray:
        check_is_fitted(self, ("model_", "normalizer_"))
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DataError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self.normalizer_.transform(X)

    def score_series(self, X, gamma_score: Optional[float] = None) -> ScoreSeries:
        Xn = self._prepare(X)
        gamma = self.gamma_score if gamma_score is None else gamma_score
        return score(self.model_, Xn, gamma, full_window_recon=self.full_window_recon)

    def score_samples(self, X) -> np.ndarray:
        """Anomaly score per timestamp ``t >= window`` (higher = more anomalous)."""
        return self.score_series(X).scores

    def fit_threshold(self, X, y) -> EvalReport:
        """Pick the best-F1 global threshold on labelled data ``y`` (length ``n``)."""
        scores = self.score_samples(X)
        truth = _aligned_labels(y, len(X), self.window)
        self.threshold_, report = best_f1_threshold(scores, truth)
        return report

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "threshold_")
        return (self.score_samples(X) > self.threshold_).astype(np.int64)

    def evaluate(self, X, y, threshold: Optional[float] = None) -> EvalReport:
        scores = self.score_samples(X)
        truth = _aligned_labels(y, len(X), self.window)
        if threshold is None:
            _, report = best_f1_threshold(scores, truth)
            return report
        report, _ = evaluate(scores, truth, threshold)
        return report

    # -- persistence -------------------------------------------------------------
    def save(self, path, extra_meta: Optional[dict] = None) -> None:
        check_is_fitted(self, "model_")
        meta = {"estimator": self.get_params(), "normalizer": self.normalizer_.to_dict()}
        if hasattr(self, "threshold_"):
            meta["threshold"] = self.threshold_
        meta.update(extra_meta or {})
        self.model_.save(path, meta)

    @classmethod
    def load(cls, path) -> "SLMRDetector":
        model, meta = SlmrModel.load(path)
        params = meta.get("estimator", {})
        est = cls(**{k: v for k, v in params.items() if k in cls._get_param_names()})
        est.model_ = model
        est.normalizer_ = MinMaxNormalizer.from_dict(meta["normalizer"])
        est.n_features_in_ = model.config.n_features
        if "threshold" in meta:
            est.threshold_ = float(meta["threshold"])
        return est


def _aligned_labels(y, n: int, w: int) -> np.ndarray:
    y = np.asarray(y).astype(np.int64).ravel()
    if len(y) != n:
        raise DataError(f"labels have length {len(y)}, data has {n} rows")
    return y[w:]

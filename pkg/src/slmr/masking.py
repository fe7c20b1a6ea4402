"""Geometric segment masks for masked self-supervised training.

Each mask column alternates between masked (0) and unmasked (1) runs. A
masked run ends at every step with probability ``1/mean_len``; an unmasked
run ends with probability ``(1/mean_len) * ratio / (1 - ratio)``. Both run
lengths are therefore geometric on {1, 2, ...}, with means ``mean_len`` and
``mean_len * (1 - ratio) / ratio``, and the long-run masked fraction is
``ratio``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, mul


@dataclass(frozen=True)
class MaskSpec:
    mean_len: float = 3.0
    ratio: float = 0.1
    per_feature: bool = True

    def __post_init__(self):
        if not 0.0 < self.ratio < 1.0:
            raise ValueError(f"mask ratio must lie in (0, 1), got {self.ratio}")
        if self.mean_len < 1.0:
            raise ValueError(f"mean masked length must be >= 1, got {self.mean_len}")
        if self.unmask_stop_prob > 1.0:
            raise ValueError(
                f"ratio={self.ratio} with mean_len={self.mean_len} gives unmasked runs shorter than 1"
            )

    @property
    def mask_stop_prob(self) -> float:
        return 1.0 / self.mean_len

    @property
    def unmask_stop_prob(self) -> float:
        return self.mask_stop_prob * self.ratio / (1.0 - self.ratio)

    @property
    def mean_unmasked_len(self) -> float:
        return self.mean_len * (1.0 - self.ratio) / self.ratio


def _markov_columns(spec: MaskSpec, length: int, n_cols: int, rng: np.random.Generator) -> np.ndarray:
    # Two-state chain; stepwise stop probabilities give geometric run lengths.
    out = np.empty((length, n_cols), dtype=np.float64)
    state = (rng.random(n_cols) >= spec.ratio).astype(np.float64)  # 1 = keep
    u = rng.random((length, n_cols))
    p_mask, p_keep = spec.mask_stop_prob, spec.unmask_stop_prob
    for t in range(length):
        out[t] = state
        stop = np.where(state == 1.0, u[t] < p_keep, u[t] < p_mask)
        state = np.where(stop, 1.0 - state, state)
    return out


def generate_mask(spec: MaskSpec, w: int, k: int, rng_seed=None) -> np.ndarray:
    """Binary mask of shape ``(w, k)``; deterministic for a given seed.

    ``rng_seed`` may be an int, a sequence of ints, or a ``numpy`` Generator.
    With ``per_feature=False`` one column is drawn and shared by all features.
    """
    if w < 1 or k < 1:
        raise ValueError(f"mask shape must be positive, got ({w}, {k})")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    cols = k if spec.per_feature else 1
    m = _markov_columns(spec, w, cols, rng)
    return m if spec.per_feature else np.repeat(m, k, axis=1)


def generate_batch_masks(spec: MaskSpec, batch: int, w: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """``batch`` independent masks, shape ``(batch, w, k)``."""
    cols = k if spec.per_feature else 1
    m = _markov_columns(spec, w, batch * cols, rng)        # (w, batch*cols)
    m = m.reshape(w, batch, cols).transpose(1, 0, 2)
    return m if spec.per_feature else np.repeat(m, k, axis=2)


def apply_mask(x, m) -> Tensor:
    """Elementwise product ``m * x``; masked cells become exactly 0."""
    m_arr = m.data if isinstance(m, Tensor) else np.asarray(m, dtype=np.float64)
    x_shape = x.shape if isinstance(x, Tensor) else np.shape(x)
    if tuple(m_arr.shape) != tuple(x_shape):
        raise ValueError(f"mask shape {list(m_arr.shape)} does not match input shape {list(x_shape)}")
    if not np.all((m_arr == 0.0) | (m_arr == 1.0)):
        raise ValueError("mask entries must be 0 or 1")
    return mul(x, m_arr)


def run_lengths(column: np.ndarray, value: float) -> np.ndarray:
    """Lengths of maximal runs equal to ``value`` in a 1-D array."""
    hit = np.concatenate([[0], (np.asarray(column) == value).astype(np.int8), [0]])
    edges = np.flatnonzero(np.diff(hit))
    return edges[1::2] - edges[::2]

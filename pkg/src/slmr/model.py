"""SLMR network: odd/even split with interaction, multi-scale residual
dilated convolution, channel attention, and a GRU trunk feeding a forecast
head and a reconstruction head.

Tensors flowing through the network use the ``[batch, channel, time]``
layout until the GRU, which consumes ``[batch, time, feature]``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import layers
from .layers import AdamState, ConvSpec, GruParams, SEParams, adam_step, conv1d, dense, gru_forward, senet1d
from .masking import MaskSpec, generate_batch_masks
from .tensor import Tensor, concat, no_grad, sqrt, stack, transpose

logger = logging.getLogger(__name__)

ABLATIONS = ("mask", "odd_even", "multi_cnn", "senet", "forecast_head", "reconstruct_head")


class NumericError(FloatingPointError):
    """Raised when a loss or gradient stops being finite."""


@dataclass
class SlmrConfig:
    window: int = 100
    n_features: int = 1
    groups: int = 4
    channels: int = 32
    hidden: int = 64
    se_hidden: int = 4
    gamma_score: float = 1.0
    mask: bool = True
    odd_even: bool = True
    multi_cnn: bool = True
    senet: bool = True
    forecast_head: bool = True
    reconstruct_head: bool = True
    masked_loss_only: bool = False

    def validate(self) -> "SlmrConfig":
        problems = []
        if self.window < 2:
            problems.append(f"window must be >= 2 (got {self.window})")
        if self.odd_even and self.window % 2:
            problems.append(f"window must be even when odd_even is enabled (got {self.window})")
        if self.n_features < 1:
            problems.append("n_features must be >= 1")
        if self.groups < 2:
            problems.append(f"groups must be >= 2 (got {self.groups})")
        if self.channels < 1 or self.channels % self.groups:
            problems.append(f"channels ({self.channels}) must be a positive multiple of groups ({self.groups})")
        if self.hidden < 1 or self.se_hidden < 1:
            problems.append("hidden sizes must be positive")
        if self.gamma_score < 0:
            problems.append("gamma_score must be >= 0")
        if not (self.forecast_head or self.reconstruct_head):
            problems.append("at least one of forecast_head / reconstruct_head must be enabled")
        if problems:
            raise ValueError("invalid SlmrConfig: " + "; ".join(problems))
        return self

    def without(self, switch: str) -> "SlmrConfig":
        if switch not in ABLATIONS:
            raise ValueError(f"unknown ablation switch {switch!r}; choose from {ABLATIONS}")
        return replace(self, **{switch: False})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SlmrConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def alpha_kernel(group: int) -> int:
    """Kernel size of the alpha conv acting on 1-based channel group ``group`` (>= 2)."""
    return 2 * (group - 1) + 1


# ---------------------------------------------------------------------------
# parameter construction
# ---------------------------------------------------------------------------

def _conv_params(params: dict, prefix: str, spec: ConvSpec, rng) -> None:
    w, b = spec.init(rng)
    params[f"{prefix}.w"] = w
    params[f"{prefix}.b"] = b


def _conv_block_params(params: dict, prefix: str, cfg: SlmrConfig, rng) -> None:
    k, c, s = cfg.n_features, cfg.channels, cfg.groups
    if cfg.multi_cnn:
        _conv_params(params, f"{prefix}.in", ConvSpec.gamma(k, c), rng)
        g = c // s
        for i in range(2, s + 1):
            _conv_params(params, f"{prefix}.alpha{i}", ConvSpec.alpha(g, g, i - 1), rng)
        _conv_params(params, f"{prefix}.out", ConvSpec.gamma(c, k), rng)
    else:
        _conv_params(params, f"{prefix}.basic", ConvSpec.beta(k, k), rng)


def init_params(cfg: SlmrConfig, seed: int = 0) -> Dict[str, Tensor]:
    cfg.validate()
    rng = np.random.default_rng(seed)
    params: Dict[str, Tensor] = {}
    if cfg.odd_even:
        _conv_block_params(params, "even", cfg, rng)
        _conv_block_params(params, "odd", cfg, rng)
    else:
        _conv_block_params(params, "full", cfg, rng)
    if cfg.senet:
        se = SEParams.init(cfg.se_hidden, rng)
        params.update({"se.w1": se.w1, "se.b1": se.b1, "se.w2": se.w2, "se.b2": se.b2})
    gru = GruParams.init(cfg.n_features, cfg.hidden, rng)
    params.update({"gru.w": gru.w, "gru.u": gru.u, "gru.b": gru.b})
    if cfg.forecast_head:
        params["forecast.w"], params["forecast.b"] = layers.init_dense(cfg.hidden, cfg.n_features, rng)
    if cfg.reconstruct_head:
        params["recon.w"], params["recon.b"] = layers.init_dense(cfg.hidden, cfg.n_features, rng)
    return params


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------

def multiscale_conv(x: Tensor, params: Dict[str, Tensor], prefix: str, groups: int) -> Tensor:
    """1x1 projection, channel-group residual cascade, 1x1 projection back.

    Group 1 passes through; group 2 gets its own alpha conv; every later
    group adds the previous group's output before its alpha conv.
    """
    w_in = params[f"{prefix}.in.w"]
    h = conv1d(x, ConvSpec.gamma(w_in.shape[1], w_in.shape[0]), w_in, params[f"{prefix}.in.b"])
    c = h.shape[1]
    if c % groups:
        raise ValueError(f"multiscale_conv: {c} channels not divisible into {groups} groups")
    g = c // groups
    chunks = [h[:, i * g:(i + 1) * g, :] for i in range(groups)]
    outs = [chunks[0]]
    for i in range(2, groups + 1):
        inp = chunks[i - 1] if i == 2 else chunks[i - 1] + outs[-1]
        spec = ConvSpec.alpha(g, g, i - 1)
        outs.append(conv1d(inp, spec, params[f"{prefix}.alpha{i}.w"], params[f"{prefix}.alpha{i}.b"]))
    merged = concat(outs, axis=1)
    w_out = params[f"{prefix}.out.w"]
    return conv1d(merged, ConvSpec.gamma(w_out.shape[1], w_out.shape[0]), w_out, params[f"{prefix}.out.b"])


def conv_block(x: Tensor, params: Dict[str, Tensor], prefix: str, cfg: SlmrConfig) -> Tensor:
    if cfg.multi_cnn:
        return multiscale_conv(x, params, prefix, cfg.groups)
    spec = ConvSpec.beta(cfg.n_features, cfg.n_features)
    return conv1d(x, spec, params[f"{prefix}.basic.w"], params[f"{prefix}.basic.b"])


def split_even_odd(x: Tensor) -> Tuple[Tensor, Tensor]:
    """0-based even time steps (0, 2, ...) and odd time steps (1, 3, ...)."""
    if x.shape[-1] % 2:
        raise ValueError(f"sequence split needs an even length, got {x.shape[-1]}")
    return x[..., 0::2], x[..., 1::2]


def interleave(even: Tensor, odd: Tensor) -> Tensor:
    b, c, t = even.shape
    return stack([even, odd], axis=-1).reshape(b, c, 2 * t)


def split_interact(x: Tensor, params: Dict[str, Tensor], cfg: SlmrConfig) -> Tensor:
    even, odd = split_even_odd(x)
    even_new = odd + conv_block(even, params, "even", cfg)
    odd_new = even + conv_block(odd, params, "odd", cfg)
    return interleave(even_new, odd_new)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

class SlmrModel:
    """All learnable arrays of one SLMR network plus its config."""

    def __init__(self, config: SlmrConfig, seed: int = 0, params: Optional[Dict[str, Tensor]] = None):
        self.config = config.validate()
        self.params = params if params is not None else init_params(config, seed)

    # -- forward ------------------------------------------------------------
    def features(self, x: Tensor) -> Tensor:
        """Convolutional front end: ``[B, k, w] -> [B, k, w]``."""
        cfg = self.config
        if cfg.odd_even:
            h = split_interact(x, self.params, cfg)
        else:
            h = x + conv_block(x, self.params, "full", cfg)
        if cfg.senet:
            p = self.params
            se = SEParams(cfg.se_hidden, p["se.w1"], p["se.b1"], p["se.w2"], p["se.b2"])
            h = senet1d(h, se)
        return h

    def forward(self, x) -> Tuple[Optional[Tensor], Optional[Tensor]]:
        """Return ``(forecast[B, k], recon[B, w, k])``; a disabled head yields None."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        cfg = self.config
        if x.ndim != 3 or x.shape[1:] != (cfg.n_features, cfg.window):
            raise ValueError(
                f"expected input [B, {cfg.n_features}, {cfg.window}], got {list(x.shape)}"
            )
        h = transpose(self.features(x), (0, 2, 1))
        p = self.params
        gru = GruParams(cfg.n_features, cfg.hidden, p["gru.w"], p["gru.u"], p["gru.b"])
        outs, last = gru_forward(h, gru)
        forecast = dense(last, p["forecast.w"], p["forecast.b"]) if cfg.forecast_head else None
        recon = dense(outs, p["recon.w"], p["recon.b"]) if cfg.reconstruct_head else None
        return forecast, recon

    __call__ = forward

    def loss(self, x_in, recon_target, forecast_target, mask=None) -> Tuple[Tensor, Tensor, Tensor]:
        """Batch-mean RMSE losses ``(total, forecast, reconstruction)``.

        ``x_in`` is the (possibly masked) network input ``[B, k, w]``;
        ``recon_target`` the clean window ``[B, w, k]``; ``forecast_target``
        the next row ``[B, k]``. ``mask`` (``[B, w, k]``) is only consulted
        when ``masked_loss_only`` is set.
        """
        forecast, recon = self.forward(x_in)
        zero = Tensor(0.0)
        loss_f = loss_r = zero
        if forecast is not None:
            loss_f = rmse_rows(forecast - Tensor(forecast_target), axes=(1,)).mean()
        if recon is not None:
            resid = recon - Tensor(recon_target)
            if self.config.masked_loss_only and mask is not None:
                resid = resid * (1.0 - np.asarray(mask))
            loss_r = rmse_rows(resid, axes=(1, 2)).mean()
        total = loss_f + loss_r
        if not np.isfinite(total.data):
            raise NumericError(f"non-finite loss (forecast={loss_f.data}, recon={loss_r.data})")
        return total, loss_f, loss_r

    # -- parameter plumbing ---------------------------------------------------
    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, arr in state.items():
            if arr.shape != self.params[k].shape:
                raise ValueError(f"parameter {k}: shape {list(arr.shape)} != {list(self.params[k].shape)}")
            self.params[k].data = np.array(arr, dtype=np.float64)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def save(self, path, extra_meta: Optional[dict] = None) -> None:
        meta = {"config": self.config.to_dict()}
        meta.update(extra_meta or {})
        layers.save_checkpoint(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path) -> Tuple["SlmrModel", dict]:
        state, meta = layers.load_checkpoint(path)
        model = cls(SlmrConfig.from_dict(meta["config"]))
        model.load_state_dict(state)
        return model, meta


def rmse_rows(resid: Tensor, axes) -> Tensor:
    """``sqrt(sum(resid**2))`` over ``axes``, one value per batch row."""
    return sqrt((resid * resid).sum(axis=axes))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 30
    val_fraction: float = 0.1
    seed: int = 0
    shuffle: bool = True
    mask_spec: MaskSpec = field(default_factory=MaskSpec)


@dataclass
class TrainHistory:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    train_loss_f: List[float] = field(default_factory=list)
    train_loss_r: List[float] = field(default_factory=list)
    best_epoch: int = -1
    seconds: float = 0.0

    def rows(self):
        for i in range(len(self.train_loss)):
            yield {
                "epoch": i + 1,
                "train_loss": self.train_loss[i],
                "train_loss_f": self.train_loss_f[i],
                "train_loss_r": self.train_loss_r[i],
                "val_loss": self.val_loss[i],
            }


def _evaluate_loss(model: SlmrModel, windows, idx: np.ndarray, batch_size: int) -> float:
    if len(idx) == 0:
        return float("nan")
    total = 0.0
    with no_grad():
        for start in range(0, len(idx), batch_size):
            sel = idx[start:start + batch_size]
            x, rt, ft = windows.batch(sel)
            loss, _, _ = model.loss(x, rt, ft)
            total += float(loss.data) * len(sel)
    return total / len(idx)


def train(model: SlmrModel, windows, cfg: TrainConfig, progress=None) -> TrainHistory:
    """Adam training with chronological validation hold-out.

    ``windows`` is a :class:`slmr.pipeline.Windows`. The last
    ``val_fraction`` of windows are held out; the parameters with the lowest
    validation loss are restored at the end.
    """
    n = len(windows)
    if n < 2:
        raise ValueError("need at least two windows to train")
    n_val = int(round(n * cfg.val_fraction))
    n_val = min(max(n_val, 1 if cfg.val_fraction > 0 else 0), n - 1)
    train_idx = np.arange(n - n_val)
    val_idx = np.arange(n - n_val, n)
    rng = np.random.default_rng(cfg.seed)
    state = AdamState(lr=cfg.lr)
    mcfg = model.config
    hist = TrainHistory()
    best_val, best_state = np.inf, model.state_dict()
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        order = rng.permutation(train_idx) if cfg.shuffle else train_idx
        sums = np.zeros(3)
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            sel = order[start:start + cfg.batch_size]
            x, rt, ft = windows.batch(sel)
            mask = None
            if mcfg.mask:
                mrng = np.random.default_rng([cfg.seed, epoch, b])
                mask = generate_batch_masks(cfg.mask_spec, len(sel), mcfg.window, mcfg.n_features, mrng)
                x = x * mask.transpose(0, 2, 1)
            model.zero_grad()
            total, lf, lr_ = model.loss(Tensor(x), rt, ft, mask=mask)
            total.backward()
            grads = {k: p.grad for k, p in model.params.items() if p.grad is not None}
            try:
                adam_step(model.params, grads, state)
            except FloatingPointError as exc:
                raise NumericError(f"epoch {epoch + 1}, batch {b}: {exc}") from exc
            sums += np.array([float(total.data), float(lf.data), float(lr_.data)]) * len(sel)
        sums /= len(order)
        val = _evaluate_loss(model, windows, val_idx, cfg.batch_size) if n_val else sums[0]
        hist.train_loss.append(float(sums[0]))
        hist.train_loss_f.append(float(sums[1]))
        hist.train_loss_r.append(float(sums[2]))
        hist.val_loss.append(float(val))
        if not np.isfinite(val):
            raise NumericError(f"validation loss diverged at epoch {epoch + 1}")
        if val < best_val:
            best_val, best_state, hist.best_epoch = val, model.state_dict(), epoch + 1
        logger.info("epoch %d train=%.5f val=%.5f", epoch + 1, sums[0], val)
        if progress is not None:
            progress(epoch + 1, float(sums[0]), float(val))
    if cfg.epochs > 0:
        model.load_state_dict(best_state)
    hist.seconds = time.perf_counter() - t0
    return hist

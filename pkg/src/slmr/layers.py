"""Neural building blocks: dilated conv1d, GRU, SENet1D, dense head, Adam.

Layer functions take their parameters explicitly so that the model can keep
every learnable array in one flat name -> Tensor mapping (which is also what
the checkpoint format stores).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .tensor import Tensor, conv1d_raw, gru_raw, matmul, mean, relu, sigmoid, transpose, zeros

CHECKPOINT_FORMAT = "slmr-checkpoint"
CHECKPOINT_VERSION = 1

VARIANTS = ("alpha", "beta", "gamma")


@dataclass(frozen=True)
class ConvSpec:
    """Shape of one convolution.

    The three named variants are fixed shapes: ``gamma`` is a 1x1 channel
    projection, ``beta`` a plain kernel-3 conv, and ``alpha`` the dilation-2
    conv whose kernel grows with the cascade stage (``2*stage + 1``).
    """

    in_channels: int
    out_channels: int
    kernel_size: int = 1
    dilation: int = 1
    variant: Optional[str] = None

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("conv channels must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be positive, got {self.dilation}")
        if self.variant is not None and self.variant not in VARIANTS:
            raise ValueError(f"unknown conv variant {self.variant!r}")
        if self.variant == "gamma" and (self.kernel_size, self.dilation) != (1, 1):
            raise ValueError("gamma convs are 1x1 with dilation 1")
        if self.variant == "beta" and (self.kernel_size, self.dilation) != (3, 1):
            raise ValueError("beta convs use kernel 3, dilation 1")
        if self.variant == "alpha" and self.dilation != 2:
            raise ValueError("alpha convs use dilation 2")

    @classmethod
    def alpha(cls, in_channels: int, out_channels: int, stage: int) -> "ConvSpec":
        if stage < 1:
            raise ValueError("alpha stage index starts at 1")
        return cls(in_channels, out_channels, 2 * stage + 1, 2, "alpha")

    @classmethod
    def beta(cls, in_channels: int, out_channels: int) -> "ConvSpec":
        return cls(in_channels, out_channels, 3, 1, "beta")

    @classmethod
    def gamma(cls, in_channels: int, out_channels: int) -> "ConvSpec":
        return cls(in_channels, out_channels, 1, 1, "gamma")

    @property
    def weight_shape(self) -> Tuple[int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel_size)

    def init(self, rng: np.random.Generator) -> Tuple[Tensor, Tensor]:
        """Xavier-uniform weights, zero bias."""
        fan_in = self.in_channels * self.kernel_size
        fan_out = self.out_channels * self.kernel_size
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=self.weight_shape)
        return Tensor(w, requires_grad=True), zeros(self.out_channels, requires_grad=True)


def conv1d(x: Tensor, spec: ConvSpec, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Same-length convolution of ``x[B, Cin, T]`` with zero padding."""
    if tuple(weight.shape) != spec.weight_shape:
        raise ValueError(f"conv1d weight shape {list(weight.shape)} != {list(spec.weight_shape)}")
    if bias is None:
        bias = Tensor(np.zeros(spec.out_channels))
    return conv1d_raw(x, weight, bias, spec.dilation)


# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------

@dataclass
class GruParams:
    """Gate blocks are stacked column-wise as [update | reset | candidate]."""

    input_size: int
    hidden_size: int
    w: Tensor = None  # [D, 3H]
    u: Tensor = None  # [H, 3H]
    b: Tensor = None  # [3H]

    def __post_init__(self):
        d, h = self.input_size, self.hidden_size
        if d < 1 or h < 1:
            raise ValueError("GRU sizes must be positive")
        if self.w is None:
            self.w = zeros((d, 3 * h), requires_grad=True)
            self.u = zeros((h, 3 * h), requires_grad=True)
            self.b = zeros(3 * h, requires_grad=True)
        if self.w.shape != (d, 3 * h) or self.u.shape != (h, 3 * h) or self.b.shape != (3 * h,):
            raise ValueError("GRU parameter shapes inconsistent with input/hidden size")

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng: np.random.Generator) -> "GruParams":
        k = 1.0 / np.sqrt(hidden_size)
        w = rng.uniform(-k, k, size=(input_size, 3 * hidden_size))
        u = rng.uniform(-k, k, size=(hidden_size, 3 * hidden_size))
        return cls(
            input_size,
            hidden_size,
            Tensor(w, requires_grad=True),
            Tensor(u, requires_grad=True),
            zeros(3 * hidden_size, requires_grad=True),
        )


def gru_forward(x: Tensor, params: GruParams, h0: Optional[Tensor] = None) -> Tuple[Tensor, Tensor]:
    """Return ``(outputs[B, T, H], h_T[B, H])``."""
    if x.ndim != 3:
        raise ValueError(f"gru_forward expects x[B, T, D], got shape {list(x.shape)}")
    if x.shape[2] != params.input_size:
        raise ValueError(
            f"gru_forward: input has {x.shape[2]} features, params expect {params.input_size}"
        )
    if h0 is None:
        h0 = Tensor(np.zeros((x.shape[0], params.hidden_size)))
    outputs = gru_raw(x, params.w, params.u, params.b, h0)
    return outputs, outputs[:, -1, :]


# ---------------------------------------------------------------------------
# SENet1D
# ---------------------------------------------------------------------------

@dataclass
class SEParams:
    """Two kernel-3 convs that slide along the pooled channel descriptor."""

    hidden: int
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @property
    def spec1(self) -> ConvSpec:
        return ConvSpec.beta(1, self.hidden)

    @property
    def spec2(self) -> ConvSpec:
        return ConvSpec.beta(self.hidden, 1)

    @classmethod
    def init(cls, hidden: int, rng: np.random.Generator) -> "SEParams":
        w1, b1 = ConvSpec.beta(1, hidden).init(rng)
        w2, b2 = ConvSpec.beta(hidden, 1).init(rng)
        return cls(hidden, w1, b1, w2, b2)

    @classmethod
    def zero(cls, hidden: int) -> "SEParams":
        return cls(
            hidden,
            zeros((hidden, 1, 3), requires_grad=True),
            zeros(hidden, requires_grad=True),
            zeros((1, hidden, 3), requires_grad=True),
            zeros(1, requires_grad=True),
        )


def channel_weights(x: Tensor, params: SEParams) -> Tensor:
    """Per-channel gate ``z[B, C, 1]`` in (0, 1)."""
    if x.ndim != 3 or x.shape[1] < 1:
        raise ValueError(f"senet1d expects x[B, C, T] with C >= 1, got {list(x.shape)}")
    pooled = mean(x, axis=2, keepdims=True)          # [B, C, 1]
    desc = transpose(pooled, (0, 2, 1))              # [B, 1, C]
    hid = relu(conv1d(desc, params.spec1, params.w1, params.b1))
    z = sigmoid(conv1d(hid, params.spec2, params.w2, params.b2))
    return transpose(z, (0, 2, 1))


def senet1d(x: Tensor, params: SEParams) -> Tensor:
    return channel_weights(x, params) * x


# ---------------------------------------------------------------------------
# dense
# ---------------------------------------------------------------------------

def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map over the last axis: ``x[..., H] @ W[H, O] + b[O]``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ValueError(f"dense: input {list(x.shape)} incompatible with weight {list(weight.shape)}")
    if bias.shape != (weight.shape[1],):
        raise ValueError(f"dense: bias {list(bias.shape)} != [{weight.shape[1]}]")
    return matmul(x, weight) + bias


def init_dense(n_in: int, n_out: int, rng: np.random.Generator) -> Tuple[Tensor, Tensor]:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return (
        Tensor(rng.uniform(-limit, limit, size=(n_in, n_out)), requires_grad=True),
        zeros(n_out, requires_grad=True),
    )


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, applied in place to ``params``."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {list(g.shape)} != parameter {name} {list(params[name].shape)}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p = params[name]
        p.data = p.data - update
    return state


# ---------------------------------------------------------------------------
# checkpoint files
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: Mapping[str, np.ndarray], meta: Optional[dict] = None) -> None:
    """Write a JSON checkpoint.

    Layout::

        {"format": "slmr-checkpoint", "version": 1, "meta": {...},
         "params": {name: {"shape": [...], "data": [row-major floats]}}}

    Floats are written with ``repr`` precision, so loading restores the
    exact float64 values.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "params": {
            name: {"shape": list(np.shape(arr)), "data": np.asarray(arr, dtype=np.float64).ravel().tolist()}
            for name, arr in params.items()
        },
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an SLMR checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    params = {}
    for name, entry in doc["params"].items():
        data = np.asarray(entry["data"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if int(np.prod(shape)) != data.size:
            raise ValueError(f"{path}: parameter {name} has {data.size} values for shape {list(shape)}")
        params[name] = data.reshape(shape)
    return params, doc.get("meta", {})

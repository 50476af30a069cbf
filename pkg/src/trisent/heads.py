"""Classification heads mapping encoder output to 3-class logits.

Three kinds share the wiring dropout -> dense stage -> activation -> dropout
-> final linear:

  linear  : consumes the pooled sentence embedding; dense d -> d, tanh.
  bigru   : consumes token-level hidden states; bidirectional GRU over the
            real (unmasked) positions, relu on the concatenated final
            forward/backward states.
  bilstm  : same wiring with LSTM cells.

At the 768-wide reference scale the recurrent dense stage is 768 -> 256 per
direction with a 512 -> 3 final layer; smaller encoders keep the same 3:1
compression via dense_out = max(8, round(d_model / 3)).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import tensor as T
from .seeding import derive_seed

HEAD_KINDS = ("linear", "bigru", "bilstm")


@dataclass(frozen=True)
class HeadConfig:
    kind: str = "linear"
    d_model: int = 64
    dropout_p: float = 0.1

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise ValueError(f"head kind must be one of {HEAD_KINDS}, got {self.kind!r}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def dense_in(self) -> int:
        return self.d_model

    @property
    def dense_out(self) -> int:
        if self.kind == "linear":
            return self.d_model
        return max(8, round(self.d_model / 3))

    @property
    def final_in(self) -> int:
        return self.dense_out if self.kind == "linear" else 2 * self.dense_out

    @property
    def final_out(self) -> int:
        return 3

    @property
    def activation(self) -> str:
        return "tanh" if self.kind == "linear" else "relu"


@dataclass
class HeadParams:
    config: HeadConfig
    tensors: dict = field(default_factory=dict)

    def copy(self) -> "HeadParams":
        return HeadParams(self.config, {
            k: T.Tensor(v.data.copy(), requires_grad=v.requires_grad)
            for k, v in self.tensors.items()})


def init_head_params(config: HeadConfig, seed: int) -> HeadParams:
    rng = np.random.default_rng(derive_seed(seed, "head-init", config.kind))
    t: dict = {}

    def uniform(name, shape, fan_in):
        k = 1.0 / np.sqrt(fan_in)
        t[name] = T.Tensor(rng.uniform(-k, k, size=shape), requires_grad=True)

    d, h = config.d_model, config.dense_out
    if config.kind == "linear":
        uniform("dense.w", (d, d), d)
        uniform("dense.b", (d,), d)
    else:
        n_gates = 3 if config.kind == "bigru" else 4
        for direction in ("fwd", "bwd"):
            uniform(f"{direction}.w_ih", (d, n_gates * h), h)
            uniform(f"{direction}.w_hh", (h, n_gates * h), h)
            uniform(f"{direction}.b_ih", (n_gates * h,), h)
            uniform(f"{direction}.b_hh", (n_gates * h,), h)
    uniform("final.w", (config.final_in, 3), config.final_in)
    uniform("final.b", (3,), config.final_in)
    return HeadParams(config, t)


def _gate(x: T.Tensor, lo: int, hi: int) -> T.Tensor:
    return T.slice_axis(x, -1, lo, hi)


def _run_direction(x3: T.Tensor, mask: np.ndarray, params: HeadParams,
                   direction: str) -> T.Tensor:
    """Run one recurrent direction; returns the final state [B, h].

    Updates are gated by the attention mask so the state freezes on padded
    positions: the forward final state is the state at the last real token,
    the backward final state the one at the first.
    """
    cfg = params.config
    t = params.tensors
    b, length, d = x3.shape
    h = cfg.dense_out
    w_ih, w_hh = t[f"{direction}.w_ih"], t[f"{direction}.w_hh"]
    b_ih, b_hh = t[f"{direction}.b_ih"], t[f"{direction}.b_hh"]

    state = T.Tensor(np.zeros((b, h), dtype=np.float32))
    cell = T.Tensor(np.zeros((b, h), dtype=np.float32))
    steps = range(length - 1, -1, -1) if direction == "bwd" else range(length)
    for step in steps:
        xt = T.reshape(T.slice_axis(x3, 1, step, step + 1), (b, d))
        gx = T.add(T.matmul(xt, w_ih), b_ih)
        gh = T.add(T.matmul(state, w_hh), b_hh)
        if cfg.kind == "bigru":
            r = T.sigmoid(T.add(_gate(gx, 0, h), _gate(gh, 0, h)))
            z = T.sigmoid(T.add(_gate(gx, h, 2 * h), _gate(gh, h, 2 * h)))
            n = T.tanh(T.add(_gate(gx, 2 * h, 3 * h), T.mul(r, _gate(gh, 2 * h, 3 * h))))
            new_state = T.add(T.mul(T.shift(T.neg(z), 1.0), n), T.mul(z, state))
        else:
            gates = T.add(gx, gh)
            i = T.sigmoid(_gate(gates, 0, h))
            f = T.sigmoid(_gate(gates, h, 2 * h))
            g = T.tanh(_gate(gates, 2 * h, 3 * h))
            o = T.sigmoid(_gate(gates, 3 * h, 4 * h))
            new_cell = T.add(T.mul(f, cell), T.mul(i, g))
            new_state = T.mul(o, T.tanh(new_cell))
        m = T.Tensor(mask[:, step:step + 1])
        not_m = T.Tensor(1 - mask[:, step:step + 1])
        if cfg.kind == "bilstm":
            cell = T.add(T.mul(m, new_cell), T.mul(not_m, cell))
        state = T.add(T.mul(m, new_state), T.mul(not_m, state))
    return state


def head_forward(encoder_out: Tuple[T.Tensor, T.Tensor], params: HeadParams,
                 mask: Optional[np.ndarray] = None, mode: str = "train",
                 seed: int = 0) -> T.Tensor:
    """Raw [B, 3] logits (no softmax)."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    hidden, pooled = encoder_out
    cfg = params.config
    t = params.tensors
    train = mode == "train"
    p = cfg.dropout_p
    if pooled.shape[-1] != cfg.d_model:
        raise T.ShapeError(
            f"head expects d_model={cfg.d_model}, encoder produced {pooled.shape[-1]}")

    if cfg.kind == "linear":
        x = T.dropout(pooled, p, derive_seed(seed, "head_drop1"), train)
        x = T.tanh(T.add(T.matmul(x, t["dense.w"]), t["dense.b"]))
        x = T.dropout(x, p, derive_seed(seed, "head_drop2"), train)
        return T.add(T.matmul(x, t["final.w"]), t["final.b"])

    if mask is None:
        mask = np.ones(hidden.shape[:2], dtype=np.int64)
    x3 = T.dropout(hidden, p, derive_seed(seed, "head_drop1"), train)
    fwd = _run_direction(x3, mask, params, "fwd")
    bwd = _run_direction(x3, mask, params, "bwd")
    feat = T.relu(T.concat_last([fwd, bwd]))
    feat = T.dropout(feat, p, derive_seed(seed, "head_drop2"), train)
    return T.add(T.matmul(feat, t["final.w"]), t["final.b"])


def predict(logits) -> np.ndarray:
    """Argmax class indices; ties break toward the lowest class index."""
    arr = logits.data if isinstance(logits, T.Tensor) else np.asarray(logits)
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError("predict on non-finite logits")
    return np.argmax(arr, axis=-1)

"""Small trainable transformer encoder with a masked-token prediction head.

Pre-layer-norm blocks, learned position embeddings, multi-head attention
with additive masking of pad positions (a -1e9 score stands in for -inf;
after the max-subtracted softmax the attention probability of a masked key
is exactly zero in float32, so trailing padding cannot leak into real
positions). The sentence embedding is the hidden state at the cls position
by default, with masked mean pooling behind a config switch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import tensor as T
from .data import CLS, MASK, PAD, SEP, TokenizedBatch
from .seeding import derive_seed


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: Optional[int] = None
    max_length: int = 64
    dropout_p: float = 0.1
    pooling: str = "cls"

    def __post_init__(self):
        if self.d_ff is None:
            object.__setattr__(self, "d_ff", 4 * self.d_model)
        if self.vocab_size < 5:
            raise ValueError("vocab_size must cover the reserved tokens")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.max_length < 2:
            raise ValueError("max_length must be >= 2")
        if self.pooling not in ("cls", "mean"):
            raise ValueError(f"pooling must be cls or mean, got {self.pooling!r}")


@dataclass
class EncoderParams:
    """All trainable encoder weights, in fixed declaration order."""

    config: EncoderConfig
    tensors: dict = field(default_factory=dict)

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.config, {
            k: T.Tensor(v.data.copy(), requires_grad=v.requires_grad)
            for k, v in self.tensors.items()})


def init_encoder_params(config: EncoderConfig, seed: int) -> EncoderParams:
    rng = np.random.default_rng(derive_seed(seed, "encoder-init"))
    t: dict = {}

    def w(name, shape):
        t[name] = T.Tensor(rng.normal(0.0, 0.02, size=shape), requires_grad=True)

    def zeros(name, shape):
        t[name] = T.Tensor(np.zeros(shape), requires_grad=True)

    def ones(name, shape):
        t[name] = T.Tensor(np.ones(shape), requires_grad=True)

    d, dff, v = config.d_model, config.d_ff, config.vocab_size
    w("tok_emb", (v, d))
    w("pos_emb", (config.max_length, d))
    for i in range(config.n_layers):
        ones(f"layer{i}.ln1.g", (d,))
        zeros(f"layer{i}.ln1.b", (d,))
        for name in ("wq", "wk", "wv", "wo"):
            w(f"layer{i}.attn.{name}", (d, d))
        for name in ("bq", "bk", "bv", "bo"):
            zeros(f"layer{i}.attn.{name}", (d,))
        ones(f"layer{i}.ln2.g", (d,))
        zeros(f"layer{i}.ln2.b", (d,))
        w(f"layer{i}.ff.w1", (d, dff))
        zeros(f"layer{i}.ff.b1", (dff,))
        w(f"layer{i}.ff.w2", (dff, d))
        zeros(f"layer{i}.ff.b2", (d,))
    ones("ln_f.g", (d,))
    zeros("ln_f.b", (d,))
    w("mlm.w", (d, v))
    zeros("mlm.b", (v,))
    return EncoderParams(config, t)


def _check_ids(ids: np.ndarray, vocab_size: int) -> None:
    bad = np.argwhere((ids < 0) | (ids >= vocab_size))
    if bad.size:
        b, pos = bad[0]
        raise IndexError(
            f"token id {ids[b, pos]} at (example {b}, position {pos}) is out of "
            f"range for a vocabulary of {vocab_size}")


def encode(batch: TokenizedBatch, params: EncoderParams, mode: str = "train",
           seed: int = 0):
    """Run the encoder. Returns (hidden [B, L, d], pooled [B, d]) tensors."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    cfg = params.config
    ids = batch.token_ids
    _check_ids(ids, cfg.vocab_size)
    L = batch.length
    if L > cfg.max_length:
        raise ValueError(f"batch length {L} exceeds max_length {cfg.max_length}")
    train = mode == "train"
    p = cfg.dropout_p
    t = params.tensors
    dh = cfg.d_model // cfg.n_heads
    inv_sqrt_dh = 1.0 / math.sqrt(dh)

    x = T.embedding(t["tok_emb"], ids)
    x = T.add(x, T.slice_axis(t["pos_emb"], 0, 0, L))
    x = T.dropout(x, p, derive_seed(seed, "emb"), train)

    # [B, 1, L] additive key mask, broadcast over queries and heads
    neg = T.Tensor(((1 - batch.attention_mask) * -1e9)[:, None, :])

    for i in range(cfg.n_layers):
        a = T.layer_norm(x, t[f"layer{i}.ln1.g"], t[f"layer{i}.ln1.b"])
        q = T.add(T.matmul(a, t[f"layer{i}.attn.wq"]), t[f"layer{i}.attn.bq"])
        k = T.add(T.matmul(a, t[f"layer{i}.attn.wk"]), t[f"layer{i}.attn.bk"])
        v = T.add(T.matmul(a, t[f"layer{i}.attn.wv"]), t[f"layer{i}.attn.bv"])
        ctx = []
        for h in range(cfg.n_heads):
            qh = T.slice_axis(q, -1, h * dh, (h + 1) * dh)
            kh = T.slice_axis(k, -1, h * dh, (h + 1) * dh)
            vh = T.slice_axis(v, -1, h * dh, (h + 1) * dh)
            scores = T.scale(T.matmul(qh, T.transpose_last2(kh)), inv_sqrt_dh)
            probs = T.softmax(T.add(scores, neg))
            probs = T.dropout(probs, p, derive_seed(seed, i, "attn_probs", h), train)
            ctx.append(T.matmul(probs, vh))
        attn_out = T.add(T.matmul(T.concat_last(ctx), t[f"layer{i}.attn.wo"]),
                         t[f"layer{i}.attn.bo"])
        x = T.add(x, T.dropout(attn_out, p, derive_seed(seed, i, "attn_out"), train))

        f = T.layer_norm(x, t[f"layer{i}.ln2.g"], t[f"layer{i}.ln2.b"])
        h1 = T.gelu(T.add(T.matmul(f, t[f"layer{i}.ff.w1"]), t[f"layer{i}.ff.b1"]))
        ff_out = T.add(T.matmul(h1, t[f"layer{i}.ff.w2"]), t[f"layer{i}.ff.b2"])
        x = T.add(x, T.dropout(ff_out, p, derive_seed(seed, i, "ff_out"), train))

    hidden = T.layer_norm(x, t["ln_f.g"], t["ln_f.b"])

    B = batch.size
    if cfg.pooling == "cls":
        pooled = T.reshape(T.slice_axis(hidden, 1, 0, 1), (B, cfg.d_model))
    else:
        m = T.Tensor(batch.attention_mask[:, :, None])
        summed = T.tsum(T.mul(hidden, m), axis=1)
        counts = T.Tensor(batch.attention_mask.sum(axis=1, keepdims=True))
        pooled = T.div(summed, counts)
    return hidden, pooled


def mlm_logits(hidden: T.Tensor, params: EncoderParams) -> T.Tensor:
    """Per-position vocabulary logits, [B, L, vocab]."""
    t = params.tensors
    return T.add(T.matmul(hidden, t["mlm.w"]), t["mlm.b"])


def mask_tokens(batch: TokenizedBatch, mask_rate: float, seed: int):
    """Independently mask non-special real tokens with probability mask_rate.

    Returns (masked batch, [k, 2] (example, position) array, [k] original ids).
    cls/sep/pad (and existing mask tokens) are never selected.
    """
    if not 0.0 <= mask_rate <= 1.0:
        raise ValueError(f"mask_rate must be in [0, 1], got {mask_rate}")
    ids = batch.token_ids
    maskable = (batch.attention_mask == 1) & ~np.isin(ids, (PAD, CLS, SEP, MASK))
    rng = np.random.default_rng(seed)
    selected = maskable & (rng.random(ids.shape) < mask_rate)
    new_ids = np.where(selected, MASK, ids)
    positions = np.argwhere(selected)
    targets = ids[selected]
    masked = TokenizedBatch(new_ids, batch.attention_mask.copy(), batch.labels.copy())
    return masked, positions, targets

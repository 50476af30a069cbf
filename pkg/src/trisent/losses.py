"""Loss functions and embedding-quality metrics.

Classification losses: cross-entropy and focal loss (focal with gamma=0 is
exactly cross-entropy). Contrastive losses: temperature-scaled InfoNCE over
cosine similarities, in the unsupervised (two dropout-noised views) and
supervised (positive + hard negative) variants. Probabilities are clamped
at 1e-12 before any log so a confidently wrong model yields a large finite
loss instead of NaN.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from . import tensor as T

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    kind: str = "cross_entropy"      # cross_entropy | focal
    gamma: float = 3.0               # focal only
    reduction: str = "mean"          # mean | sum
    temperature: float = 0.05        # contrastive losses

    def __post_init__(self):
        if self.kind not in ("cross_entropy", "focal"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"reduction must be mean or sum, got {self.reduction!r}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")


def _gold_probs(logits: T.Tensor, gold: np.ndarray) -> T.Tensor:
    """p_t: softmax probability of the gold class per row."""
    if logits.data.ndim != 2:
        raise T.ShapeError(f"classification logits must be [N, C], got {logits.shape}")
    n, c = logits.shape
    gold = np.asarray(gold, dtype=np.int64)
    if gold.shape != (n,):
        raise T.ShapeError(f"gold labels must have shape ({n},), got {gold.shape}")
    if gold.size and (gold.min() < 0 or gold.max() >= c):
        raise ValueError(f"gold label out of range [0, {c})")
    onehot = T.Tensor(np.eye(c, dtype=np.float32)[gold])
    return T.tsum(T.mul(T.softmax(logits), onehot), axis=-1)


def _reduce(per_example: T.Tensor, reduction: str) -> T.Tensor:
    if reduction == "mean":
        return T.tmean(per_example)
    if reduction == "sum":
        return T.tsum(per_example)
    raise ValueError(f"reduction must be mean or sum, got {reduction!r}")


def cross_entropy(logits: T.Tensor, gold: np.ndarray,
                  reduction: str = "mean") -> T.Tensor:
    """-log p_t, reduced over the batch."""
    p_t = _gold_probs(logits, gold)
    nll = T.neg(T.log(T.clamp_min(p_t, PROB_FLOOR)))
    return _reduce(nll, reduction)


def focal_loss(logits: T.Tensor, gold: np.ndarray, gamma: float = 3.0,
               reduction: str = "mean") -> T.Tensor:
    """-(1 - p_t)^gamma * log p_t, reduced over the batch."""
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    p_t = _gold_probs(logits, gold)
    nll = T.neg(T.log(T.clamp_min(p_t, PROB_FLOOR)))
    modulator = T.power(T.shift(T.neg(p_t), 1.0), gamma)
    return _reduce(T.mul(modulator, nll), reduction)


def classification_loss(config: LossConfig, logits: T.Tensor,
                        gold: np.ndarray) -> T.Tensor:
    if config.kind == "focal":
        return focal_loss(logits, gold, config.gamma, config.reduction)
    return cross_entropy(logits, gold, config.reduction)


def _normalize_rows(x: T.Tensor, what: str) -> T.Tensor:
    sq = T.tsum(T.mul(x, x), axis=-1, keepdims=True)
    if not (sq.data > 0).all():
        raise ValueError(f"zero-norm {what} embedding: cosine similarity undefined")
    return T.div(x, T.power(sq, 0.5))


def unsup_contrastive_loss(pooled_a: T.Tensor, pooled_b: T.Tensor,
                           temperature: float = 0.05) -> T.Tensor:
    """InfoNCE over two dropout-noised encodings of the same sentences.

    Row i of both inputs must encode sentence i; every other row of
    pooled_b serves as an in-batch negative.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    if pooled_a.shape != pooled_b.shape or pooled_a.data.ndim != 2:
        raise T.ShapeError(
            f"paired embeddings must be equal [B, d], got {pooled_a.shape} and {pooled_b.shape}")
    an = _normalize_rows(pooled_a, "anchor")
    bn = _normalize_rows(pooled_b, "positive")
    sim = T.scale(T.matmul(an, T.transpose_last2(bn)), 1.0 / temperature)
    gold = np.arange(pooled_a.shape[0])
    return cross_entropy(sim, gold)


def sup_contrastive_loss(anchor: T.Tensor, positive: T.Tensor,
                         hard_negative: T.Tensor,
                         temperature: float = 0.05) -> T.Tensor:
    """InfoNCE with in-batch positives and hard negatives (2B candidates)."""
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    if not (anchor.shape == positive.shape == hard_negative.shape) or anchor.data.ndim != 2:
        raise T.ShapeError(
            f"triple embeddings must be equal [B, d], got {anchor.shape}, "
            f"{positive.shape}, {hard_negative.shape}")
    an = _normalize_rows(anchor, "anchor")
    pn = _normalize_rows(positive, "positive")
    nn = _normalize_rows(hard_negative, "hard negative")
    sim = T.concat_last([T.matmul(an, T.transpose_last2(pn)),
                         T.matmul(an, T.transpose_last2(nn))])
    sim = T.scale(sim, 1.0 / temperature)
    gold = np.arange(anchor.shape[0])
    return cross_entropy(sim, gold)


def masked_token_loss(logits: T.Tensor, positions: np.ndarray,
                      target_ids: np.ndarray) -> T.Tensor:
    """Cross-entropy of [B, L, V] logits at the masked positions."""
    if len(target_ids) == 0:
        return T.Tensor(0.0)
    b, length, v = logits.shape
    flat = T.reshape(logits, (b * length, v))
    row_idx = positions[:, 0] * length + positions[:, 1]
    return cross_entropy(T.take_rows(flat, row_idx), target_ids)


def alignment_uniformity(pairs: Sequence[Tuple[np.ndarray, np.ndarray]]
                         ) -> Tuple[float, float]:
    """Embedding-quality metrics over unit-normalized positive pairs.

    alignment: mean squared distance between paired embeddings (lower is
    better). uniformity: log-mean of exp(-2 * squared distance) over all
    distinct points pooled from both sides (lower / more negative means the
    points are more spread out on the sphere).
    """
    if len(pairs) == 0:
        raise ValueError("alignment/uniformity need at least one pair")
    x = np.asarray([p[0] for p in pairs], dtype=np.float64)
    y = np.asarray([p[1] for p in pairs], dtype=np.float64)
    norms = np.concatenate([np.linalg.norm(x, axis=1), np.linalg.norm(y, axis=1)])
    if np.abs(norms - 1.0).max() > 1e-3:
        raise ValueError("alignment/uniformity expect unit-normalized embeddings")
    alignment = float(np.mean(np.sum((x - y) ** 2, axis=1)))

    points = np.vstack([x, y])
    n = points.shape[0]
    if n < 2:
        raise ValueError("uniformity needs at least 2 points")
    sq = np.sum(points**2, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * points @ points.T, 0.0)
    iu = np.triu_indices(n, k=1)
    uniformity = float(np.log(np.mean(np.exp(-2.0 * d2[iu]))))
    return alignment, uniformity

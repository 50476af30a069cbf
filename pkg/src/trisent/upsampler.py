"""Class rebalancing by fill-mask synthetic example generation.

Minority-class sentences are copied, a seeded subset of their tokens is
masked, and each masked slot is filled by sampling from the top-k masked-
token predictions of a trained encoder (excluding special tokens, and the
original token whenever an alternative exists). Labels are inherited from
the source example; synthetic rows carry source tag "synthetic".
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import tensor as T
from .data import (LABELS, ClassDistribution, LabeledExample, RESERVED_TOKENS,
                   SEP, Vocab, class_distribution, encode_texts, tokenize)
from .encoder import EncoderParams, encode, mask_tokens, mlm_logits
from .seeding import derive_seed

logger = logging.getLogger(__name__)

N_RESERVED = len(RESERVED_TOKENS)


@dataclass(frozen=True)
class BalancePlan:
    current: dict    # label -> count
    target: dict     # label -> count
    deficit: dict    # label -> target - current

    def total_synthetic(self) -> int:
        return sum(self.deficit.values())


def make_plan(dist: ClassDistribution, target: Optional[int] = None) -> BalancePlan:
    """Per-class synthetic deficits to reach the target count (default: the
    largest current class count)."""
    if dist.total <= 0:
        raise ValueError("cannot plan upsampling for an empty dataset")
    current = dist.as_dict()
    top = max(current.values())
    if target is None:
        target = top
    elif target < top:
        raise ValueError(
            f"target {target} is below the largest class count {top}")
    targets = {name: target for name in LABELS}
    deficit = {name: target - current[name] for name in LABELS}
    return BalancePlan(current=current, target=targets, deficit=deficit)


@dataclass(frozen=True)
class GenerationConfig:
    mask_rate: float = 0.15
    top_k: int = 5
    max_length: int = 64
    seed: int = 42

    def __post_init__(self):
        # rate 0 is allowed as an explicit identity path
        if not 0.0 <= self.mask_rate <= 1.0:
            raise ValueError(f"mask_rate must be in [0, 1], got {self.mask_rate}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")


@dataclass(frozen=True)
class SyntheticExample:
    text: str
    label: str
    source_id: int
    changed_positions: tuple
    degenerate: bool = False

    @property
    def is_duplicate(self) -> bool:
        return len(self.changed_positions) == 0

    def to_labeled(self) -> LabeledExample:
        return LabeledExample(text=self.text, label=self.label, source="synthetic")


def fill_mask_generate(example: LabeledExample, params: EncoderParams,
                       vocab: Vocab, config: GenerationConfig, seed: int,
                       source_id: int = 0) -> SyntheticExample:
    """One synthetic variant of `example` via masked-token resampling.

    An example with no maskable token comes back as an unmodified copy
    flagged degenerate. When the seeded masking selects zero positions the
    copy is unmodified but not degenerate (an exact duplicate, flagged via
    `is_duplicate`).
    """
    tokens = tokenize(example.text)
    batch = encode_texts([example.text], vocab, config.max_length)
    masked, positions, _targets = mask_tokens(batch, config.mask_rate, seed)
    # positions past truncation cannot be edited in token space
    limit = 1 + len(tokens)  # [cls] is position 0
    positions = [(b, p) for b, p in positions if 1 <= p < limit
                 and batch.token_ids[b, p] != SEP]

    maskable = int(batch.attention_mask[0].sum()) - 2  # minus cls and sep
    if maskable <= 0:
        return SyntheticExample(example.text, example.label, source_id, (),
                                degenerate=True)
    if not positions:
        return SyntheticExample(example.text, example.label, source_id, ())

    with T.no_grad():
        hidden, _ = encode(masked, params, mode="eval", seed=0)
        logits = mlm_logits(hidden, params).data[0]   # [L, V]

    rng = np.random.default_rng(derive_seed(seed, "fill"))
    new_tokens = list(tokens)
    changed = []
    for _, pos in positions:
        original_id = batch.token_ids[0, pos]
        row = logits[pos].astype(np.float64).copy()
        row[:N_RESERVED] = -np.inf
        if config.top_k > 1:
            row[original_id] = -np.inf
        k = min(config.top_k, int(np.isfinite(row).sum()))
        if k < 1:
            continue
        top = np.argpartition(-row, k - 1)[:k]
        top = top[np.argsort(-row[top], kind="stable")]
        weights = np.exp(row[top] - row[top].max())
        choice = int(rng.choice(top, p=weights / weights.sum()))
        if choice != original_id:
            new_tokens[pos - 1] = vocab.itos[choice]
            changed.append(pos - 1)
    if not changed:
        return SyntheticExample(example.text, example.label, source_id, ())
    return SyntheticExample(" ".join(new_tokens), example.label, source_id,
                            tuple(changed))


def upsample(dataset: Sequence[LabeledExample], plan: BalancePlan,
             params: EncoderParams, vocab: Vocab,
             config: GenerationConfig) -> List[LabeledExample]:
    """Append exactly deficit-many synthetic examples per class.

    Source examples are drawn round-robin from the class, in dataset order;
    generation is seeded, so two runs with the same seed produce identical
    synthetic texts. Originals are never mutated or removed.
    """
    dist = class_distribution(dataset).as_dict()
    if dist != plan.current:
        raise ValueError(
            f"plan was computed for distribution {plan.current}, dataset has {dist}")
    by_class = {name: [e for e in dataset if e.label == name] for name in LABELS}
    out = list(dataset)
    for name in LABELS:
        deficit = plan.deficit[name]
        if deficit == 0:
            continue
        sources = by_class[name]
        if not sources:
            raise ValueError(f"class {name!r} needs {deficit} synthetic examples "
                             f"but has no source examples")
        if deficit / plan.target[name] > 0.5:
            logger.warning(
                "class %s will be more than 50%% synthetic (%d of %d); "
                "expect overfitting on this slice", name, deficit, plan.target[name])
        for i in range(deficit):
            src_idx = i % len(sources)
            synth = fill_mask_generate(
                sources[src_idx], params, vocab, config,
                seed=derive_seed(config.seed, "upsample", name, i),
                source_id=src_idx)
            out.append(synth.to_labeled())
    return out

"""Optimization engine and orchestration.

AdamW with decoupled weight decay, the contrastive (+ auxiliary MLM)
pretraining loop, the supervised fine-tuning loop with best-dev-epoch
selection, and bit-exact binary checkpointing.

Determinism contract: for a fixed (seed, data, config, build) every run
produces bit-identical parameters, losses, and reports. All randomness is
drawn from seeds derived with `seeding.derive_seed`.
"""

from __future__ import annotations

import dataclasses
import hashlib
import struct
import typing
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from . import _kernels
from . import tensor as T
from .data import LabeledExample, Vocab, encode_batch, encode_texts
from .encoder import (EncoderConfig, EncoderParams, encode, init_encoder_params,
                      mask_tokens, mlm_logits)
from .evaluator import EvalReport, evaluate
from .heads import HeadConfig, HeadParams, head_forward, init_head_params, predict
from .losses import (LossConfig, alignment_uniformity, classification_loss,
                     masked_token_loss, sup_contrastive_loss,
                     unsup_contrastive_loss)
from .seeding import derive_seed

CHECKPOINT_MAGIC = b"TRISENT\x00"
CHECKPOINT_VERSION = 1

OBJECTIVES = ("unsup_cse", "sup_cse", "none")


class TrainingDiverged(RuntimeError):
    """Raised when the training loss goes non-finite."""


class CheckpointError(RuntimeError):
    """Raised on unreadable, truncated, or mismatched checkpoint files."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 4
    learning_rate: float = 1e-5      # fine-tuning default; pretraining uses 1e-3
    weight_decay: float = 0.01
    max_length: int = 64
    seed: int = 42
    objective: str = "none"          # pretraining: unsup_cse | sup_cse | none
    mlm_weight: float = 1.0
    mlm_mask_rate: float = 0.15
    freeze_encoder: bool = False
    loss: LossConfig = field(default_factory=LossConfig)
    head: HeadConfig = field(default_factory=HeadConfig)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if not 0.0 <= self.mlm_mask_rate <= 1.0:
            raise ValueError(f"mlm_mask_rate must be in [0, 1], got {self.mlm_mask_rate}")
        if self.mlm_weight < 0:
            raise ValueError(f"mlm_weight must be >= 0, got {self.mlm_weight}")


# ---------------------------------------------------------------------------
# AdamW


@dataclass
class AdamWState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    moments: dict = field(default_factory=dict)   # name -> (m, v) float32 arrays


def adamw_step(params: dict, grads: dict, state: AdamWState, lr: float,
               weight_decay: float) -> None:
    """One AdamW step: bias-corrected Adam update plus decoupled decay.

    w <- w - lr * mhat / (sqrt(vhat) + eps) - lr * wd * w, applied in place.
    """
    state.step += 1
    for name, param in params.items():
        g = grads.get(name)
        if g is None:
            raise ValueError(f"missing gradient for parameter {name!r}")
        g = np.ascontiguousarray(g, dtype=np.float32)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        if name not in state.moments:
            state.moments[name] = (np.zeros(param.data.size, dtype=np.float32),
                                   np.zeros(param.data.size, dtype=np.float32))
        m, v = state.moments[name]
        _kernels.adamw_update(param.data.reshape(-1), g.reshape(-1), m, v,
                              state.step, lr, state.beta1, state.beta2,
                              state.eps, weight_decay)


def named_parameters(enc: EncoderParams,
                     head: Optional[HeadParams] = None) -> dict:
    out = {f"encoder.{k}": t for k, t in enc.tensors.items()}
    if head is not None:
        out.update({f"head.{k}": t for k, t in head.tensors.items()})
    return out


# ---------------------------------------------------------------------------
# model bundle


@dataclass
class Classifier:
    """Everything needed to run inference: weights, configs, vocabulary."""

    encoder_params: EncoderParams
    head_params: Optional[HeadParams]
    vocab: Vocab
    train_config: TrainConfig
    format_version: int = CHECKPOINT_VERSION

    @property
    def encoder_config(self) -> EncoderConfig:
        return self.encoder_params.config

    def copy(self) -> "Classifier":
        return Classifier(self.encoder_params.copy(),
                          self.head_params.copy() if self.head_params else None,
                          self.vocab, self.train_config, self.format_version)

    def config_text(self) -> str:
        return config_to_text(self.encoder_config, self.train_config,
                              kind="classifier" if self.head_params else "encoder")

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.config_text().encode("utf-8"))
        h.update(self.vocab.content_hash().encode("ascii"))
        for name, t in named_parameters(self.encoder_params, self.head_params).items():
            h.update(name.encode("utf-8"))
            h.update(t.data.astype("<f4").tobytes())
        return h.hexdigest()[:12]

    def logits(self, batch, seed: int = 0) -> T.Tensor:
        """Eval-mode logits for an encoded batch."""
        if self.head_params is None:
            raise ValueError("this checkpoint has no classification head")
        out = encode(batch, self.encoder_params, mode="eval", seed=seed)
        return head_forward(out, self.head_params, batch.attention_mask,
                            mode="eval", seed=seed)

    def predict_labels(self, examples: Sequence[LabeledExample],
                       max_length: int = 64, batch_size: int = 128) -> np.ndarray:
        preds = []
        with T.no_grad():
            for lo in range(0, len(examples), batch_size):
                batch = encode_batch(examples[lo:lo + batch_size], self.vocab, max_length)
                preds.append(predict(self.logits(batch)))
        return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


# ---------------------------------------------------------------------------
# training loops


def _batch_indices(n: int, batch_size: int, rng: np.random.Generator):
    """Seeded shuffle, then contiguous batches; a trailing singleton batch is
    dropped (it cannot be dropped if it is the only batch)."""
    order = rng.permutation(n)
    chunks = [order[lo:lo + batch_size] for lo in range(0, n, batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks.pop()
    return chunks


def _collect_grads(params: dict) -> dict:
    return {name: t.grad for name, t in params.items()}


def embedding_quality_probe(params: EncoderParams, texts: Sequence[str],
                            vocab: Vocab, max_length: int, seed: int,
                            sample: int = 64) -> Tuple[float, float]:
    """Alignment/uniformity of dropout-noised positive pairs on a text sample."""
    texts = list(texts)[:sample]
    batch = encode_texts(texts, vocab, max_length)
    with T.no_grad():
        _, pa = encode(batch, params, mode="train", seed=derive_seed(seed, "probe", 0))
        _, pb = encode(batch, params, mode="train", seed=derive_seed(seed, "probe", 1))
    a = pa.data / np.linalg.norm(pa.data, axis=1, keepdims=True)
    b = pb.data / np.linalg.norm(pb.data, axis=1, keepdims=True)
    return alignment_uniformity(list(zip(a, b)))


Triple = Tuple[str, str, str]


def pretrain(corpus: Sequence[Union[str, Triple]], vocab: Vocab,
             enc_config: EncoderConfig, cfg: TrainConfig
             ) -> Tuple[EncoderParams, List[dict]]:
    """Contrastive pretraining with an auxiliary MLM loss.

    unsup_cse expects plain sentences (each encoded twice with independent
    dropout noise); sup_cse expects (anchor, positive, hard_negative) string
    triples. objective "none" returns the initialization untouched. Returns
    (params, per-epoch history with train_loss/alignment/uniformity).
    """
    params = init_encoder_params(enc_config, cfg.seed)
    if cfg.objective == "none":
        return params, []
    if len(corpus) == 0:
        raise ValueError("empty pretraining corpus")
    supervised = cfg.objective == "sup_cse"
    if supervised:
        bad = [i for i, row in enumerate(corpus)
               if not (isinstance(row, (tuple, list)) and len(row) == 3)]
        if bad:
            raise ValueError(f"sup_cse corpus row {bad[0]} is not a triple")
    probe_texts = [row[0] if supervised else row for row in corpus[:64]]

    opt_params = named_parameters(params)
    if cfg.mlm_weight == 0:
        # the MLM projection is off the loss path and gets no gradient
        opt_params = {k: t for k, t in opt_params.items()
                      if not k.startswith("encoder.mlm.")}
    state = AdamWState()
    history: List[dict] = []
    n = len(corpus)
    temperature = cfg.loss.temperature
    for epoch in range(1, cfg.epochs + 1):
        rng = np.random.default_rng(derive_seed(cfg.seed, "pretrain-shuffle", epoch))
        losses = []
        for step, idx in enumerate(_batch_indices(n, cfg.batch_size, rng)):
            step_seed = derive_seed(cfg.seed, "pretrain", epoch, step)
            rows = [corpus[i] for i in idx]
            if supervised:
                enc_batches = [encode_texts([r[j] for r in rows], vocab, cfg.max_length)
                               for j in range(3)]
                pooled = [encode(b, params, "train", derive_seed(step_seed, "view", j))[1]
                          for j, b in enumerate(enc_batches)]
                loss = sup_contrastive_loss(*pooled, temperature=temperature)
                mlm_batch = enc_batches[0]
            else:
                batch = encode_texts(rows, vocab, cfg.max_length)
                _, pa = encode(batch, params, "train", derive_seed(step_seed, "view", 0))
                _, pb = encode(batch, params, "train", derive_seed(step_seed, "view", 1))
                loss = unsup_contrastive_loss(pa, pb, temperature=temperature)
                mlm_batch = batch
            had_targets = False
            if cfg.mlm_weight > 0:
                masked, positions, targets = mask_tokens(
                    mlm_batch, cfg.mlm_mask_rate, derive_seed(step_seed, "mask"))
                if len(targets):
                    had_targets = True
                    hm, _ = encode(masked, params, "train", derive_seed(step_seed, "mlm"))
                    mlm = masked_token_loss(mlm_logits(hm, params), positions, targets)
                    loss = T.add(loss, T.scale(mlm, cfg.mlm_weight))
            value = loss.item()
            if not np.isfinite(value):
                T.active_tape().reset()
                raise TrainingDiverged(
                    f"non-finite pretraining loss at epoch {epoch} step {step}")
            T.backward(loss)
            grads = _collect_grads(opt_params)
            if cfg.mlm_weight > 0 and not had_targets:
                # no token was masked this step; the MLM head saw no signal
                for k in ("encoder.mlm.w", "encoder.mlm.b"):
                    grads[k] = np.zeros_like(opt_params[k].data)
            adamw_step(opt_params, grads, state,
                       cfg.learning_rate, cfg.weight_decay)
            T.zero_grad(opt_params.values())
            losses.append(value)
        alignment, uniformity = embedding_quality_probe(
            params, probe_texts, vocab, cfg.max_length, cfg.seed)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                        "alignment": alignment, "uniformity": uniformity})
    return params, history


@dataclass
class FinetuneResult:
    classifier: Classifier
    dev_report: EvalReport
    history: List[dict]


def finetune(train: Sequence[LabeledExample], dev: Sequence[LabeledExample],
             encoder_init: EncoderParams, vocab: Vocab,
             cfg: TrainConfig) -> FinetuneResult:
    """Supervised fine-tuning; returns the epoch snapshot with best dev macro-F1.

    Gradients flow end to end into both encoder and head unless
    cfg.freeze_encoder is set.
    """
    if len(train) == 0 or len(dev) == 0:
        raise ValueError("finetune needs non-empty train and dev sets")
    enc = encoder_init.copy()
    head_cfg = dataclasses.replace(cfg.head, d_model=enc.config.d_model)
    head = init_head_params(head_cfg, cfg.seed)
    if cfg.freeze_encoder:
        for t in enc.tensors.values():
            t.requires_grad = False
        opt_params = {f"head.{k}": t for k, t in head.tensors.items()}
    else:
        # the MLM projection is not on the classification path
        opt_params = {k: t for k, t in named_parameters(enc, head).items()
                      if not k.startswith("encoder.mlm.")}
    state = AdamWState()

    best: Optional[Tuple[Classifier, EvalReport]] = None
    history: List[dict] = []
    n = len(train)
    for epoch in range(1, cfg.epochs + 1):
        rng = np.random.default_rng(derive_seed(cfg.seed, "finetune-shuffle", epoch))
        losses = []
        for step, idx in enumerate(_batch_indices(n, cfg.batch_size, rng)):
            batch = encode_batch([train[i] for i in idx], vocab, cfg.max_length)
            step_seed = derive_seed(cfg.seed, "finetune", epoch, step)
            out = encode(batch, enc, "train", derive_seed(step_seed, "enc"))
            logits = head_forward(out, head, batch.attention_mask, "train",
                                  derive_seed(step_seed, "head"))
            loss = classification_loss(cfg.loss, logits, batch.labels)
            value = loss.item()
            if not np.isfinite(value):
                T.active_tape().reset()
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} step {step} "
                    f"(lr={cfg.learning_rate}, batch={sorted(idx.tolist())})")
            T.backward(loss)
            adamw_step(opt_params, _collect_grads(opt_params), state,
                       cfg.learning_rate, cfg.weight_decay)
            T.zero_grad(opt_params.values())
            losses.append(value)
        snapshot = Classifier(enc.copy(), head.copy(), vocab, cfg)
        report = evaluate(snapshot, dev, max_length=cfg.max_length, dataset="dev")
        history.append({"epoch": epoch,
                        "train_loss": float(np.mean(losses)) if losses else 0.0,
                        "dev_macro_f1": report.macro_f1,
                        "dev_accuracy": report.accuracy})
        if best is None or report.macro_f1 > best[1].macro_f1:
            best = (snapshot, report)
    return FinetuneResult(best[0], best[1], history)


# ---------------------------------------------------------------------------
# config (de)serialization


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _flatten_config(prefix: str, obj, out: dict) -> None:
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        key = f"{prefix}.{f.name}"
        if dataclasses.is_dataclass(v):
            _flatten_config(key, v, out)
        else:
            out[key] = _format_value(v)


def config_to_text(enc_config: EncoderConfig, train_config: TrainConfig,
                   kind: str = "classifier") -> str:
    kv = {"kind": kind, "format_version": str(CHECKPOINT_VERSION)}
    _flatten_config("encoder", enc_config, kv)
    _flatten_config("train", train_config, kv)
    return "\n".join(f"{k}={kv[k]}" for k in sorted(kv)) + "\n"


def _convert_value(text: str, hint):
    origin = typing.get_origin(hint)
    if origin is typing.Union:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if text == "none":
            return None
        return _convert_value(text, args[0])
    if hint is bool:
        return text == "true"
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    return text


def _unflatten_config(cls, prefix: str, kv: dict):
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = f"{prefix}.{f.name}"
        hint = hints[f.name]
        if dataclasses.is_dataclass(hint):
            kwargs[f.name] = _unflatten_config(hint, key, kv)
        else:
            if key not in kv:
                raise CheckpointError(f"checkpoint config is missing {key!r}")
            kwargs[f.name] = _convert_value(kv[key], hint)
    return cls(**kwargs)


def config_from_text(text: str) -> Tuple[str, EncoderConfig, TrainConfig]:
    kv = {}
    for line in text.splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            kv[k] = v
    enc = _unflatten_config(EncoderConfig, "encoder", kv)
    train = _unflatten_config(TrainConfig, "train", kv)
    return kv.get("kind", "classifier"), enc, train


# ---------------------------------------------------------------------------
# checkpoint I/O (custom binary format, bit-exact round trips)


def _write_block(f, blob: bytes) -> None:
    f.write(struct.pack("<I", len(blob)))
    f.write(blob)


def _read_exact(f, n: int) -> bytes:
    blob = f.read(n)
    if len(blob) != n:
        raise CheckpointError("truncated checkpoint file")
    return blob


def _read_block(f) -> bytes:
    (n,) = struct.unpack("<I", _read_exact(f, 4))
    return _read_exact(f, n)


def save_checkpoint(clf: Classifier, path) -> None:
    """Header (version, canonical config text, vocab + hash) followed by the
    parameter arrays as little-endian float32 in declaration order."""
    params = named_parameters(clf.encoder_params, clf.head_params)
    vocab_blob = "\n".join(clf.vocab.itos).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        _write_block(f, clf.config_text().encode("utf-8"))
        _write_block(f, vocab_blob)
        f.write(hashlib.sha256(vocab_blob).digest())
        f.write(struct.pack("<I", len(params)))
        for name, t in params.items():
            name_b = name.encode("utf-8")
            f.write(struct.pack("<H", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<B", t.data.ndim))
            for dim in t.data.shape:
                f.write(struct.pack("<I", dim))
            blob = t.data.astype("<f4").tobytes()
            f.write(struct.pack("<Q", len(blob)))
            f.write(blob)


def load_checkpoint(path) -> Classifier:
    try:
        f = open(path, "rb")
    except OSError as e:
        raise CheckpointError(f"cannot open checkpoint {path}: {e}") from e
    with f:
        if _read_exact(f, len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not a trisent checkpoint")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"checkpoint format version {version}, this build reads "
                f"{CHECKPOINT_VERSION}")
        config_text = _read_block(f).decode("utf-8")
        vocab_blob = _read_block(f)
        stored_hash = _read_exact(f, 32)
        if hashlib.sha256(vocab_blob).digest() != stored_hash:
            raise CheckpointError(
                "vocab hash mismatch: checkpoint vocabulary does not match "
                "the hash it was saved with")
        (n_params,) = struct.unpack("<I", _read_exact(f, 4))
        raw = {}
        for _ in range(n_params):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2))
            name = _read_exact(f, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(f, 1))
            shape = tuple(struct.unpack("<I", _read_exact(f, 4))[0] for _ in range(ndim))
            (nbytes,) = struct.unpack("<Q", _read_exact(f, 8))
            data = np.frombuffer(_read_exact(f, nbytes), dtype="<f4").reshape(shape)
            raw[name] = data.copy()

    kind, enc_config, train_config = config_from_text(config_text)
    vocab = Vocab(vocab_blob.decode("utf-8").split("\n"))
    enc_tensors = {}
    head_tensors = {}
    for name, arr in raw.items():
        t = T.Tensor(arr, requires_grad=True)
        if name.startswith("encoder."):
            enc_tensors[name[len("encoder."):]] = t
        elif name.startswith("head."):
            head_tensors[name[len("head."):]] = t
        else:
            raise CheckpointError(f"unknown parameter group in {name!r}")
    enc = EncoderParams(enc_config, enc_tensors)
    head = None
    if kind == "classifier":
        if not head_tensors:
            raise CheckpointError("classifier checkpoint is missing head parameters")
        head_cfg = dataclasses.replace(train_config.head, d_model=enc_config.d_model)
        head = HeadParams(head_cfg, head_tensors)
    return Classifier(enc, head, vocab, train_config, format_version=version)

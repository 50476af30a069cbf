"""Command-line pipeline: pretrain, finetune, evaluate, upsample, report.

Option precedence is flags > config file > defaults; the config file is
line-oriented key=value with the same names as the long flags (underscores
for dashes). Every run echoes its effective configuration before executing,
and artifacts written with --out get the same lines as a .config.txt sidecar
(checkpoints embed the config instead). Seeds default to 42.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import (DataFormatError, LabeledExample, build_vocab,
                   class_distribution, load_dataset, save_jsonl)
from .encoder import EncoderConfig
from .evaluator import report_render, transfer_suite
from .heads import HeadConfig
from .losses import LossConfig
from .trainer import (CheckpointError, Classifier, TrainConfig,
                      TrainingDiverged, finetune, load_checkpoint, pretrain,
                      save_checkpoint)
from .upsampler import GenerationConfig, make_plan, upsample

logger = logging.getLogger(__name__)

_LOSS_NAMES = {"ce": "cross_entropy", "focal": "focal"}
_OBJECTIVES = {"unsup-cse": "unsup_cse", "sup-cse": "sup_cse"}

_ENCODER_DEFAULTS = {
    "d_model": 64, "n_layers": 2, "n_heads": 4, "d_ff": None,
    "dropout": 0.1, "pooling": "cls", "min_count": 1,
}
_TRAIN_DEFAULTS = {
    "batch_size": 32, "epochs": 4, "weight_decay": 0.01,
    "max_length": 64, "seed": 42,
}

_TYPES = {
    "d_model": int, "n_layers": int, "n_heads": int, "d_ff": int,
    "dropout": float, "pooling": str, "min_count": int,
    "batch_size": int, "epochs": int, "weight_decay": float,
    "max_length": int, "seed": int, "lr": float, "objective": str,
    "mlm_weight": float, "mlm_mask_rate": float, "temperature": float,
    "head": str, "loss": str, "gamma": float, "reduction": str,
    "freeze_encoder": bool, "mask_rate": float, "top_k": int, "target": int,
}


class CliError(ValueError):
    pass


def _coerce(key: str, value: str):
    typ = _TYPES.get(key, str)
    if typ is bool:
        if value not in ("true", "false"):
            raise CliError(f"config key {key} expects true/false, got {value!r}")
        return value == "true"
    if value == "none":
        return None
    return typ(value)


def _effective_config(defaults: dict, args: argparse.Namespace) -> dict:
    cfg = dict(defaults)
    path = getattr(args, "config", None)
    if path:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep:
                raise CliError(f"{path}:{lineno}: expected key=value")
            if key not in cfg:
                raise CliError(f"{path}:{lineno}: unknown config key {key!r}")
            cfg[key] = _coerce(key, value.strip())
    for key in cfg:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    return cfg


def _config_lines(cfg: dict) -> str:
    return "\n".join(f"{k}={'none' if cfg[k] is None else cfg[k]}"
                     for k in sorted(cfg)) + "\n"


def _echo_config(cfg: dict) -> None:
    print("effective-config:")
    print(_config_lines(cfg), end="")
    print()


def _write_sidecar(out_path, cfg: dict) -> None:
    Path(str(out_path) + ".config.txt").write_text(_config_lines(cfg))


def _detect_format(path, override: str = None) -> str:
    if override:
        return override
    return "star_csv" if str(path).endswith(".csv") else "jsonl"


def _load_examples(path, fmt: str = None) -> list:
    result = load_dataset(path, _detect_format(path, fmt))
    if result.skipped:
        print(f"note: skipped {result.skipped} malformed rows in {path}")
    return result.examples


def _read_unsup_corpus(path) -> list:
    lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    return [ln for ln in lines if ln]


def _read_triples(path) -> list:
    rows = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines()
            if ln.strip()]
    triples, bad = [], 0
    for ln in rows:
        try:
            obj = json.loads(ln)
            triples.append((str(obj["anchor"]), str(obj["entailment"]),
                            str(obj["contradiction"])))
        except (json.JSONDecodeError, KeyError, TypeError):
            bad += 1
    if not rows or bad > 0.10 * len(rows):
        raise DataFormatError(
            f"{path}: {bad}/{len(rows)} rows are not "
            f'{{"anchor", "entailment", "contradiction"}} objects; wrong format '
            f"for sup-cse?")
    if bad:
        print(f"note: rejected {bad} malformed triples in {path}")
    return triples


def _encoder_config(cfg: dict, vocab_size: int) -> EncoderConfig:
    return EncoderConfig(
        vocab_size=vocab_size, d_model=cfg["d_model"], n_layers=cfg["n_layers"],
        n_heads=cfg["n_heads"], d_ff=cfg["d_ff"], max_length=cfg["max_length"],
        dropout_p=cfg["dropout"], pooling=cfg["pooling"])


def _emit_log(history: list, log_path) -> None:
    lines = [json.dumps(entry) for entry in history]
    for line in lines:
        print(line)
    Path(log_path).write_text("\n".join(lines) + ("\n" if lines else ""))


# ---------------------------------------------------------------------------
# subcommands


def cmd_pretrain(args) -> int:
    defaults = dict(_ENCODER_DEFAULTS, **_TRAIN_DEFAULTS,
                    objective="unsup-cse", lr=1e-3, mlm_weight=1.0,
                    mlm_mask_rate=0.15, temperature=0.05)
    cfg = _effective_config(defaults, args)
    _echo_config(cfg)
    objective = _OBJECTIVES.get(cfg["objective"])
    if objective is None:
        raise CliError(f"--objective must be unsup-cse or sup-cse, got {cfg['objective']!r}")

    if objective == "sup_cse":
        corpus = _read_triples(args.corpus)
        texts = [t for row in corpus for t in row]
    else:
        corpus = _read_unsup_corpus(args.corpus)
        texts = list(corpus)
    if not corpus:
        raise CliError(f"{args.corpus}: empty pretraining corpus")
    vocab = build_vocab(texts, min_count=cfg["min_count"])
    enc_config = _encoder_config(cfg, len(vocab))
    train_config = TrainConfig(
        batch_size=cfg["batch_size"], epochs=cfg["epochs"],
        learning_rate=cfg["lr"], weight_decay=cfg["weight_decay"],
        max_length=cfg["max_length"], seed=cfg["seed"], objective=objective,
        mlm_weight=cfg["mlm_weight"], mlm_mask_rate=cfg["mlm_mask_rate"],
        loss=LossConfig(temperature=cfg["temperature"]))

    params, history = pretrain(corpus, vocab, enc_config, train_config)
    clf = Classifier(params, None, vocab, train_config)
    save_checkpoint(clf, args.out)
    _emit_log(history, str(args.out) + ".log.jsonl")
    print(f"wrote encoder checkpoint {args.out} (fingerprint {clf.fingerprint()})")
    return 0


def cmd_finetune(args) -> int:
    defaults = dict(_ENCODER_DEFAULTS, **_TRAIN_DEFAULTS, lr=1e-5, head="linear",
                    loss="ce", gamma=3.0, reduction="mean", temperature=0.05,
                    freeze_encoder=False)
    cfg = _effective_config(defaults, args)
    _echo_config(cfg)
    if cfg["loss"] not in _LOSS_NAMES:
        raise CliError(f"--loss must be ce or focal, got {cfg['loss']!r}")

    train = _load_examples(args.train, args.data_format)
    dev = _load_examples(args.dev, args.data_format)

    if args.init:
        base = load_checkpoint(args.init)
        vocab = base.vocab
        encoder_init = base.encoder_params
    else:
        vocab = build_vocab([e.text for e in train], min_count=cfg["min_count"])
        from .encoder import init_encoder_params
        enc_config = _encoder_config(cfg, len(vocab))
        encoder_init = init_encoder_params(enc_config, cfg["seed"])

    train_config = TrainConfig(
        batch_size=cfg["batch_size"], epochs=cfg["epochs"],
        learning_rate=cfg["lr"], weight_decay=cfg["weight_decay"],
        max_length=cfg["max_length"], seed=cfg["seed"],
        freeze_encoder=cfg["freeze_encoder"],
        loss=LossConfig(kind=_LOSS_NAMES[cfg["loss"]], gamma=cfg["gamma"],
                        reduction=cfg["reduction"], temperature=cfg["temperature"]),
        head=HeadConfig(kind=cfg["head"], d_model=encoder_init.config.d_model,
                        dropout_p=cfg["dropout"]))

    result = finetune(train, dev, encoder_init, vocab, train_config)
    save_checkpoint(result.classifier, args.out)
    _emit_log(result.history, str(args.out) + ".log.jsonl")
    report_path = str(args.out) + ".dev-report.json"
    Path(report_path).write_text(report_render([result.dev_report], "json") + "\n")
    print(f"best dev macro-F1 {result.dev_report.macro_f1:.4f} "
          f"(accuracy {result.dev_report.accuracy:.4f})")
    print(f"wrote classifier checkpoint {args.out} "
          f"(fingerprint {result.classifier.fingerprint()})")
    return 0


def cmd_evaluate(args) -> int:
    clf = load_checkpoint(args.checkpoint)
    cfg = _effective_config({"max_length": None, "seed": 42}, args)
    if cfg["max_length"] is None:
        # spec default is 64; smaller encoders cap it at their position table
        cfg["max_length"] = min(64, clf.encoder_config.max_length)
    _echo_config(cfg)
    datasets = [(Path(p).stem, _load_examples(p, args.data_format))
                for p in args.datasets]
    reports = transfer_suite(clf, datasets, max_length=cfg["max_length"])
    rendered = report_render(reports, args.render_format)
    if args.out:
        Path(args.out).write_text(rendered + "\n")
        _write_sidecar(args.out, cfg)
        print(f"wrote {len(reports)} reports to {args.out}")
    else:
        print(rendered)
    return 0


def cmd_upsample(args) -> int:
    clf = load_checkpoint(args.checkpoint)
    defaults = {"mask_rate": 0.15, "top_k": 5, "target": None,
                "seed": 42, "max_length": None}
    cfg = _effective_config(defaults, args)
    if cfg["max_length"] is None:
        cfg["max_length"] = min(64, clf.encoder_config.max_length)
    _echo_config(cfg)
    examples = _load_examples(args.dataset, args.data_format)
    dist = class_distribution(examples)
    plan = make_plan(dist, target=cfg["target"])
    gen = GenerationConfig(mask_rate=cfg["mask_rate"], top_k=cfg["top_k"],
                           max_length=cfg["max_length"], seed=cfg["seed"])
    augmented = upsample(examples, plan, clf.encoder_params, clf.vocab, gen)
    save_jsonl(augmented, args.out)
    _write_sidecar(args.out, cfg)
    print("plan:")
    for name in sorted(plan.current):
        frac = plan.deficit[name] / plan.target[name] if plan.target[name] else 0.0
        print(f"  {name}: {plan.current[name]} -> {plan.target[name]} "
              f"(+{plan.deficit[name]} synthetic, {frac:.1%} of class)")
    print(f"wrote {len(augmented)} examples to {args.out}")
    return 0


def cmd_report(args) -> int:
    from .evaluator import EvalReport, ConfusionMatrix
    reports = []
    for path in args.reports:
        for obj in json.loads(Path(path).read_text()):
            reports.append(EvalReport(
                dataset=obj["dataset"], model_fingerprint=obj["model_fingerprint"],
                accuracy=obj["accuracy"], macro_f1=obj["macro_f1"],
                per_class=obj["per_class"],
                confusion=ConfusionMatrix.from_array(obj["confusion"])))
    rendered = report_render(reports, args.render_format)
    if args.out:
        Path(args.out).write_text(rendered + "\n")
    else:
        print(rendered)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trisent",
        description="three-way sentiment classification pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("pretrain", help="contrastive pretraining of the encoder")
    common(p)
    p.add_argument("corpus", help="text file (one sentence per line) or "
                                  "jsonl triples for sup-cse")
    p.add_argument("--objective", choices=sorted(_OBJECTIVES))
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--max-length", dest="max_length", type=int)
    p.add_argument("--d-model", dest="d_model", type=int)
    p.add_argument("--n-layers", dest="n_layers", type=int)
    p.add_argument("--n-heads", dest="n_heads", type=int)
    p.add_argument("--d-ff", dest="d_ff", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--pooling", choices=("cls", "mean"))
    p.add_argument("--min-count", dest="min_count", type=int)
    p.add_argument("--mlm-weight", dest="mlm_weight", type=float)
    p.add_argument("--mlm-mask-rate", dest="mlm_mask_rate", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="supervised fine-tuning")
    common(p)
    p.add_argument("train", help="labeled train set (jsonl or star_csv)")
    p.add_argument("dev", help="labeled dev set")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--init", help="encoder checkpoint to start from")
    group.add_argument("--random-init", action="store_true")
    p.add_argument("--head", choices=("linear", "bigru", "bilstm"))
    p.add_argument("--loss", choices=("ce", "focal"))
    p.add_argument("--gamma", type=float)
    p.add_argument("--reduction", choices=("mean", "sum"))
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--max-length", dest="max_length", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--pooling", choices=("cls", "mean"))
    p.add_argument("--min-count", dest="min_count", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--d-model", dest="d_model", type=int)
    p.add_argument("--n-layers", dest="n_layers", type=int)
    p.add_argument("--n-heads", dest="n_heads", type=int)
    p.add_argument("--d-ff", dest="d_ff", type=int)
    p.add_argument("--freeze-encoder", dest="freeze_encoder",
                   action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--data-format", dest="data_format", choices=("jsonl", "star_csv"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on datasets")
    common(p)
    p.add_argument("checkpoint")
    p.add_argument("datasets", nargs="+")
    p.add_argument("--max-length", dest="max_length", type=int)
    p.add_argument("--data-format", dest="data_format", choices=("jsonl", "star_csv"))
    p.add_argument("--format", dest="render_format",
                   choices=("json", "markdown"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("upsample", help="fill-mask class rebalancing")
    common(p)
    p.add_argument("dataset")
    p.add_argument("--ckpt", dest="checkpoint", required=True,
                   help="checkpoint providing the masked-token model")
    p.add_argument("--mask-rate", dest="mask_rate", type=float)
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--target", type=int)
    p.add_argument("--max-length", dest="max_length", type=int)
    p.add_argument("--data-format", dest="data_format", choices=("jsonl", "star_csv"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_upsample)

    p = sub.add_parser("report", help="re-render saved report JSON")
    p.add_argument("reports", nargs="+")
    p.add_argument("--format", dest="render_format",
                   choices=("json", "markdown"), default="markdown")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (CliError, CheckpointError, DataFormatError, TrainingDiverged,
            ValueError, FloatingPointError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()

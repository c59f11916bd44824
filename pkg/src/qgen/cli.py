"""Command-line pipeline: preprocess -> train -> generate -> evaluate.

One flat key-value config document (JSON with dotted keys) drives every
subcommand; each key is mirrored 1:1 by a --dotted.flag override. Exit codes:
0 ok, 2 input/schema error, 3 I/O error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .evaluation import corpus_report
from .generation import GenerationConfig, generate_batch
from .model import ModelConfig, TransformerModel
from .preprocess import (
    ENTITY_TAGS,
    GazetteerTagger,
    PreprocessError,
    default_data_path,
    load_stopwords,
)
from .squad import (
    SchemaError,
    bucket_by_length,
    invert,
    load_examples,
    load_squad,
    save_examples,
)
from .training import NumericalError, TrainConfig, train
from .wordpiece import VocabularyError, load_vocabulary

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

DEFAULTS: dict[str, object] = {
    "paths.squad_json": "",
    "paths.vocab": "",
    "paths.gazetteer": "",
    "paths.stopwords": "",
    "paths.examples_cache": "examples_cache.jsonl",
    "paths.out_dir": "out",
    "paths.checkpoint_dir": "",
    "model.d_model": 128,
    "model.num_heads": 4,
    "model.enc_layers": 2,
    "model.dec_layers": 2,
    "model.d_ff": 512,
    "model.max_positions": 512,
    "model.dropout": 0.1,
    "model.share_embeddings": True,
    "data.max_input_ids": 512,
    "data.max_target_ids": 48,
    "data.buckets": "64:16,128:24,256:32,512:48",
    "train.total_steps": 1000,
    "train.base_lr": 1e-3,
    "train.warmup_steps": 400,
    "train.batch_size": 32,
    "train.checkpoint_interval": 500,
    "train.clip_norm": 1.0,
    "train.label_smoothing": 0.0,
    "train.weight_decay": 0.0,
    "generate.beam_width": 4,
    "generate.max_length": 48,
    "generate.length_alpha": 0.6,
    "seed": 0,
    "workers": 1,
}


def _parse_value(key: str, raw: str):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        kind = "an integer" if isinstance(default, int) else "a number"
        raise ValueError(f"{key}: expected {kind}, got {raw!r}") from None
    return raw


def load_config(config_path: str | None, overrides: list[tuple[str, str]]) -> dict:
    cfg = dict(DEFAULTS)
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            doc = json.load(fh)
        for key, value in doc.items():
            if key not in DEFAULTS:
                raise SchemaError(f"unknown config key {key!r} in {config_path}")
            cfg[key] = _parse_value(key, str(value))
    for key, raw in overrides:
        cfg[key] = _parse_value(key, raw)
    return cfg


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="JSON config document")
    for key, default in DEFAULTS.items():
        parser.add_argument(
            f"--{key}",
            dest=key.replace(".", "__"),
            default=None,
            metavar="V",
            help=f"override {key} (default {default!r})",
        )


def _collect_overrides(args: argparse.Namespace) -> list[tuple[str, str]]:
    overrides = []
    for key in DEFAULTS:
        value = getattr(args, key.replace(".", "__"), None)
        if value is not None:
            overrides.append((key, value))
    return overrides


def _resource_or_path(cfg: dict, key: str, packaged: str):
    value = cfg[key]
    if value:
        if not os.path.exists(value):
            raise FileNotFoundError(f"{key}: no such file: {value}")
        return value
    return default_data_path(packaged)


def _require_file(cfg: dict, key: str) -> str:
    value = cfg[key]
    if not value:
        raise FileNotFoundError(f"{key} is required but not set")
    if not os.path.exists(value):
        raise FileNotFoundError(f"{key}: no such file: {value}")
    return value


def _load_shared(cfg: dict):
    vocab = load_vocabulary(_resource_or_path(cfg, "paths.vocab", "vocab.txt"))
    tagger = GazetteerTagger.from_tsv(
        _resource_or_path(cfg, "paths.gazetteer", "gazetteer.tsv")
    )
    stoplist = load_stopwords(_resource_or_path(cfg, "paths.stopwords", "stopwords.txt"))
    return vocab, tagger, stoplist


def _parse_buckets(spec: str) -> list[tuple[int, int]]:
    bounds = []
    for part in spec.split(","):
        left, _, right = part.strip().partition(":")
        bounds.append((int(left), int(right)))
    return bounds


def _model_config(cfg: dict, vocab) -> ModelConfig:
    return ModelConfig(
        vocab_size=len(vocab),
        d_model=cfg["model.d_model"],
        num_heads=cfg["model.num_heads"],
        enc_layers=cfg["model.enc_layers"],
        dec_layers=cfg["model.dec_layers"],
        d_ff=cfg["model.d_ff"],
        max_positions=cfg["model.max_positions"],
        dropout=cfg["model.dropout"],
        pad_id=vocab.pad_id,
        bos_id=vocab.bos_id,
        eos_id=vocab.eos_id,
        share_embeddings=cfg["model.share_embeddings"],
    )


def _read_jsonl(path: str, required: tuple[str, ...]) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            for key in required:
                if key not in row:
                    raise SchemaError(f"{path}:{lineno}: missing field {key!r}")
            rows.append(row)
    return rows


def _write_jsonl(path: str, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def cmd_preprocess(cfg: dict) -> int:
    vocab, tagger, stoplist = _load_shared(cfg)
    squad_path = _require_file(cfg, "paths.squad_json")
    records = load_squad(squad_path)
    examples = invert(
        records, tagger, stoplist, vocab,
        max_input_ids=cfg["data.max_input_ids"],
        max_target_ids=cfg["data.max_target_ids"],
        workers=cfg["workers"],
    )
    cache_path = cfg["paths.examples_cache"]
    save_examples(examples, cache_path)
    tag_ids = {vocab.ids[t] for t in ENTITY_TAGS if t in vocab.ids}
    at_input_cap = sum(len(e.input_ids) >= cfg["data.max_input_ids"] for e in examples)
    at_target_cap = sum(len(e.target_ids) >= cfg["data.max_target_ids"] for e in examples)
    total = len(examples)
    summary = {
        "examples": total,
        "inputs_at_max_len": at_input_cap,
        "targets_at_max_len": at_target_cap,
        "input_truncation_rate": at_input_cap / total if total else 0.0,
        "target_truncation_rate": at_target_cap / total if total else 0.0,
        "entity_tag_coverage": (
            sum(bool(tag_ids.intersection(e.input_ids)) for e in examples) / total
            if total else 0.0
        ),
    }
    if not examples:
        print("warning: no questions found; cache is empty", file=sys.stderr)
    os.makedirs(cfg["paths.out_dir"], exist_ok=True)
    summary_path = os.path.join(cfg["paths.out_dir"], "preprocess_summary.json")
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    vocab, _, _ = _load_shared(cfg)
    cache_path = cfg["paths.examples_cache"]
    if not os.path.exists(cache_path):
        raise FileNotFoundError(f"paths.examples_cache: no such file: {cache_path}")
    examples = load_examples(cache_path)
    buckets = bucket_by_length(examples, _parse_buckets(cfg["data.buckets"]))
    model = TransformerModel(_model_config(cfg, vocab), seed=cfg["seed"])
    train_cfg = TrainConfig(
        total_steps=cfg["train.total_steps"],
        base_lr=cfg["train.base_lr"],
        warmup_steps=cfg["train.warmup_steps"],
        batch_size=cfg["train.batch_size"],
        checkpoint_interval=cfg["train.checkpoint_interval"],
        seed=cfg["seed"],
        clip_norm=cfg["train.clip_norm"],
        label_smoothing=cfg["train.label_smoothing"],
        weight_decay=cfg["train.weight_decay"],
    )
    state, ckpt_dir = train(model, buckets, train_cfg, cfg["paths.out_dir"])
    print(f"trained {state.step} steps; checkpoint at {ckpt_dir}")
    return EXIT_OK


def _checkpoint_dir(cfg: dict) -> str:
    ckpt = cfg["paths.checkpoint_dir"] or os.path.join(cfg["paths.out_dir"], "checkpoint")
    model_file = os.path.join(ckpt, "model.bin")
    if not os.path.exists(model_file):
        raise FileNotFoundError(f"checkpoint not found: {model_file}")
    return ckpt


def cmd_generate(cfg: dict, input_jsonl: str, output_jsonl: str) -> int:
    vocab, tagger, stoplist = _load_shared(cfg)
    ckpt = _checkpoint_dir(cfg)
    model = TransformerModel.load(os.path.join(ckpt, "model.bin"))
    if not os.path.exists(input_jsonl):
        raise FileNotFoundError(f"input file not found: {input_jsonl}")
    records = _read_jsonl(input_jsonl, required=("id", "passage", "answer"))
    gen_cfg = GenerationConfig(
        beam_width=cfg["generate.beam_width"],
        max_length=cfg["generate.max_length"],
        length_alpha=cfg["generate.length_alpha"],
    )
    rows = generate_batch(
        model, records, tagger, stoplist, vocab, gen_cfg, workers=cfg["workers"]
    )
    _write_jsonl(output_jsonl, rows)
    print(f"wrote {len(rows)} questions to {output_jsonl}")
    return EXIT_OK


def cmd_evaluate(cfg: dict, refs_path: str, hyps_path: str) -> int:
    for path in (refs_path, hyps_path):
        if not os.path.exists(path):
            raise FileNotFoundError(f"input file not found: {path}")
    refs = _read_jsonl(refs_path, required=("id",))
    hyps = _read_jsonl(hyps_path, required=("id",))

    def question_of(row: dict, path: str) -> str:
        for key in ("question", "question_tagged"):
            if key in row:
                return row[key]
        raise SchemaError(f"{path}: row {row.get('id')!r} has no question field")

    ref_map = {str(r["id"]): question_of(r, refs_path) for r in refs}
    hyp_map = {str(r["id"]): question_of(r, hyps_path) for r in hyps}
    unmatched = sorted(set(ref_map) ^ set(hyp_map))
    if unmatched:
        shown = ", ".join(unmatched[:10])
        raise SchemaError(
            f"{len(unmatched)} unmatched ids between {refs_path} and {hyps_path}: {shown}"
        )
    pairs = [(qid, ref_map[qid], hyp_map[qid]) for qid in sorted(ref_map)]
    report = corpus_report(pairs)
    out_dir = cfg["paths.out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    report.write_csv(os.path.join(out_dir, "report.csv"))
    text = report.to_text()
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qgen",
        description="Question generation pipeline: invert QA data, train a "
        "small transformer, decode with beam search, score with word-level "
        "edit distance.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="build the inverted example cache")
    _add_common_flags(p)

    p = sub.add_parser("train", help="train from the example cache")
    _add_common_flags(p)

    p = sub.add_parser("generate", help="decode questions for a JSONL of "
                       "{id, passage, answer}")
    _add_common_flags(p)
    p.add_argument("input_jsonl")
    p.add_argument("output_jsonl")

    p = sub.add_parser("evaluate", help="compare two JSONL question files by id")
    _add_common_flags(p)
    p.add_argument("refs_jsonl")
    p.add_argument("hyps_jsonl")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _collect_overrides(args))
        print(f"seed = {cfg['seed']}")
        if args.command == "preprocess":
            return cmd_preprocess(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "generate":
            return cmd_generate(cfg, args.input_jsonl, args.output_jsonl)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.refs_jsonl, args.hyps_jsonl)
        raise SystemExit(f"unknown command {args.command!r}")
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, PermissionError, IsADirectoryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SchemaError, VocabularyError, PreprocessError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

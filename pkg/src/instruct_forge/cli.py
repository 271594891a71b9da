"""Command-line surface: build-dataset, train, eval, ppl, generate.

Settings resolve in order: built-in default < config file < command-line
flag. The config file is plain text, one "section.key = value" per line.
All randomness funnels through --seed (env INSTRUCT_FORGE_SEED as fallback).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .evaluation import ChoiceTask, PerplexityItem, QuestionTemplate, corpus_perplexity, run_choice_eval
from .lora import LoraConfig, inject, load_adapters, trainable_param_count
from .model import DecoderModel, ModelConfig, load_checkpoint
from .prompts import PromptTemplate
from .records import (
    RecordError,
    convert_qa_pair,
    convert_typo_pair,
    dataset_stats,
    filter_by_category,
    load_records,
    save_records,
)
from .sampling import GenerationParams, generate
from .tokenizer import ByteTokenizer
from .training import TrainConfig, train


def load_config_file(path) -> dict:
    """Parse "section.key = value" lines; '#' starts a comment."""
    cfg = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}: line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


def _resolve(args, cfg: dict, flag: str, key: str, default, cast):
    value = getattr(args, flag, None)
    if value is not None:
        return value
    if key in cfg:
        return cast(cfg[key])
    return default


def _default_seed() -> int:
    return int(os.environ.get("INSTRUCT_FORGE_SEED", "0"))


def _echo_config(settings: dict):
    print("# effective-config")
    for key, value in settings.items():
        print(f"{key} = {value}")


def _load_model(args) -> DecoderModel:
    model = load_checkpoint(args.model)
    if getattr(args, "adapters", None):
        load_adapters(model, args.adapters)
    return model


# -- subcommands ----------------------------------------------------------------


def cmd_build_dataset(args, cfg) -> int:
    records = []
    inputs = []
    for spec in args.input or []:
        p = Path(spec)
        if p.is_dir():
            inputs.extend(sorted(p.glob("*.jsonl")))
        else:
            inputs.append(p)
    for path in inputs:
        recs, _ = load_records(path)
        records.extend(recs)
    if args.typo_pairs:
        for pair in _read_jsonl(args.typo_pairs):
            records.append(convert_typo_pair(pair["wrong"], pair["corrected"]))
    if args.qa_pairs:
        for pair in _read_jsonl(args.qa_pairs):
            records.append(convert_qa_pair(pair["question"], pair["answer"]))
    if not records:
        print("error: no records", file=sys.stderr)
        return 1
    excluded = set(filter(None, (args.exclude or "").split(",")))
    records = filter_by_category(records, excluded)
    if not records:
        print("error: no records left after filtering", file=sys.stderr)
        return 1
    save_records(records, args.output)
    manifest = dataset_stats(records)
    _echo_config({"build.exclude": ",".join(sorted(excluded)), "build.output": args.output})
    print(json.dumps(manifest.to_dict(), indent=2))
    return 0


def cmd_train(args, cfg) -> int:
    seed = _resolve(args, cfg, "seed", "seed", _default_seed(), int)
    model_cfg = ModelConfig(
        d_model=_resolve(args, cfg, "d_model", "model.d_model", 64, int),
        n_heads=_resolve(args, cfg, "n_heads", "model.n_heads", 4, int),
        n_layers=_resolve(args, cfg, "n_layers", "model.n_layers", 4, int),
        max_seq_len=_resolve(args, cfg, "max_seq_len", "model.max_seq_len", 512, int),
        attention_layout=_resolve(args, cfg, "layout", "model.layout", "split-qv", str),
        seed=seed,
    )
    train_cfg = TrainConfig(
        learning_rate=_resolve(args, cfg, "lr", "train.lr", 3e-4, float),
        batch_size=_resolve(args, cfg, "batch", "train.batch", 8, int),
        epochs=_resolve(args, cfg, "epochs", "train.epochs", 1, int),
        train_seq_len=_resolve(args, cfg, "seq_len", "train.seq_len", 256, int),
        mask_policy=_resolve(args, cfg, "mask_policy", "train.mask_policy", "response-only", str),
        seed=seed,
    )
    targets = _resolve(args, cfg, "targets", "lora.targets", "q_proj,v_proj", str)
    lora_cfg = LoraConfig(
        r=_resolve(args, cfg, "rank", "lora.rank", 4, int),
        alpha=_resolve(args, cfg, "alpha", "lora.alpha", 16.0, float),
        dropout=_resolve(args, cfg, "dropout", "lora.dropout", 0.05, float),
        target_names=[t.strip() for t in targets.split(",") if t.strip()],
    )
    if train_cfg.train_seq_len > model_cfg.max_seq_len:
        print("error: train seq_len exceeds model max_seq_len", file=sys.stderr)
        return 1

    records, manifest = load_records(args.data)
    if not records:
        print("error: no records", file=sys.stderr)
        return 1
    model = load_checkpoint(args.init_from) if args.init_from else DecoderModel(model_cfg)
    inject(model, lora_cfg)
    settings = {
        "seed": seed,
        **{f"model.{k}": v for k, v in model.config.to_dict().items()},
        **{f"train.{k}": v for k, v in dataclasses.asdict(train_cfg).items()},
        **{f"lora.{k}": v for k, v in lora_cfg.to_dict().items()},
        "data": args.data,
        "out": args.out,
        "trainable_params": trainable_param_count(model),
        "adapters": len(model.adapters),
    }
    _echo_config(settings)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = train(model, records, train_cfg, out_dir=out_dir)
    model.save_checkpoint(out_dir / "model.ifta")
    for entry in report:
        print(json.dumps(entry))
    return 0


def _load_tasks(path, version_override=None):
    tasks = []
    for obj in _read_jsonl(path):
        task = ChoiceTask(
            instruction=obj["instruction"],
            fields=obj["fields"],
            choices=tuple(obj["choices"]),
            gold=obj["gold"],
            version=version_override or obj.get("version", "v0.3"),
            constraints=obj.get("constraints"),
            answer_label=obj.get("answer_label", "Response"),
        )
        tasks.append(task)
    return tasks


def cmd_eval(args, cfg) -> int:
    model = _load_model(args)
    shots = [int(s) for s in (args.shots or "1,2,3").split(",")]
    tasks = _load_tasks(args.tasks, args.prompt_version)
    tuning_len = args.seq_len
    report = run_choice_eval(model, tasks, shots, tuning_seq_len=tuning_len)
    _echo_config({
        "eval.model": args.model, "eval.tasks": args.tasks,
        "eval.shots": ",".join(map(str, shots)),
        "eval.prompt_version": args.prompt_version or "per-task",
    })
    payload = report.to_dict()
    print(json.dumps(payload, indent=2))
    if args.report:
        Path(args.report).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return 0


def cmd_ppl(args, cfg) -> int:
    model = _load_model(args)
    items = [PerplexityItem(question=o["question"], response=o["response"])
             for o in _read_jsonl(args.items)]
    if not items:
        print("error: no items", file=sys.stderr)
        return 1
    template = QuestionTemplate(body=Path(args.template).read_text(encoding="utf-8")) \
        if args.template else QuestionTemplate()
    pooled, report = corpus_perplexity(model, items, template)
    _echo_config({"ppl.model": args.model, "ppl.items": args.items, "ppl.count": len(items)})
    payload = report.to_dict()
    print(json.dumps(payload, indent=2))
    if args.report:
        Path(args.report).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return 0


def cmd_generate(args, cfg) -> int:
    seed = _resolve(args, cfg, "seed", "seed", _default_seed(), int)
    model = _load_model(args)
    params = GenerationParams(
        temperature=args.temperature,
        repetition_penalty=args.repetition_penalty,
        max_new_tokens=args.max_new_tokens,
    )
    _echo_config({
        "generate.model": args.model, "generate.temperature": params.temperature,
        "generate.repetition_penalty": params.repetition_penalty,
        "generate.max_new_tokens": params.max_new_tokens, "seed": seed,
    })
    result = generate(model, args.prompt, params, seed=seed)
    print(result.text)
    if result.truncated:
        print("warning: context overflowed during generation; output truncated", file=sys.stderr)
    return 0


def _read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


# -- argument parsing --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="instruct-forge")
    parser.add_argument("--config", help="key = value config file; flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-dataset", help="ingest, convert, filter, and write a dataset")
    p.add_argument("--input", action="append", help="JSONL file or directory (repeatable)")
    p.add_argument("--typo-pairs", help="JSONL of {wrong, corrected} pairs")
    p.add_argument("--qa-pairs", help="JSONL of {question, answer} pairs")
    p.add_argument("--exclude", help="comma-separated categories to drop")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", help="LoRA-tune a model on an instruction dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init-from", help="base model checkpoint (default: fresh init)")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seq-len", type=int, dest="seq_len")
    p.add_argument("--mask-policy", dest="mask_policy", choices=("response-only", "full-sequence"))
    p.add_argument("--rank", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--targets")
    p.add_argument("--d-model", type=int, dest="d_model")
    p.add_argument("--n-heads", type=int, dest="n_heads")
    p.add_argument("--n-layers", type=int, dest="n_layers")
    p.add_argument("--max-seq-len", type=int, dest="max_seq_len")
    p.add_argument("--layout", choices=("fused-qkv", "split-qv"))
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="few-shot choice classification accuracy")
    p.add_argument("--model", required=True)
    p.add_argument("--adapters")
    p.add_argument("--tasks", required=True)
    p.add_argument("--shots", help="comma-separated, e.g. 1,2,3")
    p.add_argument("--prompt-version", dest="prompt_version", choices=("v0.2", "v0.3"))
    p.add_argument("--seq-len", type=int, dest="seq_len", help="tuning length for overflow counting")
    p.add_argument("--report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ppl", help="response-only perplexity over question/answer items")
    p.add_argument("--model", required=True)
    p.add_argument("--adapters")
    p.add_argument("--items", required=True)
    p.add_argument("--template", help="question template file with a {question} slot")
    p.add_argument("--report")
    p.set_defaults(func=cmd_ppl)

    p = sub.add_parser("generate", help="greedy/sampled generation from a prompt")
    p.add_argument("--model", required=True)
    p.add_argument("--adapters")
    p.add_argument("--prompt", required=True)
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--repetition-penalty", type=float, default=1.0, dest="repetition_penalty")
    p.add_argument("--max-new-tokens", type=int, default=64, dest="max_new_tokens")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = load_config_file(args.config) if args.config else {}
    try:
        return args.func(args, cfg)
    except (OSError, ValueError, RecordError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

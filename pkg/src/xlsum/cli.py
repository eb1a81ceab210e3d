"""Batch command-line surface for the whole pipeline.

Subcommands: datagen, build-corpus, train-xsim, train-teacher, pretrain,
rl-finetune, evaluate, generate. Every artifact-producing command writes one
``<command>.manifest.json`` next to its outputs with the resolved config,
seeds, and content hashes of inputs and outputs. All randomness is surfaced
as explicit ``--seed`` flags; outputs are written atomically, so re-running
with identical inputs and seeds overwrites data files with identical bytes
(manifests differ only in their timestamps).

Exit code 0 means all outputs and the manifest were written; otherwise a
single machine-parseable ``error: <tag>: <detail>`` line goes to stderr.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from datetime import datetime, timezone


from . import data as dp
from . import training as tr
from .data import Tokenizer, insert_separators
from .metrics import WORD
from .model import ModelConfig, XlsModel
from .serialize import dump_json, write_text_atomic
from .similarity import SimilarityConfig, SimilarityModel, train_similarity
from .training import ExtractiveTeacher, Recipe, RlConfig, TrainConfig

ENV_OUT_DIR = "XLSUM_OUT_DIR"


class CliError(Exception):
    def __init__(self, tag: str, message: str):
        super().__init__(message)
        self.tag = tag


def _require_file(path: str) -> str:
    if not os.path.isfile(path):
        raise CliError("missing-artifact", path)
    return path


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _out_dir(args) -> str:
    out = args.out or os.environ.get(ENV_OUT_DIR) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write_manifest(
    out_dir: str,
    command: str,
    config: dict,
    seeds: list[int],
    inputs: list[str],
    outputs: list[str],
    started: str,
    result: dict | None = None,
) -> str:
    manifest = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "inputs": {os.path.abspath(p): _sha256(p) for p in inputs},
        "outputs": {os.path.abspath(p): _sha256(p) for p in outputs},
        "started_at": started,
        "finished_at": datetime.now(timezone.utc).isoformat(),
    }
    if result is not None:
        manifest["result"] = result
    path = os.path.join(out_dir, f"{command}.manifest.json")
    write_text_atomic(path, dump_json(manifest))
    return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_trace_csv(path: str, rows) -> None:
    lines = ["step,objective,value\n"]
    lines += [f"{step},{objective},{value!r}\n" for step, objective, value in rows]
    write_text_atomic(path, "".join(lines))


def _load_json_config(path: str | None) -> dict:
    if path is None:
        return {}
    _require_file(path)
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise CliError("bad-argument", f"config file must hold a JSON object: {path}")
    return obj


def _build_config(cls, file_values: dict, overrides: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(file_values) - names
    if unknown:
        raise CliError("bad-argument", f"unknown {cls.__name__} keys: {sorted(unknown)}")
    merged = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**merged)
    except (TypeError, ValueError) as exc:
        raise CliError("bad-argument", str(exc))


# ---------------------------------------------------------------------------
# subcommands


def cmd_datagen(args) -> None:
    started = _now()
    out = _out_dir(args)
    spec = dp.SyntheticSpec(seed=args.seed, vocab_size=args.vocab_size, mt_noise_rate=args.noise)
    examples, parallel = dp.generate_synthetic(spec, args.n)
    examples_path = os.path.join(out, "examples.jsonl")
    parallel_path = os.path.join(out, "parallel_mt.jsonl")
    lexicon_path = os.path.join(out, "lexicon.json")
    dp.write_examples(examples_path, examples)
    dp.write_parallel(parallel_path, parallel)
    write_text_atomic(
        lexicon_path,
        dump_json(
            {
                "lexicon": spec.resolve_lexicon(),
                "seed": spec.seed,
                "vocab_size": spec.vocab_size,
                "mt_noise_rate": spec.mt_noise_rate,
            }
        ),
    )
    config = {"seed": args.seed, "n": args.n, "noise": args.noise, "vocab_size": args.vocab_size}
    _write_manifest(
        out, "datagen", config, [args.seed], [], [examples_path, parallel_path, lexicon_path], started
    )


def _load_lexicon(path: str) -> tuple[dict[str, str], float]:
    with open(_require_file(path), encoding="utf-8") as fh:
        blob = json.load(fh)
    return blob["lexicon"], blob.get("mt_noise_rate", 0.1)


def cmd_build_corpus(args) -> None:
    started = _now()
    out = _out_dir(args)
    examples = dp.read_examples(_require_file(args.input))
    lexicon_path = args.lexicon or os.path.join(os.path.dirname(os.path.abspath(args.input)), "lexicon.json")
    lexicon, default_noise = _load_lexicon(lexicon_path)
    noise = default_noise if args.noise is None else args.noise
    teacher = None
    if args.teacher is not None:
        teacher = ExtractiveTeacher.load(_require_file(args.teacher))
    if args.mode == "sentence" and teacher is None:
        raise CliError("prerequisite", "sentence-mode labels need --teacher")
    if args.extract_top_k is not None and teacher is None:
        raise CliError("prerequisite", "--extract-top-k needs --teacher")

    if args.extract_top_k is not None:
        examples = [
            dataclasses.replace(ex, article_src=dp.hard_extract_top_k(ex, teacher, args.extract_top_k))
            for ex in examples
        ]
    translator = dp.ToyTranslator(lexicon, noise_rate=noise, seed=args.seed)
    kept, report = dp.build_pseudo_corpus(examples, translator, tau=args.tau)
    if args.mode != "none":
        for ex in kept:
            ex.salience = dp.make_salience_labels(ex, args.mode, teacher=teacher)
            ex.unit_mode = args.mode
    corpus_path = os.path.join(out, "corpus.jsonl")
    dp.write_examples(corpus_path, kept)
    inputs = [args.input, lexicon_path] + ([args.teacher] if args.teacher else [])
    config = {
        "tau": args.tau,
        "noise": noise,
        "seed": args.seed,
        "mode": args.mode,
        "extract_top_k": args.extract_top_k,
    }
    _write_manifest(
        out, "build-corpus", config, [args.seed], inputs, [corpus_path], started,
        result={"kept": report.kept, "dropped": report.dropped},
    )


def cmd_train_xsim(args) -> None:
    started = _now()
    out = _out_dir(args)
    pairs = dp.read_parallel(_require_file(args.parallel))
    config = SimilarityConfig(
        dim=args.dim, margin=args.margin, batch_size=args.batch_size, epochs=args.epochs, lr=args.lr, seed=args.seed
    )
    try:
        model, trace = train_similarity(pairs, config)
    except ValueError as exc:
        raise CliError("invalid-input", str(exc))
    model_path = os.path.join(out, "xsim.model")
    trace_path = os.path.join(out, "xsim_loss.csv")
    model.save(model_path)
    _write_trace_csv(trace_path, [(i, "margin", v) for i, v in enumerate(trace)])
    _write_manifest(
        out, "train-xsim", dataclasses.asdict(config), [args.seed], [args.parallel], [model_path, trace_path], started
    )


def _model_config_from_args(args, src_size: int, tgt_size: int) -> ModelConfig:
    try:
        return ModelConfig(
            src_vocab_size=src_size,
            tgt_vocab_size=tgt_size,
            d_model=args.d_model,
            n_heads=args.n_heads,
            ffn_dim=args.ffn_dim,
            n_encoder_layers=args.enc_layers,
            n_decoder_layers=args.dec_layers,
            n_shared_decoder_layers=args.shared_layers,
            max_src_len=args.max_src_len,
            max_tgt_len=args.max_tgt_len,
            dropout_rate=args.dropout,
        )
    except ValueError as exc:
        raise CliError("bad-argument", str(exc))


def cmd_train_teacher(args) -> None:
    started = _now()
    out = _out_dir(args)
    examples = dp.read_examples(_require_file(args.corpus))
    tokenizer = Tokenizer.from_texts(insert_separators(ex.article_src)[0] for ex in examples)
    model_config = _model_config_from_args(args, tokenizer.size, tokenizer.size)
    config = tr.TeacherConfig(epochs=args.epochs, lr=args.lr, seed=args.seed, batch_size=args.batch_size)
    try:
        teacher, trace = tr.train_extractive_teacher(examples, model_config, config, tokenizer=tokenizer)
    except ValueError as exc:
        raise CliError("invalid-input", str(exc))
    teacher_path = os.path.join(out, "teacher.ckpt")
    trace_path = os.path.join(out, "teacher_loss.csv")
    teacher.save(teacher_path)
    _write_trace_csv(trace_path, [(i, "bce", v) for i, v in enumerate(trace)])
    _write_manifest(
        out, "train-teacher", dataclasses.asdict(config), [args.seed], [args.corpus], [teacher_path, trace_path], started
    )


def _parse_recipe(name: str) -> Recipe:
    try:
        return Recipe(name)
    except ValueError:
        raise CliError("bad-argument", f"unknown recipe {name!r}; choose from {[r.value for r in Recipe]}")


def cmd_pretrain(args) -> None:
    started = _now()
    out = _out_dir(args)
    recipe = _parse_recipe(args.recipe)
    if recipe.is_rl:
        raise CliError("bad-argument", f"{recipe.value} is an RL recipe; use rl-finetune")
    examples = dp.read_examples(_require_file(args.corpus))
    inputs = [args.corpus]
    mt_pairs: list[tuple[str, str]] = []
    if recipe.uses_mt:
        if args.mt is None:
            raise CliError("prerequisite", f"recipe {recipe.value} needs --mt parallel corpus")
        mt_pairs = dp.read_parallel(_require_file(args.mt))
        inputs.append(args.mt)

    overrides = {
        "lambda_distill": args.lambda_distill,
        "lr": args.lr,
        "batch_size_xls": args.batch_size,
        "batch_size_mt": args.batch_size_mt,
        "epochs": args.epochs,
        "seed": args.seed,
        "distill_variant": args.distill_variant,
    }
    config = _build_config(TrainConfig, _load_json_config(args.config), overrides)
    if args.config:
        inputs.append(args.config)

    src_tok = Tokenizer.from_texts(insert_separators(ex.article_src)[0] for ex in examples)
    tgt_texts = [ex.pseudo_summary_tgt or "" for ex in examples] + [t for _, t in mt_pairs]
    tgt_tok = Tokenizer.from_texts(tgt_texts)
    model = XlsModel(_model_config_from_args(args, src_tok.size, tgt_tok.size), seed=config.seed)
    try:
        result = tr.pretrain(model, examples, mt_pairs, config, recipe, src_tok, tgt_tok)
    except ValueError as exc:
        raise CliError("invalid-input", str(exc))

    ckpt_path = os.path.join(out, "model.ckpt")
    trace_path = os.path.join(out, "pretrain_trace.csv")
    model.save(
        ckpt_path,
        extras={
            "src_vocab": src_tok.vocab,
            "tgt_vocab": tgt_tok.vocab,
            "tokenizer_mode": src_tok.mode,
            "recipe": recipe.value,
        },
    )
    _write_trace_csv(trace_path, result.trace)
    _write_manifest(
        out, "pretrain", {**dataclasses.asdict(config), "recipe": recipe.value},
        [config.seed], inputs, [ckpt_path, trace_path], started,
        result={"steps": result.steps},
    )


def _load_checkpoint(path: str) -> tuple[XlsModel, Tokenizer, Tokenizer, dict]:
    model, extras = XlsModel.load(_require_file(path))
    mode = extras.get("tokenizer_mode", "word")
    src_tok = Tokenizer(extras["src_vocab"], mode)
    tgt_tok = Tokenizer(extras["tgt_vocab"], mode)
    return model, src_tok, tgt_tok, extras


def cmd_rl_finetune(args) -> None:
    started = _now()
    out = _out_dir(args)
    recipe = _parse_recipe(args.recipe)
    if not recipe.is_rl:
        raise CliError("bad-argument", f"{recipe.value} is a pre-training recipe; use pretrain")
    model, src_tok, tgt_tok, extras = _load_checkpoint(args.checkpoint)
    examples = dp.read_examples(_require_file(args.corpus))
    inputs = [args.checkpoint, args.corpus]

    overrides = {
        "gamma": args.gamma,
        "seed": args.seed,
        "max_decode_len": args.max_decode_len,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "lr": args.lr,
        "reward_kind": recipe.reward_kind,
    }
    config = _build_config(RlConfig, _load_json_config(args.config), overrides)
    if args.config:
        inputs.append(args.config)

    xsim_model = None
    if config.reward_kind in (tr.REWARD_XSIM, tr.REWARD_MEAN):
        if args.xsim_model is None:
            raise CliError("prerequisite", f"recipe {recipe.value} needs --xsim-model")
        xsim_model = SimilarityModel.load(_require_file(args.xsim_model))
        inputs.append(args.xsim_model)

    try:
        result = tr.rl_finetune(model, examples, config, src_tok, tgt_tok, xsim_model=xsim_model)
    except ValueError as exc:
        raise CliError("invalid-input", str(exc))

    ckpt_path = os.path.join(out, "model_rl.ckpt")
    trace_path = os.path.join(out, "reward_trace.csv")
    model.save(ckpt_path, extras={**extras, "recipe": recipe.value})
    rows = result.trace + [(i, "epoch_greedy_reward", v) for i, v in enumerate(result.epoch_greedy_reward)]
    _write_trace_csv(trace_path, rows)
    _write_manifest(
        out, "rl-finetune", {**dataclasses.asdict(config), "recipe": recipe.value},
        [config.seed], inputs, [ckpt_path, trace_path], started,
        result={"steps": result.steps, "epoch_greedy_reward": result.epoch_greedy_reward},
    )


def cmd_evaluate(args) -> None:
    started = _now()
    out = _out_dir(args)
    model, src_tok, tgt_tok, _ = _load_checkpoint(args.checkpoint)
    examples = dp.read_examples(_require_file(args.data))
    inputs = [args.checkpoint, args.data]
    xsim_model = None
    if args.xsim_model is not None:
        xsim_model = SimilarityModel.load(_require_file(args.xsim_model))
        inputs.append(args.xsim_model)
    try:
        result = tr.evaluate_model(
            model, examples, src_tok, tgt_tok, xsim_model=xsim_model, max_len=args.max_decode_len
        )
    except ValueError as exc:
        raise CliError("invalid-input", str(exc))

    row = result.summary_row()
    header = ["rouge1", "rouge2", "rougeL"] + (["xsim"] if "xsim" in row else [])
    table = [
        " ".join(f"{name:>8}" for name in header),
        " ".join(f"{row[name]:>8.2f}" for name in header),
        "",
        result.report.as_text(),
    ]
    report_txt = os.path.join(out, "report.txt")
    report_json = os.path.join(out, "report.json")
    buckets_csv = os.path.join(out, "length_buckets.csv")
    outputs_txt = os.path.join(out, "outputs.txt")
    write_text_atomic(report_txt, "\n".join(table))
    write_text_atomic(
        report_json,
        dump_json(
            {
                **{k: row[k] for k in header},
                "mean_generated_len": result.mean_generated_len,
                "mean_reference_len": result.mean_reference_len,
                "detail": result.report.as_dict(),
            }
        ),
    )
    bucket_lines = ["bucket,count,rouge1,rouge2,rougeL\n"] + [
        f"{b.label},{b.count},{100 * b.rouge1!r},{100 * b.rouge2!r},{100 * b.rouge_l!r}\n"
        for b in result.report.buckets
    ]
    write_text_atomic(buckets_csv, "".join(bucket_lines))
    write_text_atomic(outputs_txt, "".join(o + "\n" for o in result.outputs))
    _write_manifest(
        out, "evaluate", {"max_decode_len": args.max_decode_len}, [], inputs,
        [report_txt, report_json, buckets_csv, outputs_txt], started,
        result={k: row[k] for k in header},
    )


def cmd_generate(args) -> None:
    started = _now()
    out = _out_dir(args)
    model, src_tok, tgt_tok, _ = _load_checkpoint(args.checkpoint)
    examples = dp.read_examples(_require_file(args.input))
    lines = [
        tr.generate_summary(model, ex, src_tok, tgt_tok, max_len=args.max_decode_len) for ex in examples
    ]
    out_path = os.path.join(out, "summaries.txt")
    write_text_atomic(out_path, "".join(line + "\n" for line in lines))
    _write_manifest(
        out, "generate", {"max_decode_len": args.max_decode_len}, [], [args.checkpoint, args.input],
        [out_path], started,
    )


# ---------------------------------------------------------------------------
# parser


def _add_model_flags(sub):
    sub.add_argument("--d-model", type=int, default=64)
    sub.add_argument("--n-heads", type=int, default=2)
    sub.add_argument("--ffn-dim", type=int, default=128)
    sub.add_argument("--enc-layers", type=int, default=3)
    sub.add_argument("--dec-layers", type=int, default=3)
    sub.add_argument("--shared-layers", type=int, default=2)
    sub.add_argument("--max-src-len", type=int, default=256)
    sub.add_argument("--max-tgt-len", type=int, default=64)
    sub.add_argument("--dropout", type=float, default=0.1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xlsum", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("datagen", help="generate the synthetic bilingual corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--vocab-size", type=int, default=50)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_datagen)

    p = subs.add_parser("build-corpus", help="pseudo-parallel corpus with round-trip filtering")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--lexicon", default=None)
    p.add_argument("--tau", type=float, default=0.6)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=["keyword", "sentence", "none"], default="keyword")
    p.add_argument("--teacher", default=None)
    p.add_argument("--extract-top-k", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_build_corpus)

    p = subs.add_parser("train-xsim", help="train the bilingual similarity model")
    p.add_argument("--parallel", required=True)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--margin", type=float, default=0.4)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train_xsim)

    p = subs.add_parser("train-teacher", help="train the extractive teacher")
    p.add_argument("--corpus", required=True)
    p.add_argument("--epochs", type=int, default=6)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    _add_model_flags(p)
    p.set_defaults(func=cmd_train_teacher)

    p = subs.add_parser("pretrain", help="supervised multi-task pre-training")
    p.add_argument("--corpus", required=True)
    p.add_argument("--mt", default=None)
    p.add_argument("--recipe", default="MLE_XLS_MT_DIS")
    p.add_argument("--config", default=None, help="JSON file with TrainConfig keys")
    p.add_argument("--lambda", dest="lambda_distill", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--batch-size-mt", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--distill-variant", choices=[tr.DISTILL_SQUARED_LOG, tr.DISTILL_KL], default=None)
    p.add_argument("--out", default=None)
    _add_model_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = subs.add_parser("rl-finetune", help="self-critical RL fine-tuning")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--recipe", default="RL_XSIM")
    p.add_argument("--config", default=None, help="JSON file with RlConfig keys")
    p.add_argument("--xsim-model", default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--max-decode-len", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_rl_finetune)

    p = subs.add_parser("evaluate", help="score a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--xsim-model", default=None)
    p.add_argument("--max-decode-len", type=int, default=32)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = subs.add_parser("generate", help="one summary per input example")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--max-decode-len", type=int, default=32)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_generate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except CliError as exc:
        print(f"error: {exc.tag}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io-error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Subcommands: synth, train, eval, predict, gradcheck, sweep-b,
compare-heads. Every command that writes files also writes a manifest.json
(resolved config, seed, argv, versions) beside them, and all randomness
flows from the single --seed / config seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import finite_diff_check, forward_backward
from .checkpoint import load_checkpoint, save_checkpoint
from .docmodel import LabelSet, Vocabulary, load_funsd_json, doc_words
from .synth import SynthConfig, gen_dataset, write_dataset
from .trainer import (
    TrainConfig,
    TrainResult,
    _prepare,
    build_model,
    compare_heads,
    format_table,
    gradcheck_pipeline,
    history_csv,
    sweep_balance,
    sweep_positions,
    train,
)
from .util import stable_json

__all__ = ["run", "main"]


def _manifest(out_dir: Path, command: str, argv: list[str], config: dict, seed) -> None:
    payload = {
        "command": command,
        "argv": argv,
        "seed": seed,
        "config": config,
        "versions": {
            "hga": __version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
            "numpy": np.__version__,
        },
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(stable_json(payload), encoding="utf-8")


def _parse_pair(text: str) -> tuple[int, int]:
    lo, _, hi = text.partition(",")
    return (int(lo), int(hi))


def _parse_types(text: str) -> LabelSet:
    return LabelSet([t.strip() for t in text.split(",") if t.strip()])


def _load_train_config(args) -> TrainConfig:
    if args.config:
        cfg = TrainConfig.from_json_file(args.config)
    else:
        cfg = TrainConfig()
    overrides = {}
    for flag, key in (
        ("seed", "seed"),
        ("head", "head_kind"),
        ("balance_b", "balance_b"),
        ("threshold", "threshold"),
        ("lr", "lr"),
        ("batch_size", "batch_size"),
        ("max_steps", "max_steps"),
        ("eval_every", "eval_every"),
        ("max_seq_len", "max_seq_len"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "position_mode", None) is not None and "," not in args.position_mode:
        overrides["position_mode"] = args.position_mode
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _write_train_result(out: Path, name: str, result: TrainResult) -> None:
    (out / f"history_{name}.csv").write_text(history_csv(result.history), encoding="utf-8")
    meta = {
        "config": result.config.to_dict(),
        "labels": list(result.label_set),
        "best_step": result.best_step,
        "best_f1": result.best_f1,
    }
    save_checkpoint(out / f"best_{name}.ckpt", result.best_params, meta)
    vocab_path = out / "vocab.tsv"
    if not vocab_path.exists():
        result.vocab.save(vocab_path)


def _cmd_synth(args, argv) -> int:
    label_set = _parse_types(args.types)
    out = Path(args.out)
    total = args.n_docs + (args.n_test or 0)
    cfg = SynthConfig(
        seed=args.seed,
        n_docs=total,
        label_set=label_set,
        nodes_per_doc=_parse_pair(args.nodes_per_doc),
        tokens_per_node=_parse_pair(args.tokens_per_node),
        other_fraction=args.other_fraction,
        vocab_size_per_type=args.vocab_per_type,
    )
    docs = gen_dataset(cfg)
    if args.n_test:
        write_dataset(docs[:args.n_docs], out / "train")
        write_dataset(docs[args.n_docs:], out / "test")
    else:
        write_dataset(docs, out)
    cfg_dict = dataclasses.asdict(cfg)
    cfg_dict["label_set"] = list(label_set)
    _manifest(out, "synth", argv, cfg_dict, args.seed)
    print(f"wrote {total} documents to {out}")
    return 0


def _load_docs(path: str, label_set: LabelSet | None):
    return load_funsd_json(path, label_set)


def _cmd_train(args, argv) -> int:
    cfg = _load_train_config(args)
    out = Path(args.out)
    train_docs = _load_docs(args.data, None)
    dev_docs = _load_docs(args.dev, None) if args.dev else []
    modes = [m.strip() for m in args.position_mode.split(",")] if args.position_mode else None
    if modes and len(modes) > 1:
        results = sweep_positions(cfg, modes, train_docs, dev_docs)
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        for mode, result in results:
            _write_train_result(out, mode, result)
            rows.append((mode, result.best_f1))
        (out / "positions.tsv").write_text(format_table(("position_mode", "f1"), rows), encoding="utf-8")
        _manifest(out, "train", argv, cfg.to_dict() | {"position_modes": modes}, cfg.seed)
        for mode, result in results:
            print(f"position_mode={mode}\tbest_f1={result.best_f1!r}")
        return 0
    result = train(cfg, train_docs, dev_docs)
    out.mkdir(parents=True, exist_ok=True)
    (out / "history.csv").write_text(history_csv(result.history), encoding="utf-8")
    result.vocab.save(out / "vocab.tsv")
    meta = {
        "config": result.config.to_dict(),
        "labels": list(result.label_set),
        "best_step": result.best_step,
        "best_f1": result.best_f1,
    }
    save_checkpoint(out / "best.ckpt", result.best_params, meta)
    save_checkpoint(out / "last.ckpt", result.final_params, meta | {"snapshot": "last"})
    (out / "report.json").write_text(stable_json(result.best_report.to_dict()), encoding="utf-8")
    _manifest(out, "train", argv, result.config.to_dict(), cfg.seed)
    print(f"best dev f1 {result.best_f1!r} at step {result.best_step}; outputs in {out}")
    return 0


def _resolve_checkpoint(path_arg: str) -> Path:
    path = Path(path_arg)
    if path.is_file():
        return path
    with_ext = path.with_suffix(".ckpt")
    if with_ext.is_file():
        return with_ext
    raise FileNotFoundError(f"checkpoint not found: {path_arg}")


def _restore_model(args):
    ckpt_path = _resolve_checkpoint(args.checkpoint)
    values, meta = load_checkpoint(ckpt_path)
    cfg = TrainConfig.from_dict(meta["config"])
    label_set = LabelSet(meta["labels"])
    vocab_path = Path(args.vocab) if getattr(args, "vocab", None) else ckpt_path.parent / "vocab.tsv"
    vocab = Vocabulary.load(vocab_path)
    model = build_model(cfg, vocab, label_set)
    model.store.load(values)
    return model


def _cmd_eval(args, argv) -> int:
    model = _restore_model(args)
    docs = _load_docs(args.data, model.label_set)
    items = [_prepare(d, model) for d in docs]
    report = model.evaluate(items)
    text = stable_json(report.to_dict())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(text, encoding="utf-8")
        _manifest(out, "eval", argv, model.cfg.to_dict(), model.cfg.seed)
    print(f"precision={report.precision!r} recall={report.recall!r} f1={report.f1!r}")
    return 0


def _cmd_predict(args, argv) -> int:
    model = _restore_model(args)
    docs = _load_docs(args.data, model.label_set)
    out = Path(args.out)
    predictions = {}
    for doc in docs:
        item = _prepare(doc, model)
        words = [w for _, w in doc_words(doc)][:item.seq.num_real]
        predictions[doc.id] = [
            {
                "type": model.label_set.name(e.type_index),
                "start": e.start,
                "end": e.end,
                "text": " ".join(words[e.start:e.end + 1]),
            }
            for e in model.predict(item)
        ]
    out.mkdir(parents=True, exist_ok=True)
    (out / "predictions.json").write_text(stable_json(predictions), encoding="utf-8")
    _manifest(out, "predict", argv, model.cfg.to_dict(), model.cfg.seed)
    print(f"wrote predictions for {len(docs)} documents to {out}")
    return 0


def _cmd_gradcheck(args, argv) -> int:
    graph, params, inputs = gradcheck_pipeline(L=args.L, D=args.D, H=args.H, d=args.d,
                                               layers=args.layers, seed=args.seed)
    loss, _ = forward_backward(graph, params, inputs)
    report = finite_diff_check(graph, params, inputs, epsilon=args.epsilon)
    print(report.format())
    print(f"loss {loss!r}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.json").write_text(
            stable_json({"per_param": report.per_param, "max_rel_err": report.max_rel_err,
                         "epsilon": report.epsilon}), encoding="utf-8")
        _manifest(out, "gradcheck", argv,
                  {"L": args.L, "D": args.D, "H": args.H, "d": args.d, "layers": args.layers,
                   "epsilon": args.epsilon, "tol": args.tol}, args.seed)
    if report.max_rel_err < args.tol:
        print(f"gradient check passed (tol {args.tol:g})")
        return 0
    print(f"gradient check FAILED (tol {args.tol:g}): {report.flagged(args.tol)}", file=sys.stderr)
    return 1


def _cmd_sweep_b(args, argv) -> int:
    cfg = _load_train_config(args)
    values = [float(v) for v in args.values.split(",")]
    train_docs = _load_docs(args.data, None)
    dev_docs = _load_docs(args.dev, None) if args.dev else []
    results = sweep_balance(cfg, values, train_docs, dev_docs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for b, result in results:
        _write_train_result(out, f"b{b!r}", result)
        rows.append((b, result.best_f1))
    (out / "sweep_b.tsv").write_text(format_table(("b", "f1"), rows), encoding="utf-8")
    _manifest(out, "sweep-b", argv, cfg.to_dict() | {"values": values}, cfg.seed)
    for b, result in results:
        print(f"b={b!r}\tf1={result.best_f1!r}")
    return 0


def _cmd_compare_heads(args, argv) -> int:
    cfg = _load_train_config(args)
    train_docs = _load_docs(args.data, None)
    dev_docs = _load_docs(args.dev, None) if args.dev else []
    results = compare_heads(cfg, train_docs, dev_docs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for kind, result in results:
        _write_train_result(out, kind, result)
        report = result.best_report
        rows.append((kind, report.precision, report.recall, report.f1))
    (out / "compare_heads.tsv").write_text(
        format_table(("head", "precision", "recall", "f1"), rows), encoding="utf-8")
    _manifest(out, "compare-heads", argv, cfg.to_dict(), cfg.seed)
    for kind, result in results:
        print(f"head={kind}\tf1={result.best_f1!r}")
    return 0


def _add_train_flags(p: argparse.ArgumentParser, with_position: bool = True) -> None:
    p.add_argument("--config", help="TrainConfig JSON file")
    p.add_argument("--data", required=True, help="training documents (dir of FUNSD-style JSON)")
    p.add_argument("--dev", help="evaluation documents")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--head", choices=("hga", "linear", "mlp"))
    if with_position:
        p.add_argument("--position-mode", dest="position_mode",
                       help="none|token|span, or a comma list to train one arm per mode")
    p.add_argument("--balance-b", dest="balance_b", type=float)
    p.add_argument("--threshold", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--max-seq-len", dest="max_seq_len", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hga", description="Span-scoring semantic entity recognition experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-docs", dest="n_docs", type=int, required=True)
    p.add_argument("--n-test", dest="n_test", type=int, default=0,
                   help="also emit this many extra documents into <out>/test (train goes to <out>/train)")
    p.add_argument("--out", required=True)
    p.add_argument("--types", default="header,question,answer")
    p.add_argument("--nodes-per-doc", dest="nodes_per_doc", default="6,12")
    p.add_argument("--tokens-per-node", dest="tokens_per_node", default="1,4")
    p.add_argument("--other-fraction", dest="other_fraction", type=float, default=0.3)
    p.add_argument("--vocab-per-type", dest="vocab_per_type", type=int, default=20)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train one model (or one arm per position mode)")
    _add_train_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", help="vocabulary TSV (default: vocab.tsv beside the checkpoint)")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="decode entities for every document")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vocab")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full pipeline")
    p.add_argument("--L", type=int, default=12)
    p.add_argument("--D", type=int, default=3)
    p.add_argument("--H", type=int, default=16)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("sweep-b", help="train once per balance factor")
    _add_train_flags(p, with_position=True)
    p.add_argument("--values", default="0.0,0.2,0.4,0.6,0.8")
    p.set_defaults(func=_cmd_sweep_b)

    p = sub.add_parser("compare-heads", help="train linear, MLP, and hga heads on one dataset")
    _add_train_flags(p)
    p.set_defaults(func=_cmd_compare_heads)

    return parser


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, argv)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())

"""Command-line entry point: ``streamasr <subcommand> [--config PATH] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import numerics as nx
from .data import generate_synthetic_corpus, read_corpus, write_alignment_file, write_corpus
from .harness import (
    ExperimentConfig,
    compare,
    config_latency,
    decode_utterance,
    evaluate,
    format_table,
    load_checkpoint,
    loss_curve_tsv,
    make_corpora,
    model_input,
    train,
    trend_configs,
)
from .streaming import STREAMING_LATENCY_CONFIGS, latency_table


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _emit(text: str, out_dir: str | None, filename: str) -> None:
    if out_dir:
        path = Path(out_dir)
        path.mkdir(parents=True, exist_ok=True)
        (path / filename).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def _corpus(args, cfg: ExperimentConfig, split: str):
    if getattr(args, "corpus", None):
        return read_corpus(args.corpus, cfg.task.vocab)
    train_set, eval_set = make_corpora(cfg)
    return train_set if split == "train" else eval_set


def _model(args, cfg: ExperimentConfig):
    if not args.checkpoint:
        raise ValueError("--checkpoint is required")
    return load_checkpoint(args.checkpoint, expect=cfg if args.config else None)


def cmd_gen_corpus(args) -> None:
    cfg = _config(args)
    utts = generate_synthetic_corpus(cfg.task, args.n or cfg.n_utts)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(out / "corpus.bin", utts)
    write_alignment_file(out / "alignments.txt", utts)
    rows = [{"utterances": len(utts), "frames": sum(u.features.T for u in utts),
             "tokens": sum(len(u.tokens) for u in utts), "path": str(out / "corpus.bin")}]
    sys.stdout.write(format_table(rows, args.format))


def cmd_train(args) -> None:
    cfg = _config(args)
    res = train(cfg, _corpus(args, cfg, "train"), out_dir=args.out)
    if args.format == "json":
        sys.stdout.write(json.dumps({"steps": len(res.losses), "losses": res.losses,
                                     "cpu_seconds": res.seconds}, indent=2) + "\n")
    else:
        sys.stdout.write(loss_curve_tsv(res.losses))


def cmd_decode(args) -> None:
    cfg = _config(args)
    model, cfg = _model(args, cfg)
    vocab = cfg.task.vocab
    rows = []
    for u in _corpus(args, cfg, "eval"):
        hyp = decode_utterance(model, cfg, model_input(cfg, u))
        frames = hyp.trigger_frames or hyp.boundaries
        rows.append({"uid": u.uid, "hyp": vocab.detokenize(hyp.tokens), "score": hyp.score,
                     "trigger_frames": ",".join(map(str, frames)) if frames else "-"})
    _emit(format_table(rows, args.format, ["uid", "hyp", "score", "trigger_frames"]), args.out, f"decode.{args.format}")


def cmd_eval(args) -> None:
    cfg = _config(args)
    model, cfg = _model(args, cfg)
    res = evaluate(model, cfg, _corpus(args, cfg, "eval"))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "per_utterance.tsv").write_text(res.rows_tsv(), encoding="utf-8")
    _emit(format_table([res.summary()], args.format), args.out, f"summary.{args.format}")


def cmd_gradcheck(args) -> None:
    from .gradcheck import run_gradcheck_suite

    rows = run_gradcheck_suite(seed=args.seed or 0)
    _emit(format_table(rows, args.format), args.out, f"gradcheck.{args.format}")
    if not all(r["passed"] for r in rows):
        raise RuntimeError("gradient check failed for: " + ", ".join(r["name"] for r in rows if not r["passed"]))


def cmd_latency_report(args) -> None:
    specs = dict(STREAMING_LATENCY_CONFIGS)
    text = latency_table(specs, args.format)
    if args.config:
        cfg = _config(args)
        lat = config_latency(cfg)
        extra = {"architecture": cfg.name, "latency_ms": "full" if lat is None else str(lat.average_ms)}
        text += format_table([extra], args.format)
    _emit(text if text.endswith("\n") else text + "\n", args.out, f"latency.{args.format}")


def cmd_compare(args) -> None:
    base = _config(args)
    configs = [ExperimentConfig.load(p) for p in args.configs] if args.configs else trend_configs(base)
    seeds = list(range(args.seeds)) if args.seed is None else [args.seed + i for i in range(args.seeds)]
    rows = compare(configs, seeds)
    _emit(format_table(rows, args.format), args.out, f"compare.{args.format}")


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "train": cmd_train,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "latency-report": cmd_latency_report,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamasr", description="Streaming end-to-end ASR toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value experiment config")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--format", choices=("tsv", "json"), default="tsv")
        if name in ("decode", "eval"):
            p.add_argument("--checkpoint", help="checkpoint written by train")
        if name in ("train", "decode", "eval"):
            p.add_argument("--corpus", help="corpus file written by gen-corpus")
        if name == "gen-corpus":
            p.add_argument("--n", type=int, help="number of utterances (default: n_utts)")
        if name == "compare":
            p.add_argument("configs", nargs="*", help="config files (default: the built-in trend set)")
            p.add_argument("--seeds", type=int, default=3, help="number of seeds per config")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except (ValueError, RuntimeError, OSError, KeyError, nx.ShapeError) as exc:
        print(f"streamasr {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

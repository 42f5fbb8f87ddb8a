"""Command-line entry point: ``cdnpg {train,generate,eval,inspect,bench}``.

Failures exit non-zero with a single JSON line on stderr:
``{"error": "<kind>", "message": "..."}``.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import warnings
from pathlib import Path

from . import __version__

OUTPUT_ENV = "CDNPG_OUTPUT_DIR"
log = logging.getLogger("cdnpg")


class CLIError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def _vocab_digest(vocab) -> str:
    return hashlib.sha256("\n".join(vocab.itos).encode("utf-8")).hexdigest()[:16]


def _output_dir(flag: str | None, configured: str | None) -> Path:
    return Path(flag or os.environ.get(OUTPUT_ENV) or configured or "runs/cdnpg")


def _load_model_bundle(checkpoint: str, vocab_path: str | None):
    from .checkpoint import CheckpointError
    from .data import Vocabulary
    from .model import Transformer

    ckpt = Path(checkpoint)
    if not ckpt.is_file():
        raise CLIError("missing_file", f"checkpoint not found: {ckpt}")
    try:
        model, manifest = Transformer.load(ckpt)
    except (CheckpointError, ValueError) as exc:
        raise CLIError("bad_checkpoint", str(exc)) from None
    meta = manifest.get("meta", {})
    vpath = Path(vocab_path) if vocab_path else ckpt.with_name("vocab.txt")
    if not vpath.is_file():
        raise CLIError("missing_file", f"vocabulary not found: {vpath} (pass --vocab)")
    vocab = Vocabulary.load(vpath, wordpiece=bool(meta.get("wordpiece", False)))
    if len(vocab) != model.config.vocab_size:
        raise CLIError("vocab_mismatch",
                       f"vocabulary has {len(vocab)} entries but checkpoint expects {model.config.vocab_size}")
    if meta.get("vocab_digest") and meta["vocab_digest"] != _vocab_digest(vocab):
        raise CLIError("vocab_mismatch", f"vocabulary {vpath} is not the one this checkpoint was trained with")
    return model, vocab, manifest


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train(args) -> dict:
    from .config import ConfigError, RunConfig, load_config
    from .data import DatasetError, Vocabulary, build_vocab, load_dataset
    from .model import Transformer
    from .plotting import loss_curve
    from .training import Trainer

    overrides = dict(kv.split("=", 1) for kv in args.set or [])
    overrides = {k.strip(): v.strip() for k, v in overrides.items()}
    for key in ("train_path", "valid_path", "max_steps", "seed", "mask_mode"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = str(val)
    try:
        run = RunConfig.from_values(load_config(args.config, overrides))
    except ConfigError as exc:
        raise CLIError("config", str(exc)) from None
    if not run.data.train_path:
        raise CLIError("config", "no training data: set train_path in the config or pass --train-path")
    try:
        train_pairs, report = load_dataset(run.data.train_path, run.data.format)
        valid_pairs = load_dataset(run.data.valid_path, run.data.format)[0] if run.data.valid_path else []
    except DatasetError as exc:
        raise CLIError("dataset", str(exc)) from None
    if not train_pairs:
        raise CLIError("dataset", f"{run.data.train_path}: no usable pairs")
    if report.skipped:
        log.warning("skipped %d malformed training line(s)", report.skipped)

    wordpiece = False
    if run.data.wordpiece_vocab:
        vocab = Vocabulary.load_wordpiece(run.data.wordpiece_vocab)
        wordpiece = True
    elif run.data.vocab_path:
        vocab = Vocabulary.load(run.data.vocab_path)
    else:
        vocab = build_vocab([p.source_tokens + p.target_tokens for p in train_pairs],
                            run.data.vocab_max_size, run.data.min_freq)
    out_dir = _output_dir(args.output_dir, run.data.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab.save(out_dir / "vocab.txt")
    try:
        model_cfg = run.model_config(len(vocab))
    except ConfigError as exc:
        raise CLIError("config", str(exc)) from None
    model = Transformer(model_cfg, seed=run.data.model_seed)
    trainer = Trainer(model, train_pairs, vocab, run.train, valid_pairs, out_dir)
    trainer.extra_meta = {"vocab_digest": _vocab_digest(vocab), "wordpiece": wordpiece}
    if args.resume:
        trainer.resume(args.resume)
    if not args.quiet:
        trainer.on_log = lambda r: print(json.dumps(r), file=sys.stderr, flush=True)
    result = trainer.run()
    if result.history:
        loss_curve(result.history, out_dir / "loss.png")
    return {
        "output_dir": str(out_dir),
        "steps": result.steps,
        "final_train_loss": result.final_train_loss,
        "best_val_loss": result.best_val_loss,
        "best_checkpoint": str(result.best_checkpoint),
        "last_checkpoint": str(result.last_checkpoint),
        "vocab_size": len(vocab),
        "stopped_early": result.stopped_early,
    }


def cmd_generate(args) -> int:
    from .data import tokenize
    from .decoding import beam_search, greedy_decode

    model, vocab, _ = _load_model_bundle(args.checkpoint, args.vocab)
    max_len = args.max_len or model.config.max_len
    stream = open(args.input, encoding="utf-8") if args.input and args.input != "-" else sys.stdin
    out = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    written = 0
    try:
        for lineno, line in enumerate(stream, 1):
            text = line.rstrip("\n")
            tokens = vocab.split(tokenize(text))
            if not tokens:
                warnings.warn(f"input line {lineno} is empty; skipped", stacklevel=1)
                continue
            ids = [vocab.id(t) for t in tokens][: model.config.max_len]
            if args.greedy:
                seq = greedy_decode(model, ids, max_len)
                cands = [{"text": " ".join(vocab.decode(seq)), "score": None}]
            else:
                hyps = beam_search(model, ids, args.beam, max_len, args.alpha)[: args.nbest or args.beam]
                cands = [{"text": " ".join(vocab.decode(h.token_ids)), "score": h.score} for h in hyps]
            out.write(json.dumps({"source": text, "candidates": cands}) + "\n")
            written += 1
    finally:
        if stream is not sys.stdin:
            stream.close()
        if out is not sys.stdout:
            out.close()
    return written


def _read_lines(path: str) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CLIError("missing_file", f"cannot read {path}: {exc.strerror or exc}") from None


def _candidate_texts(path: str) -> list[str]:
    lines = _read_lines(path)
    if lines and lines[0].lstrip().startswith("{"):
        # generate output: take the top candidate
        texts = []
        for line in lines:
            rec = json.loads(line)
            texts.append(rec["candidates"][0]["text"] if rec.get("candidates") else "")
        return texts
    return lines


def cmd_eval(args) -> dict:
    from .data import tokenize
    from .metrics import EvalRecord, evaluate

    cands = _candidate_texts(args.candidates)
    refs = _read_lines(args.references)
    srcs = _read_lines(args.sources)
    if not cands or not refs or not srcs:
        raise CLIError("empty_input", "candidates, references and sources must all be non-empty")
    if not (len(cands) == len(refs) == len(srcs)):
        raise CLIError("line_count_mismatch",
                       f"candidates={len(cands)} references={len(refs)} sources={len(srcs)}")
    records = []
    for c, r, s in zip(cands, refs, srcs):
        # several references may share a line, separated by " ||| "
        references = [tokenize(x) for x in r.split(" ||| ")]
        records.append(EvalRecord(tokenize(s), references, tokenize(c)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = evaluate(records, args.alpha)
        if args.per_record:
            with open(args.per_record, "w", encoding="utf-8") as fh:
                for i, rec in enumerate(records):
                    fh.write(json.dumps({"index": i, **rec.scores(args.alpha)}) + "\n")
    if args.figure:
        from .plotting import metric_bars

        metric_bars(report, args.figure)
    return report


def cmd_inspect(args) -> dict:
    from .inspector import checkpoint_id, inspect_sentence, render, write_report

    model, vocab, _ = _load_model_bundle(args.checkpoint, args.vocab)
    try:
        report = inspect_sentence(model, vocab, args.sentence, checkpoint_id(args.checkpoint),
                                  with_decoder=args.decoder)
    except ValueError as exc:
        raise CLIError("inspect", str(exc)) from None
    if report.truncated:
        print(f"notice: sentence truncated to {model.config.max_len} tokens", file=sys.stderr)
    color = not args.no_color and sys.stdout.isatty()
    print(render(report, color=color))
    out_json = args.json or str(_output_dir(args.output_dir, None) / "granularity.json")
    write_report(report, out_json)
    figure = args.figure or str(Path(out_json).with_suffix(".png"))
    if not args.no_figure:
        from .plotting import granularity_heatmap

        granularity_heatmap(report, figure)
    return {"json": out_json, "figure": None if args.no_figure else figure}


def cmd_bench(args) -> dict:
    from .bench import BenchConfig, run_bench
    from .config import ConfigError, load_config

    cfg = BenchConfig()
    if args.config:
        try:
            values = load_config(args.config)
        except ConfigError as exc:
            raise CLIError("config", str(exc)) from None
        for key, val in values.items():
            if key in ("hidden", "layers", "heads", "batch_size", "mask_mode"):
                setattr(cfg, key, val)
            elif key == "max_len":
                cfg.seq_len = val
    for f in dataclasses.fields(BenchConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            setattr(cfg, f.name, val)
    report = run_bench(cfg)
    if args.figure:
        from .plotting import bench_bars

        bench_bars(report, args.figure)
    return report


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cdnpg", description="Granularity-aware paraphrase transformer toolkit")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("config", nargs="?", help="flat key = value config file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    t.add_argument("--train-path", dest="train_path")
    t.add_argument("--valid-path", dest="valid_path")
    t.add_argument("--max-steps", dest="max_steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--mask-mode", dest="mask_mode")
    t.add_argument("--output-dir", dest="output_dir")
    t.add_argument("--resume", help="continue from a last.ckpt written by a previous run")
    t.add_argument("--quiet", action="store_true")

    g = sub.add_parser("generate", help="decode paraphrases for each input line")
    g.add_argument("checkpoint")
    g.add_argument("input", nargs="?", default="-", help="text file, one sentence per line (default stdin)")
    g.add_argument("--vocab")
    g.add_argument("--beam", type=int, default=8)
    g.add_argument("--nbest", type=int, default=None)
    g.add_argument("--alpha", type=float, default=1.0, help="length-normalization exponent")
    g.add_argument("--max-len", dest="max_len", type=int)
    g.add_argument("--greedy", action="store_true")
    g.add_argument("--output", "-o")

    e = sub.add_parser("eval", help="corpus BLEU-2/4, iBLEU and ROUGE-L")
    e.add_argument("candidates", help="one candidate per line, or generate JSONL output")
    e.add_argument("references", help="one reference per line (' ||| ' separates several)")
    e.add_argument("sources")
    e.add_argument("--alpha", type=float, default=0.9, help="iBLEU weight")
    e.add_argument("--per-record", dest="per_record")
    e.add_argument("--figure")

    i = sub.add_parser("inspect", help="per-layer granularity of a sentence")
    i.add_argument("checkpoint")
    i.add_argument("sentence")
    i.add_argument("--vocab")
    i.add_argument("--json")
    i.add_argument("--figure")
    i.add_argument("--no-figure", dest="no_figure", action="store_true")
    i.add_argument("--no-color", dest="no_color", action="store_true")
    i.add_argument("--decoder", action="store_true", help="also report decoder granularity of the greedy output")
    i.add_argument("--output-dir", dest="output_dir")

    b = sub.add_parser("bench", help="GA-attention vs baseline step time")
    b.add_argument("config", nargs="?")
    b.add_argument("--hidden", type=int)
    b.add_argument("--layers", type=int)
    b.add_argument("--heads", type=int)
    b.add_argument("--seq-len", dest="seq_len", type=int)
    b.add_argument("--batch-size", dest="batch_size", type=int)
    b.add_argument("--vocab-size", dest="vocab_size", type=int)
    b.add_argument("--repeats", type=int)
    b.add_argument("--mask-mode", dest="mask_mode")
    b.add_argument("--baseline", choices=["vanilla", "identity"])
    b.add_argument("--figure")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    warnings.simplefilter("default")
    try:
        if args.command == "train":
            print(json.dumps(cmd_train(args)))
        elif args.command == "generate":
            cmd_generate(args)
        elif args.command == "eval":
            print(json.dumps(cmd_eval(args)))
        elif args.command == "inspect":
            cmd_inspect(args)
        elif args.command == "bench":
            report = cmd_bench(args)
            print(f"forward  GA/{report['baseline']} = {report['forward_ratio']:.2f}", file=sys.stderr)
            print(f"fwd+bwd  GA/{report['baseline']} = {report['step_ratio']:.2f}", file=sys.stderr)
            print(json.dumps(report))
    except CLIError as exc:
        print(json.dumps({"error": exc.kind, "message": str(exc)}), file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or usage, 2 failure while running.
Every command writes its resolved configuration as one JSON line to stderr
before doing any work.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .corpus import SPLITS, format_stats, load_corpus
from .dsp import MfccConfig, extract_mfcc, read_wav, save_mfcc
from .evaluation import (ablation_question_mark, evaluate, format_rows, predict_split,
                         single_word_report)
from .io_utils import atomic_write_text
from .model import KINDS
from .pipeline import MfccStore
from .presets import PRESETS, preset
from .runs import load_run, save_run
from .synth import SynthSpec, synth_generate
from .training import CONFIG_ENV, load_config, prepare, train

log = logging.getLogger("lexacoustic")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _pairs(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _echo(command: str, args: argparse.Namespace, **resolved) -> None:
    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    record = {"command": command, "version": __version__, "args": flags, **resolved}
    print(json.dumps(record, sort_keys=True, default=str), file=sys.stderr, flush=True)


def _train_config(args):
    overrides = _pairs(args.set)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    return load_config(args.config, overrides)


def _store(corpus, cfg: MfccConfig, cache):
    return MfccStore(corpus, cfg, cache)


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> None:
    if args.spec in PRESETS:
        spec = preset(args.spec)
    elif Path(args.spec).is_file():
        spec = SynthSpec.load(args.spec)
    else:
        raise UsageError(f"--spec: {args.spec!r} is neither a preset ({', '.join(sorted(PRESETS))}) nor a file")
    _echo("synth", args, spec=dataclasses.asdict(spec))
    corpus = synth_generate(spec, args.seed, args.out)
    print(format_stats(corpus), end="")


def cmd_extract_mfcc(args) -> None:
    cfg = load_config(args.config, _pairs(args.set)).mfcc
    _echo("extract-mfcc", args, mfcc=dataclasses.asdict(cfg))
    if args.wav:
        save_mfcc(args.out, extract_mfcc(read_wav(args.wav), cfg))
        return
    corpus = load_corpus(args.corpus, require_audio=True)
    files = sorted({corpus.audio_file(u) for s in SPLITS for u in corpus.utterances(s)})
    out = Path(args.out)
    for f in files:
        save_mfcc(out / (f.stem + ".mfcc"), extract_mfcc(read_wav(f), cfg))
    print(f"{len(files)} files -> {out}")


def cmd_train(args) -> None:
    cfg = _train_config(args)
    _echo("train", args, config=cfg.to_dict())
    corpus = load_corpus(args.corpus, require_audio=args.model != "lm")
    if args.strip_qmark:
        corpus = corpus.without_question_marks()
    store = _store(corpus, cfg.mfcc, args.mfcc_cache)

    def progress(e):
        print(f"epoch {e.epoch}\tupdates {e.updates}\tloss {e.train_loss:.4f}\tval_acc {e.val_acc:.4f}",
              file=sys.stderr, flush=True)

    vocab, data = prepare(args.model, corpus, cfg, store=store, splits=("train", "valid"))
    result = train(args.model, corpus, cfg, data=data, vocab=vocab, on_epoch=progress)
    save_run(result, args.out, Path(args.corpus).resolve())
    print(f"best epoch {result.best_epoch}; run written to {args.out}")


def _load_for_eval(args):
    run = load_run(args.checkpoint, args.which)
    if getattr(args, "model", None) and args.model != run.kind:
        raise UsageError(f"--model {args.model} but {args.checkpoint} holds a {run.kind} model")
    corpus_path = args.corpus or run.corpus
    if not corpus_path:
        raise UsageError("no --corpus given and the run does not record one")
    corpus = load_corpus(corpus_path)
    if getattr(args, "strip_qmark", False):
        corpus = corpus.without_question_marks()
    store = _store(corpus, run.config.mfcc, args.mfcc_cache)
    _, data = prepare(run.kind, corpus, run.config, vocab=run.vocab, store=store, splits=(args.split,))
    preds = predict_split(run.kind, run.params, run.dims, corpus.labels, data[args.split], run.labels)
    return run, preds


def cmd_evaluate(args) -> None:
    _echo("evaluate", args)
    run, preds = _load_for_eval(args)
    rep = evaluate(preds, run.kind.upper())
    out = Path(args.out) if args.out else Path(args.checkpoint) / f"eval-{args.split}"
    atomic_write_text(out / "report.txt", rep.table())
    atomic_write_text(out / "report.tsv", format_rows(rep.rows()))
    print(rep.table(), end="")


def cmd_predict(args) -> None:
    _echo("predict", args)
    run, preds = _load_for_eval(args)
    header = "dialog\tindex\tgold\tpred\t" + "\t".join(f"p:{lab}" for lab in preds.labels)
    lines = [header]
    for u, g, p, pr in zip(preds.utterances, preds.gold, preds.pred, preds.probs):
        probs = "\t".join(f"{x:.6f}" for x in pr)
        lines.append(f"{u.dialog_id}\t{u.index}\t{preds.labels[g]}\t{preds.labels[p]}\t{probs}")
    text = "\n".join(lines) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)


def cmd_ablate_qmark(args) -> None:
    cfg = _train_config(args)
    kinds = tuple(k.strip() for k in args.models.split(","))
    bad = [k for k in kinds if k not in KINDS]
    if bad:
        raise UsageError(f"--models: unknown kinds {bad}")
    _echo("ablate-qmark", args, config=cfg.to_dict())
    corpus = load_corpus(args.corpus, require_audio=any(k != "lm" for k in kinds))
    rep = ablation_question_mark(corpus, cfg, kinds, args.question_label,
                                 _store(corpus, cfg.mfcc, args.mfcc_cache))
    out = Path(args.out)
    atomic_write_text(out / "ablation.txt", rep.table())
    atomic_write_text(out / "ablation.tsv", format_rows(rep.rows()))
    print(rep.table(), end="")


def cmd_report_singleword(args) -> None:
    _echo("report-singleword", args)
    runs = {}
    for item in args.run:
        name, sep, path = item.partition("=")
        if not sep:
            raise UsageError(f"--run expects NAME=RUN_DIR, got {item!r}")
        runs[name] = path
    preds = {}
    for name, path in runs.items():
        sub = argparse.Namespace(checkpoint=path, which=args.which, corpus=args.corpus, split=args.split,
                                 mfcc_cache=args.mfcc_cache)
        preds[name] = _load_for_eval(sub)[1]
    rep = single_word_report(preds, _csv(args.words), _csv(args.classes))
    out = Path(args.out)
    atomic_write_text(out / "singleword.txt", rep.table())
    atomic_write_text(out / "singleword.tsv", format_rows(rep.rows()))
    print(rep.table(), end="")


def cmd_stats(args) -> None:
    _echo("stats", args)
    text = format_stats(load_corpus(args.corpus))
    if args.out:
        atomic_write_text(args.out, text)
    print(text, end="")


def _csv(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lexacoustic", description="Dialog act classification from words and audio.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def config_flags(sp):
        sp.add_argument("--config", help=f"key = value config file (default: ${CONFIG_ENV})")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    def eval_flags(sp):
        sp.add_argument("--checkpoint", required=True, help="run directory written by 'train'")
        sp.add_argument("--which", choices=("final", "best"), default="final")
        sp.add_argument("--corpus", help="corpus directory (default: the one recorded at training)")
        sp.add_argument("--split", choices=SPLITS, default="test")
        sp.add_argument("--mfcc-cache", help="directory of precomputed .mfcc files")

    sp = sub.add_parser("synth", help="generate a synthetic corpus")
    sp.add_argument("--spec", required=True, help=f"preset name ({', '.join(sorted(PRESETS))}) or JSON file")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("extract-mfcc", help="write .mfcc feature files")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--wav", help="single WAV file; --out is then a file")
    src.add_argument("--corpus", help="every audio file of a corpus; --out is then a directory")
    sp.add_argument("--out", required=True)
    config_flags(sp)
    sp.set_defaults(func=cmd_extract_mfcc)

    sp = sub.add_parser("train", help="train one model")
    sp.add_argument("--model", choices=KINDS, required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True, help="run directory")
    sp.add_argument("--strip-qmark", action="store_true", help="remove '?' tokens before training")
    sp.add_argument("--mfcc-cache")
    config_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="score a trained model on one split")
    sp.add_argument("--model", choices=KINDS, help="assert the run holds this kind")
    sp.add_argument("--strip-qmark", action="store_true")
    sp.add_argument("--out", help="report directory (default: <checkpoint>/eval-<split>)")
    eval_flags(sp)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("predict", help="per-utterance predictions as TSV")
    sp.add_argument("--model", choices=KINDS)
    sp.add_argument("--strip-qmark", action="store_true")
    sp.add_argument("--out", help="output file (default: stdout)")
    eval_flags(sp)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("ablate-qmark", help="retrain with and without '?' and compare")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--models", default="lm,lam")
    sp.add_argument("--question-label", default="QUESTION")
    sp.add_argument("--mfcc-cache")
    sp.add_argument("--out", required=True)
    config_flags(sp)
    sp.set_defaults(func=cmd_ablate_qmark)

    sp = sub.add_parser("report-singleword", help="P/R/F1 on single-word utterances")
    sp.add_argument("--run", action="append", required=True, metavar="NAME=RUN_DIR")
    sp.add_argument("--which", choices=("final", "best"), default="final")
    sp.add_argument("--corpus")
    sp.add_argument("--split", choices=SPLITS, default="test")
    sp.add_argument("--words", default="right,yeah")
    sp.add_argument("--classes", default="STATEMENT,BACKCHANNEL")
    sp.add_argument("--mfcc-cache")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_report_singleword)

    sp = sub.add_parser("stats", help="split sizes and label histograms")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_stats)
    return p


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except (UsageError, ValueError, KeyError, FileNotFoundError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"error: {msg}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())

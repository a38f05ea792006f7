"""Operator-facing command surface.

Subcommands: train, check, evaluate, coverage, calibrate, lm-train.
Every value option resolves with the precedence CLI flag > HEADFILT_<NAME>
environment variable > ``--config`` key=value file > built-in default.
Exit codes: 0 success, 1 runtime error, 2 usage error.  Progress goes to
standard error; results and machine-readable output go to standard output.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from . import data_io, metrics, pipeline, scorer, training
from .char_tree import load_ids_db
from .errors import HeadFiltError, VocabMismatch
from .similarity import ConfusionSets, FilterConfig, calibrate_beta
from .vocab import Vocabulary


class UsageError(Exception):
    pass


@dataclass
class Opt:
    name: str
    typ: str = "str"  # str | int | float | flag
    default: object = None
    required: bool = False
    help: str = ""
    choices: tuple | None = None


COMMAND_OPTS: dict[str, list[Opt]] = {
    "train": [
        Opt("ids", required=True, help="IDS decomposition database"),
        Opt("sets", required=True, help="confusion-set file"),
        Opt("out", required=True, help="output model bundle"),
        Opt("corpus", help="labeled corpus enabling the adaptation stage"),
        Opt("vocab", help="vocabulary file (default: all database characters)"),
        Opt("dim", "int", 512, help="embedding dimension"),
        Opt("lr", "float", 3e-3, help="learning rate"),
        Opt("batch", "int", 500, help="positive pairs per step"),
        Opt("steps1", "int", 150_000, help="confusion-imitation steps"),
        Opt("steps2", "int", 50_000, help="adaptation steps"),
        Opt("k_neg", "int", 1, help="negatives sampled per positive"),
        Opt("margin", "float", 0.4, help="distance margin"),
        Opt("seed", "int", 0, help="seed for all randomness"),
        Opt("calib_pairs", "int", 100_000, help="pairs sampled for scale calibration"),
        Opt("checkpoint_every", "int", 0,
            help="write an intermediate bundle every N steps (0 disables)"),
        Opt("expand_ids", "flag", help="expand decomposable leaves one level"),
    ],
    "check": [
        Opt("model", required=True, help="trained model bundle"),
        Opt("lm", help="n-gram language model file"),
        Opt("external", help="externally produced distributions (JSON lines)"),
        Opt("mode", default="headfilt", choices=("none", "sets", "headfilt"),
            help="filtering mode"),
        Opt("sets", help="confusion-set file (required for --mode sets)"),
        Opt("input", help="input file (default: standard input)"),
        Opt("output", help="output file (default: standard output)"),
        Opt("format", default="lines", choices=("lines", "corpus"),
            help="input format: plain lines or the corpus format"),
        Opt("threads", "int", help="worker cap for batch checking (default: cores)"),
        Opt("min_ratio", "float", help="optional confidence ratio before flagging"),
        Opt("oov_report", help="write counts of set members outside the vocabulary"),
    ],
    "evaluate": [
        Opt("gold", required=True, help="gold corpus"),
        Opt("pred", required=True, help="predictions (JSON lines from check)"),
        Opt("task", default="detection", choices=("detection", "correction")),
        Opt("json", "flag", help="emit JSON instead of a table"),
    ],
    "coverage": [
        Opt("corpus", required=True, help="labeled corpus"),
        Opt("sets", required=True, help="confusion-set file"),
        Opt("json", "flag", help="emit JSON instead of a table"),
    ],
    "calibrate": [
        Opt("model", required=True, help="model bundle to recalibrate"),
        Opt("pairs", "int", 100_000, help="dissimilar pairs to sample"),
        Opt("seed", "int", 0, help="sampling seed"),
        Opt("sets", help="confusion sets excluded from the sample"),
        Opt("corpus", help="corpus whose error pairs are excluded from the sample"),
        Opt("out", help="output path (default: rewrite the input bundle)"),
    ],
    "lm-train": [
        Opt("out", required=True, help="output language-model file"),
        Opt("input", help="plain text, one sentence per line"),
        Opt("corpus", help="labeled corpus to read sentences from"),
        Opt("order", "int", 3, help="n-gram order"),
        Opt("vocab", help="vocabulary file (default: corpus characters)"),
        Opt("model", help="model bundle to take the vocabulary from"),
        Opt("apply_edits", "flag", help="train on corrected text (gold edits applied)"),
    ],
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="headfilt",
        description="Spell checking with adaptable similarity filtering.")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, opts in COMMAND_OPTS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=None,
                       help="key=value file supplying option defaults")
        for opt in opts:
            flag = "--" + opt.name.replace("_", "-")
            if opt.typ == "flag":
                p.add_argument(flag, dest=opt.name, action="store_true",
                               default=None, help=opt.help)
            else:
                p.add_argument(flag, dest=opt.name, default=None,
                               choices=opt.choices, help=opt.help)
    return parser


def _coerce(opt: Opt, raw):
    if not isinstance(raw, str):
        return raw
    if opt.typ == "int":
        return int(raw)
    if opt.typ == "float":
        return float(raw)
    if opt.typ == "flag":
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if opt.choices and raw not in opt.choices:
        raise UsageError(f"--{opt.name.replace('_', '-')}: invalid choice {raw!r} "
                         f"(choose from {', '.join(opt.choices)})")
    return raw


def _parse_config_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                key, sep, value = line.partition("=")
                if not sep:
                    raise UsageError(f"{path}:{line_no}: expected key=value")
                values[key.strip().replace("-", "_")] = value.strip()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    return values


def resolve_options(args, opts: list[Opt]) -> SimpleNamespace:
    file_values = _parse_config_file(args.config) if args.config else {}
    resolved = {}
    missing = []
    for opt in opts:
        value = getattr(args, opt.name)
        if value is None:
            env = os.environ.get("HEADFILT_" + opt.name.upper())
            if env is not None:
                value = _coerce(opt, env)
            elif opt.name in file_values:
                value = _coerce(opt, file_values[opt.name])
            else:
                value = opt.default
        else:
            value = _coerce(opt, value)
        if value is None and opt.required:
            missing.append("--" + opt.name.replace("_", "-"))
        resolved[opt.name] = value
    if missing:
        raise UsageError(f"missing required option(s): {', '.join(missing)}")
    return SimpleNamespace(**resolved)


def _file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_train(o) -> int:
    registry, db_report = load_ids_db(o.ids, expand_leaves=bool(o.expand_ids))
    _log(f"loaded decompositions: {db_report.summary()}")
    vocab = Vocabulary.from_file(o.vocab) if o.vocab else Vocabulary(registry.chars)
    sets = ConfusionSets.load(o.sets)
    corpus = data_io.load_corpus(o.corpus) if o.corpus else None
    config = training.TrainConfig(
        m=o.margin, learning_rate=o.lr, batch_size=o.batch,
        stage1_steps=o.steps1, stage2_steps=o.steps2,
        negatives_per_positive=o.k_neg, seed=o.seed, dim=o.dim,
        calibration_pairs=o.calib_pairs, checkpoint_every=o.checkpoint_every)
    model, report = training.train(registry, vocab, sets, corpus, config,
                                   progress=_log, checkpoint_base=o.out)
    stages = ["confusion-imitation"]
    data_hashes = {"ids": _file_hash(o.ids), "sets": _file_hash(o.sets)}
    if corpus is not None and o.steps2 > 0:
        stages.append("adaptation")
        data_hashes["corpus"] = _file_hash(o.corpus)
    provenance = {
        "stages": stages,
        "seed": o.seed,
        "steps": {"stage1": o.steps1,
                  "stage2": o.steps2 if "adaptation" in stages else 0},
        "data_hashes": data_hashes,
    }
    bundle = data_io.bundle_from_model(model, provenance)
    data_io.save_model(bundle, o.out)
    _log(f"positives within margin: {report.pos_within_margin:.3f}; "
         f"negatives beyond margin: {report.neg_beyond_margin:.3f}; "
         f"scale beta={report.beta:.4f}; wall time {report.wall_time_s:.1f}s")
    _log(f"saved model bundle to {o.out}")
    return 0


def _load_scorer(o, vocab):
    if o.lm and o.external:
        raise UsageError("give either --lm or --external, not both")
    if o.lm:
        header, _ = data_io.read_container(o.lm)
        if header.get("kind") != "ngram-lm":
            raise HeadFiltError(f"{o.lm}: not a language-model file")
        model = scorer.NgramModel.from_header(header)
        if model.vocab != vocab:
            raise VocabMismatch(
                "language model and filter model were built on different vocabularies")
        return model
    if o.external:
        return scorer.load_external(o.external, vocab)
    raise UsageError("a scorer is required: give --lm or --external")


def _read_sentences(o):
    if o.format == "corpus":
        corpus = data_io.load_corpus(o.input) if o.input else None
        if corpus is None:
            raise UsageError("--format corpus requires --input")
        return [pipeline.Sentence(rec.id, rec.text) for rec in corpus.sentences]
    if o.input:
        with open(o.input, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    else:
        lines = sys.stdin.read().splitlines()
    return [pipeline.Sentence(str(no), line)
            for no, line in enumerate(lines, start=1) if line]


def cmd_check(o) -> int:
    bundle = data_io.load_model(o.model)
    vocab = bundle.vocab
    sc = _load_scorer(o, vocab)
    if o.mode == "none":
        filt = None
    elif o.mode == "sets":
        if not o.sets:
            raise UsageError("--mode sets requires --sets")
        filt = pipeline.ConfusionSetFilter(ConfusionSets.load(o.sets), vocab)
    else:
        filt = bundle.filter_model()
    sentences = _read_sentences(o)
    threads = o.threads if o.threads else (os.cpu_count() or 1)
    results = pipeline.check_sentences(sentences, sc, filt,
                                       min_ratio=o.min_ratio, threads=threads)
    out = open(o.output, "w", encoding="utf-8") if o.output else sys.stdout
    try:
        for res in results:
            out.write(res.to_json() + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    flagged = sum(1 for r in results if r.edits)
    _log(f"checked {len(results)} sentence(s); {flagged} with suggested edits")
    if isinstance(filt, pipeline.ConfusionSetFilter) and filt.oov_report:
        if o.oov_report:
            with open(o.oov_report, "w", encoding="utf-8") as fh:
                for char, count in sorted(filt.oov_report.items()):
                    fh.write(f"{char}\t{count}\n")
            _log(f"wrote {len(filt.oov_report)} out-of-vocabulary set member(s) "
                 f"to {o.oov_report}")
        else:
            _log(f"{sum(filt.oov_report.values())} reference(s) to set members "
                 "outside the vocabulary were ignored")
    return 0


def _load_predictions(path) -> dict[str, list[tuple[int, str]]]:
    preds: dict[str, list[tuple[int, str]]] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                edits = [(int(e["pos"]), e["correction"]) for e in obj["edits"]]
                preds[obj["id"]] = edits
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise HeadFiltError(f"{path}:{line_no}: bad prediction line: {exc}") from None
    return preds


def cmd_evaluate(o) -> int:
    gold = data_io.load_corpus(o.gold)
    preds = _load_predictions(o.pred)
    report = metrics.sentence_metrics(gold, preds, o.task)
    print(report.to_json() if o.json else report.format_table())
    return 0


def cmd_coverage(o) -> int:
    corpus = data_io.load_corpus(o.corpus)
    sets = ConfusionSets.load(o.sets)
    pairs = data_io.extract_error_pairs(corpus)
    report = metrics.coverage(pairs, sets)
    print(report.to_json() if o.json else report.format_table())
    return 0


def cmd_calibrate(o) -> int:
    bundle = data_io.load_model(o.model)
    vocab = bundle.vocab
    embeddings = bundle.filter_model().embeddings
    positives: list[tuple[int, int]] = []
    if o.sets:
        sets = ConfusionSets.load(o.sets)
        positives, _ = training.build_stage1_pairs(sets, vocab)
    if o.corpus:
        corpus = data_io.load_corpus(o.corpus)
        positives, _ = training.build_stage2_pairs(positives, corpus, vocab)
    sampler = training.NegativeSampler(len(vocab), positives)
    rng = np.random.default_rng(o.seed)
    n = min(o.pairs, max(1, len(vocab) * (len(vocab) - 1) // 2))
    sample = sampler.sample(rng, n)
    beta = calibrate_beta(embeddings, sample, len(vocab), bundle.config.m)
    bundle.config = FilterConfig(beta=beta, m=bundle.config.m)
    bundle.provenance = dict(bundle.provenance,
                             recalibration={"pairs": n, "seed": o.seed})
    data_io.save_model(bundle, o.out or o.model)
    print(f"{beta:.6f}")
    return 0


def cmd_lm_train(o) -> int:
    if bool(o.input) == bool(o.corpus):
        raise UsageError("give exactly one of --input or --corpus")
    if o.input:
        with open(o.input, encoding="utf-8") as fh:
            sentences = [line for line in fh.read().splitlines() if line]
    else:
        corpus = data_io.load_corpus(o.corpus)
        if o.apply_edits:
            sentences = [data_io.apply_edits(rec) for rec in corpus.sentences]
        else:
            sentences = [rec.text for rec in corpus.sentences]
    if o.vocab:
        vocab = Vocabulary.from_file(o.vocab)
    elif o.model:
        vocab = data_io.load_model(o.model).vocab
    else:
        vocab = None
    model = scorer.ngram_train(sentences, order=o.order, vocab=vocab)
    data_io.write_container(o.out, model.to_header(), [])
    _log(f"trained order-{o.order} model on {len(sentences)} sentence(s); "
         f"vocabulary size {len(model.vocab)}")
    return 0


COMMAND_FUNCS = {
    "train": cmd_train,
    "check": cmd_check,
    "evaluate": cmd_evaluate,
    "coverage": cmd_coverage,
    "calibrate": cmd_calibrate,
    "lm-train": cmd_lm_train,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve_options(args, COMMAND_OPTS[args.command])
        return COMMAND_FUNCS[args.command](opts)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except HeadFiltError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

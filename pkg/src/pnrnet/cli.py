"""Command-line entry point: ``pnrnet <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import torch

from .config import TrainConfig
from .data import DataError, SynthConfig, encode_sentence, generate_synthetic, load_corpus, nesting_ratio, write_corpus
from .decoder import TraceMissing, export_attention, write_attention
from .encoder import load_context_vectors
from .metrics import DEFAULT_EDGES, evaluate
from .numerics import ConfigError, NumericError
from .trainer import Checkpoint, CheckpointError, predict, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _load(path):
    try:
        return load_corpus(path)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None


def _checkpoint(path) -> Checkpoint:
    try:
        return Checkpoint.load(path)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None


def _contexts(path, width):
    if path is None:
        return None
    try:
        return load_context_vectors(path, width)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None


def cmd_gen_data(args) -> int:
    cfg = SynthConfig(sentences=args.sentences, vocab_size=args.vocab_size, types=args.types,
                      nesting=args.nesting, max_entity_len=args.max_entity_len,
                      max_sentence_len=args.max_sentence_len, seed=args.seed)
    try:
        corpus = generate_synthetic(cfg)
    except DataError as exc:
        raise UsageError(str(exc)) from None
    try:
        write_corpus(corpus, args.out)
    except OSError as exc:
        raise DataError(f"cannot write {args.out}: {exc.strerror}") from None
    print(f"wrote {len(corpus)} sentences to {args.out}")
    print(f"nesting ratio {nesting_ratio(corpus):.2f}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = TrainConfig.load(args.config) if args.config else TrainConfig()
    train_corpus = _load(args.train)
    dev_corpus = _load(args.dev)
    ckpt = train(config, train_corpus, dev_corpus, log_path=args.log,
                 train_contexts=_contexts(args.train_context, config.context_dim),
                 dev_contexts=_contexts(args.dev_context, config.context_dim))
    ckpt.save(args.out)
    print(f"best epoch {ckpt.epoch} dev f1 {ckpt.dev_f1:.4f}; checkpoint written to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    gold = _load(args.data)
    if args.pred:
        pred = _load(args.pred)
    elif args.model:
        ckpt = _checkpoint(args.model)
        pred = predict(ckpt, gold, _contexts(args.context, ckpt.config.context_dim))
    else:
        raise UsageError("eval needs --model or --pred")
    report = evaluate(gold, pred, DEFAULT_EDGES if args.buckets else None)
    print(report.format())
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(report.to_json(), fh, indent=1)
    return EXIT_OK


def cmd_predict(args) -> int:
    ckpt = _checkpoint(args.model)
    corpus = _load(args.data)
    preds = predict(ckpt, corpus, _contexts(args.context, ckpt.config.context_dim))
    write_corpus(preds, args.out)
    print(f"wrote predictions for {len(preds)} sentences to {args.out}")
    return EXIT_OK


def cmd_inspect_attention(args) -> int:
    ckpt = _checkpoint(args.model)
    corpus = _load(args.data)
    if not 0 <= args.sentence < len(corpus):
        raise UsageError(f"--sentence {args.sentence} outside 0..{len(corpus) - 1}")
    config = ckpt.config
    if not 1 <= args.layer <= config.M:
        raise UsageError(f"--layer {args.layer} outside 1..{config.M}")
    if not 0 <= args.head < config.num_heads:
        raise UsageError(f"--head {args.head} outside 0..{config.num_heads - 1}")
    model = ckpt.model()
    sentence = corpus[args.sentence]
    contexts = _contexts(args.context, config.context_dim)
    with torch.no_grad():
        result = model.forward(encode_sentence(sentence, model.vocab),
                               contexts[args.sentence] if contexts else None, trace=True)
    doc = export_attention(result.decoded.traces, args.layer, args.head, result.index, sentence.tokens)
    write_attention(doc, args.out)
    print(f"wrote {len(doc['proposals'])} proposals x {len(result.index)} spans to {args.out}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .checks import model_grad_check, toy_config
    config = TrainConfig.load(args.config) if args.config else toy_config()
    report = model_grad_check(config, eps=args.eps, coords=args.coords, seed=args.seed)
    ok = report.max_rel_error < args.tolerance
    print(f"coordinates {report.coordinates} (excluded at kinks: {report.excluded})")
    print(f"max relative error {report.max_rel_error:.3e} at {report.worst_parameter}{list(report.worst_index)}")
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser() -> Parser:
    parser = Parser(prog="pnrnet", description="Propose-and-refine nested NER")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("gen-data", help="write a synthetic nested-entity corpus")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--sentences", type=int, default=2000, help="number of sentences")
    p.add_argument("--types", type=int, default=3, help="number of entity types")
    p.add_argument("--nesting", type=float, default=0.4, help="target share of nested entities")
    p.add_argument("--max-entity-len", type=int, default=8, help="longest entity in tokens")
    p.add_argument("--max-sentence-len", type=int, default=30, help="longest sentence in tokens")
    p.add_argument("--vocab-size", type=int, default=200, help="distinct surface words")
    p.add_argument("--seed", type=int, default=1, help="random seed")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model and write the best checkpoint")
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--train", required=True, help="training corpus JSONL")
    p.add_argument("--dev", required=True, help="development corpus JSONL")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training log JSONL path")
    p.add_argument("--train-context", help="context vector sidecar for --train")
    p.add_argument("--dev-context", help="context vector sidecar for --dev")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score predictions against gold")
    p.add_argument("--data", required=True, help="gold corpus JSONL")
    p.add_argument("--model", help="checkpoint to predict with")
    p.add_argument("--pred", help="precomputed prediction JSONL instead of --model")
    p.add_argument("--buckets", action="store_true", help="add length-bucketed F1")
    p.add_argument("--json", help="also write the report as JSON here")
    p.add_argument("--context", help="context vector sidecar for --data")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write predicted mentions with confidences")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--data", required=True, help="input corpus JSONL")
    p.add_argument("--out", required=True, help="prediction JSONL path")
    p.add_argument("--context", help="context vector sidecar for --data")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("inspect-attention", help="export cross-attention weights of one head")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--data", required=True, help="corpus JSONL")
    p.add_argument("--sentence", type=int, default=0, help="sentence index (from 0)")
    p.add_argument("--layer", type=int, default=1, help="decoder layer (from 1)")
    p.add_argument("--head", type=int, default=0, help="attention head (from 0)")
    p.add_argument("--out", required=True, help="output JSON path")
    p.add_argument("--context", help="context vector sidecar for --data")
    p.set_defaults(func=cmd_inspect_attention)

    p = sub.add_parser("grad-check", help="finite-difference check of the full loss")
    p.add_argument("--config", help="JSON TrainConfig for the toy model (default: built-in toy)")
    p.add_argument("--eps", type=float, default=1e-3, help="central-difference step in [1e-7, 1e-3]")
    p.add_argument("--coords", type=int, default=200, help="parameter coordinates to check")
    p.add_argument("--seed", type=int, default=0, help="coordinate sampling seed")
    p.add_argument("--tolerance", type=float, default=1e-4, help="max relative error to pass")
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, TraceMissing) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

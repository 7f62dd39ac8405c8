"""Command-line entry point.

Subcommands: build-vocab, build-ec, train, eval, generate, kb-stats,
gradcheck. stdout carries only machine-readable output (JSON or CSV);
human diagnostics go to stderr, gated by EXTED_LOG={error|info|debug}.
Exit codes: 0 success, 1 usage error, 2 data/format/config error,
3 gradient verification failure.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError, ExtEdError
from .evaluation import ReportEntry, evaluate_report, report_csv
from .gradcheck import run_gradcheck_suite
from .knowledge import (
    NellSource,
    WikiSummarySource,
    external_context_vector,
    knowledge_diagnostics,
    read_ec_records,
)
from .model import EC_EVAL_MODES, MODES, ModelConfig, generate
from .corpus import load_corpus
from .text import StopwordList, Vocabulary, build_vocab, load_embeddings, tokenize
from .training import TrainOptions, load_checkpoint, precompute_ec, train

log = logging.getLogger("exted.cli")

USAGE_EXIT, DATA_EXIT, VERIFY_EXIT = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(USAGE_EXIT)


def _setup_logging():
    level = os.environ.get("EXTED_LOG", "error").strip().lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(
        stream=sys.stderr,
        level=levels.get(level, logging.ERROR),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _emit(obj) -> None:
    json.dump(obj, sys.stdout)
    sys.stdout.write("\n")


# ---------------------------------------------------------------------------
# run configuration

MODEL_KEYS = {
    "mode", "embed_dim", "hidden_dim", "ec_dim", "lambda2", "lambda3",
    "train_ec_feed", "eval_ec_mode",
}
TRAINING_KEYS = {"epochs", "lr", "beta1", "beta2", "adam_eps", "seed", "max_gen_len"}
PATH_KEYS = {
    "corpus", "vocab", "embeddings", "stopwords", "kb", "kb_kind",
    "ec_file", "checkpoint_dir", "metrics_dir",
}


def load_run_config(path) -> dict:
    """Strict JSON run config: sections model/training/paths, unknown keys
    rejected at every level."""
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(cfg) - {"model", "training", "paths"}
    if unknown:
        raise ConfigError(f"{path}: unknown top-level keys {sorted(unknown)}")
    for section, allowed in (("model", MODEL_KEYS), ("training", TRAINING_KEYS), ("paths", PATH_KEYS)):
        block = cfg.get(section, {})
        if not isinstance(block, dict):
            raise ConfigError(f"{path}: section {section!r} must be an object")
        bad = set(block) - allowed
        if bad:
            raise ConfigError(f"{path}: unknown {section} keys {sorted(bad)}")
    return cfg


def _require_paths(paths: dict, names, config_path):
    for name in names:
        value = paths.get(name)
        if not value:
            raise ConfigError(f"{config_path}: paths.{name} is required")
        if name.endswith("_dir"):
            continue  # created on demand
        if not Path(value).exists():
            raise ConfigError(f"{config_path}: paths.{name} does not exist: {value}")


def _load_kb(kind: str, path):
    if kind == "wiki":
        return WikiSummarySource.load(path)
    if kind == "nell":
        return NellSource.load(path)
    raise ConfigError(f"kb kind must be wiki or nell, got {kind!r}")


def _load_stopwords(path=None) -> StopwordList:
    return StopwordList.load(path) if path else StopwordList.default()


# ---------------------------------------------------------------------------
# subcommands


def cmd_build_vocab(args) -> int:
    pairs = load_corpus(args.corpus)
    vocab = build_vocab(pairs, max_size=args.max_size, min_count=args.min_count)
    vocab.save(args.out)
    _emit({"vocab_size": len(vocab), "pairs": len(pairs), "path": str(args.out)})
    return 0


def cmd_build_ec(args) -> int:
    pairs = load_corpus(args.corpus)
    source = _load_kb(args.kb, args.kb_path)
    embeddings = load_embeddings(args.embeddings, dim=args.dim)
    stopwords = _load_stopwords(args.stopwords)
    stats = precompute_ec(
        pairs, source, embeddings, stopwords,
        scale=args.scale, seed=args.seed, out_path=args.out,
    )
    payload = {
        "records": stats.n_records,
        "zero_vectors": stats.zero_vectors,
        "path": str(args.out),
    }
    if stats.diagnostics is not None:
        payload["diagnostics"] = {
            "n_vectors": stats.diagnostics.n_vectors,
            "mean_distance": stats.diagnostics.mean_distance,
            "distance_variance": stats.diagnostics.distance_variance,
        }
    _emit(payload)
    return 0


def cmd_train(args) -> int:
    run_cfg = load_run_config(args.config)
    paths = run_cfg.get("paths", {})
    model_block = dict(run_cfg.get("model", {}))
    train_block = dict(run_cfg.get("training", {}))

    if args.mode:
        model_block["mode"] = args.mode
    if args.epochs is not None:
        train_block["epochs"] = args.epochs
    if args.seed is not None:
        train_block["seed"] = args.seed
    if args.lr is not None:
        train_block["lr"] = args.lr
    if args.out:
        paths["checkpoint_dir"] = args.out

    mode = model_block.get("mode", "ext_ed")
    needed = ["corpus", "vocab", "checkpoint_dir"]
    if mode != "vanilla":
        needed.append("ec_file")
    _require_paths(paths, needed, args.config)

    pairs = load_corpus(paths["corpus"])
    vocab = Vocabulary.load(paths["vocab"])
    ec_map = read_ec_records(paths["ec_file"]) if mode != "vanilla" else None

    cfg = ModelConfig(vocab_size=len(vocab), **model_block)
    if "epochs" not in train_block:
        raise ConfigError(f"{args.config}: training.epochs is required")
    options = TrainOptions(checkpoint_dir=paths["checkpoint_dir"], **train_block)

    result = train(pairs, vocab, cfg, options, ec_map=ec_map)
    metrics_dir = Path(paths.get("metrics_dir") or paths["checkpoint_dir"])
    metrics_dir.mkdir(parents=True, exist_ok=True)
    step_csv = metrics_dir / "steps.csv"
    epoch_csv = metrics_dir / "epochs.csv"
    result.metrics.write(step_csv, epoch_csv)
    final_ckpt = sorted(Path(paths["checkpoint_dir"]).glob("epoch_*.xed"))
    _emit(
        {
            "steps": result.checkpoint.step,
            "epochs": len(result.metrics.epoch_records),
            "train_pairs": len(result.train_pairs),
            "val_pairs": len(result.val_pairs),
            "checkpoint": str(final_ckpt[-1]) if final_ckpt else None,
            "metrics": {"steps": str(step_csv), "epochs": str(epoch_csv)},
        }
    )
    return 0


def _parse_model_arg(arg: str):
    """LABEL=PATH[@ECMODE]"""
    if "=" not in arg:
        raise ConfigError(f"--model expects LABEL=PATH[@ECMODE], got {arg!r}")
    label, rest = arg.split("=", 1)
    ec_mode = None
    if "@" in rest:
        rest, ec_mode = rest.rsplit("@", 1)
        if ec_mode not in EC_EVAL_MODES:
            raise ConfigError(f"ec mode must be one of {EC_EVAL_MODES}, got {ec_mode!r}")
    if not label or not rest:
        raise ConfigError(f"--model expects LABEL=PATH[@ECMODE], got {arg!r}")
    return label, rest, ec_mode


def cmd_eval(args) -> int:
    pairs = load_corpus(args.corpus)
    vocab = Vocabulary.load(args.vocab)
    ec_map = read_ec_records(args.ec_file) if args.ec_file else None
    entries = []
    for arg in args.model:
        label, path, ec_mode = _parse_model_arg(arg)
        if not Path(path).exists():
            raise ConfigError(f"checkpoint does not exist: {path}")
        entries.append(ReportEntry(label, load_checkpoint(path), ec_mode))
    rows = evaluate_report(entries, pairs, vocab, ec_map, max_len=args.max_len)
    csv_text = report_csv(rows)
    if args.out:
        Path(args.out).write_text(csv_text, encoding="utf-8")
    sys.stdout.write(csv_text)
    return 0


def cmd_generate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    vocab = Vocabulary.load(args.vocab)
    cfg = ckpt.cfg
    if args.ec_mode:
        cfg = replace(cfg, eval_ec_mode=args.ec_mode)

    oracle_parts = None
    if cfg.mode != "vanilla" and cfg.eval_ec_mode == "oracle":
        if not (args.kb and args.kb_path and args.embeddings):
            raise ConfigError(
                "--ec-mode oracle needs --kb, --kb-path and --embeddings to "
                "build the knowledge vector"
            )
        oracle_parts = (
            _load_kb(args.kb, args.kb_path),
            load_embeddings(args.embeddings, dim=cfg.ec_dim),
            _load_stopwords(args.stopwords),
        )

    def respond(context_text: str) -> str:
        tokens = tokenize(context_text)
        if not tokens:
            return ""
        ec = None
        if oracle_parts is not None:
            source, embeddings, stopwords = oracle_parts
            ec = external_context_vector(tokens, source, embeddings, stopwords)
            ec = ec.values * args.ec_scale
        ids = generate(ckpt.params, vocab.encode(tokens), args.max_len, cfg, ec_true=ec)
        return " ".join(vocab.decode(ids))

    if args.repl:
        for line in sys.stdin:
            sys.stdout.write(respond(line.rstrip("\n")) + "\n")
            sys.stdout.flush()
        return 0
    if args.context is None:
        raise ConfigError("generate needs --context TEXT or --repl")
    sys.stdout.write(respond(args.context) + "\n")
    return 0


def cmd_kb_stats(args) -> int:
    records = read_ec_records(args.ec_file)
    report = knowledge_diagnostics(list(records.values()))
    _emit(
        {
            "n_vectors": report.n_vectors,
            "mean_distance": report.mean_distance,
            "distance_variance": report.distance_variance,
        }
    )
    return 0


def cmd_gradcheck(args) -> int:
    reports, ok = run_gradcheck_suite(seed=args.seed, configs_per_mode=args.configs_per_mode)
    _emit(
        {
            "configs": len(reports),
            "passed": ok,
            "max_rel_err": max(r.max_rel_err for r in reports),
            "failures": [
                {"mode": r.mode, "seed": r.seed, "max_rel_err": r.max_rel_err}
                for r in reports
                if not r.passed
            ],
        }
    )
    return 0 if ok else VERIFY_EXIT


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="exted", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-vocab", help="corpus -> vocabulary file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-size", type=int, default=5000)
    p.add_argument("--min-count", type=int, default=1)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("build-ec", help="corpus + knowledge snapshot -> ec file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--kb", choices=("wiki", "nell"), required=True,
                   help="knowledge source kind")
    p.add_argument("--kb-path", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--stopwords")
    p.add_argument("--out", required=True)
    p.add_argument("--scale", action="store_true", help="apply the positive N(4,1) rescale")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_build_ec)

    p = sub.add_parser("train", help="run config -> checkpoints + metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--out", help="checkpoint directory override")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="checkpoints -> report CSV")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--ec-file")
    p.add_argument("--model", action="append", required=True,
                   help="LABEL=PATH[@ECMODE], repeatable")
    p.add_argument("--max-len", type=int, default=20)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("generate", help="greedy response for a context")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--context")
    p.add_argument("--repl", action="store_true", help="read contexts line by line")
    p.add_argument("--ec-mode", choices=EC_EVAL_MODES)
    p.add_argument("--max-len", type=int, default=20)
    p.add_argument("--kb", choices=("wiki", "nell"), help="knowledge source kind")
    p.add_argument("--kb-path")
    p.add_argument("--embeddings")
    p.add_argument("--stopwords")
    p.add_argument("--ec-scale", type=float, default=1.0,
                   help="multiply the on-the-fly knowledge vector (use ~4 for "
                        "checkpoints trained on rescaled vectors)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("kb-stats", help="ec file -> diagnostics JSON")
    p.add_argument("--ec-file", required=True)
    p.set_defaults(func=cmd_kb_stats)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--configs-per-mode", type=int, default=4)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def run(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ExtEdError as exc:
        sys.stderr.write(f"exted: error: {exc}\n")
        return DATA_EXIT
    except OSError as exc:
        sys.stderr.write(f"exted: error: {exc}\n")
        return DATA_EXIT


def main(argv=None) -> int:
    return run(argv)

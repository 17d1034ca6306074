"""Command line entry point.

Exit status: 0 on success, 1 on usage or configuration errors, 2 on data
errors (missing or malformed files, bad checkpoints, empty documents).
Log verbosity comes from ``LATENTQUERY_LOG_LEVEL`` (default ``WARNING``).
"""
from __future__ import annotations

import argparse
import io
import json
import logging
import os
import sys
from pathlib import Path

from .config import DecodeConfig, TrainConfig, load_config
from .data import (DataError, SyntheticSpec, _atomic_write, generate_synthetic, load_corpus,
                   spec_from_dict, validate_example, write_corpus)
from .latent_query import dump_beliefs
from .model import EmptyDocumentError, Summarizer
from .nn import ConfigError
from .params import CheckpointError

log = logging.getLogger("latentquery")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _kv_pairs(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _apply_overrides(cfg, overrides: dict):
    from .config import _coerce

    kw = {}
    for k, v in overrides.items():
        if not hasattr(cfg, k):
            raise ConfigError(f"unknown config key {k!r}")
        kw[k] = _coerce(v, getattr(cfg, k))
    return cfg.with_overrides(**kw) if kw else cfg


def _read_input(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    p = Path(path)
    try:
        return p.read_bytes().decode("utf-8")
    except FileNotFoundError:
        raise DataError(f"{p}: no such file") from None
    except UnicodeDecodeError as exc:
        raise DataError(f"{p}: invalid UTF-8 at byte {exc.start}") from None


def _decode_config(args, model: Summarizer) -> DecodeConfig:
    if getattr(args, "beam", 0):
        return DecodeConfig("beam", args.beam, model.config.max_target_length)
    return DecodeConfig(max_target_length=model.config.max_target_length)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    from .trainer import train_loop

    cfg = load_config(args.config) if args.config else TrainConfig()
    cfg = _apply_overrides(cfg, _kv_pairs(args.set))
    examples = load_corpus(args.corpus, "jsonl", strict=args.strict)
    for ex in examples:
        validate_example(ex)
    if not examples:
        raise ConfigError(f"{args.corpus}: training corpus is empty")
    result = train_loop(examples, cfg, out_dir=args.out, resume=args.resume)
    print(f"trained {len(result.history)} steps in {result.seconds:.1f}s; final checkpoint {result.checkpoints[-1]}")
    return EXIT_OK


def cmd_tag(args) -> int:
    from .trainer import build_tokenizer
    from .weak_labels import annotate, diff_report, write_diff_tsv

    examples = load_corpus(args.corpus, "jsonl", strict=args.strict)
    if args.model:
        table = Summarizer.load(args.model).table
    else:
        table = build_tokenizer(examples, args.merges)
    rows, diffs = [], []
    for ex in examples:
        if not ex.summary:
            log.warning("example %s has no summary; not tagged", ex.id)
            continue
        row = annotate(ex.document, ex.summary, table)
        row["id"] = ex.id
        rows.append(row)
        if args.diff:
            diffs += [dict(d, example_id=ex.id) for d in diff_report(ex.document, ex.summary, table)]
    _atomic_write(args.out, "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows))
    if args.diff:
        write_diff_tsv(args.diff, diffs)
    print(f"tagged {len(rows)} examples -> {args.out}")
    return EXIT_OK


def cmd_summarize(args) -> int:
    from .data import load_cluster_dir, load_cluster_jsonl
    from .mds import summarize_cluster

    model = Summarizer.load(args.model)
    decode = _decode_config(args, model)
    if args.cluster:
        path = Path(args.cluster)
        clusters = load_cluster_dir(path) if path.is_dir() else load_cluster_jsonl(path)
        if not clusters:
            raise DataError(f"{path}: no clusters found")
        for c in clusters:
            query = args.query if args.query is not None else c.query
            text = summarize_cluster(model, c.documents, query, args.budget, decode)
            print(text if len(clusters) == 1 else json.dumps({"id": c.id, "summary": text}, ensure_ascii=False))
        return EXIT_OK
    if not args.input:
        raise UsageError("summarize needs --input or --cluster")
    document = _read_input(args.input)
    print(model.generate(document, args.query or None, decode))
    return EXIT_OK


def _load_summaries(path: str) -> dict[str, object]:
    out = {}
    for ln, line in enumerate(_read_input(path).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            key = str(row["id"])
            value = row.get("summaries", row.get("summary"))
            if value is None:
                raise KeyError("summary")
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"{path}:{ln}: malformed row ({exc})") from None
        out[key] = value
    return out


def cmd_evaluate(args) -> int:
    from .rouge import VARIANTS, evaluate_corpus, write_csv

    variants = [v.strip().upper() for v in args.variants.split(",") if v.strip()]
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise UsageError(f"unknown variant(s) {', '.join(bad)}; choose from {', '.join(VARIANTS)}")
    cands = _load_summaries(args.candidates)
    refs = _load_summaries(args.references)
    try:
        rows, means = evaluate_corpus(cands, refs, variants)
    except KeyError as exc:
        raise DataError(str(exc)) from None
    buf = io.StringIO()
    write_csv(buf, rows, means)
    if args.out:
        _atomic_write(args.out, buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SyntheticSpec()
    if args.spec:
        spec = spec_from_dict(json.loads(_read_input(args.spec)))
    overrides = _kv_pairs(args.set)
    if overrides:
        d = spec.__dict__.copy()
        for k, v in overrides.items():
            if k not in d:
                raise ConfigError(f"unknown synthetic spec key {k!r}")
            d[k] = json.loads(v)
        spec = spec_from_dict(d)
    rows = generate_synthetic(spec, args.n, args.split, with_queries=args.queries)
    kept = []
    for ex in rows:
        try:
            validate_example(ex)
            kept.append(ex)
        except DataError as exc:
            log.warning("%s", exc)
    write_corpus(args.out, kept)
    print(f"wrote {len(kept)} examples -> {args.out}")
    return EXIT_OK


def cmd_inspect_belief(args) -> int:
    model = Summarizer.load(args.model)
    doc = model.tokenize(_read_input(args.input))
    query = model.tokenize(args.query) if args.query else None
    _, beliefs = model.infer_beliefs([doc], [query])
    if args.out:
        dump_beliefs(args.out, doc, beliefs[0])
    else:
        for u, p in zip(doc.surfaces, beliefs[0].numpy()):
            print(json.dumps({"unit": u, "prob": round(float(p), 6)}, ensure_ascii=False))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="latentquery", description="Query-focused summarization with a learned query tagger.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model on a JSONL corpus")
    t.add_argument("--corpus", required=True)
    t.add_argument("--out", required=True, help="directory for checkpoints and metrics.csv")
    t.add_argument("--config", help="config file (JSON or key = value lines)")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--strict", action="store_true", help="abort on malformed corpus rows")
    t.set_defaults(fn=cmd_train)

    g = sub.add_parser("tag", help="write weak query labels for a corpus")
    g.add_argument("--corpus", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--model", help="take the tokenizer from this checkpoint")
    g.add_argument("--merges", type=int, default=400, help="BPE merges when no model is given")
    g.add_argument("--diff", help="also write word-level vs BPE-level disagreements as TSV")
    g.add_argument("--strict", action="store_true")
    g.set_defaults(fn=cmd_tag)

    s = sub.add_parser("summarize", help="summarize a document or a document cluster")
    s.add_argument("--model", required=True)
    s.add_argument("--input", help="document file, or - for stdin")
    s.add_argument("--query", help="free-text query; omit for a generic summary")
    s.add_argument("--cluster", help="cluster directory or cluster JSONL for multi-document mode")
    s.add_argument("--budget", type=int, default=250, help="token budget in cluster mode")
    s.add_argument("--beam", type=int, default=0, help="beam width (0: greedy)")
    s.set_defaults(fn=cmd_summarize)

    e = sub.add_parser("evaluate", help="ROUGE scores as CSV")
    e.add_argument("--candidates", required=True)
    e.add_argument("--references", required=True)
    e.add_argument("--variants", default="R1,R2,RL,RSU4")
    e.add_argument("--out")
    e.set_defaults(fn=cmd_evaluate)

    y = sub.add_parser("synth", help="generate a synthetic query-copy corpus")
    y.add_argument("--out", required=True)
    y.add_argument("--n", type=int, default=2000)
    y.add_argument("--split", default="train")
    y.add_argument("--queries", action="store_true", help="emit the query-focused split")
    y.add_argument("--spec", help="JSON file with synthetic spec fields")
    y.add_argument("--set", action="append", metavar="KEY=JSON", help="override a spec field")
    y.set_defaults(fn=cmd_synth)

    b = sub.add_parser("inspect-belief", help="dump per-unit query beliefs")
    b.add_argument("--model", required=True)
    b.add_argument("--input", required=True)
    b.add_argument("--query")
    b.add_argument("--out")
    b.set_defaults(fn=cmd_inspect_belief)
    return p


def main(argv=None) -> int:
    level = os.environ.get("LATENTQUERY_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, EmptyDocumentError, OSError, UnicodeDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:  # --help
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())

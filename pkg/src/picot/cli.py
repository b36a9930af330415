"""Command-line entry point: ``picot {index,ask,run,report,config-dump}``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import random
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .config import ABLATIONS, BACKENDS, MODES, Config, ConfigError, load_config
from .evalkit import build_report, format_report, load_dataset, load_records
from .llm import HttpBackend, ScriptedBackend
from .pipeline import Backends, FewShot, RunRecord, answer_question, format_trace
from .retrieval import Bm25Index, CorpusError, EvidenceProvider, InContext, Rag, build_index, count_documents, ingest_corpus

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_BACKEND = 3

logger = logging.getLogger("picot")


class InputError(Exception):
    pass


# -- setup helpers ---------------------------------------------------------------


def _overrides(args) -> dict:
    out = {
        "mode": getattr(args, "mode", None),
        "top_k": getattr(args, "top_k", None),
        "backend": getattr(args, "backend", None),
        "script": getattr(args, "script", None),
        "index": getattr(args, "index", None),
        "corpus": getattr(args, "corpus", None),
        "model": getattr(args, "model", None),
        "base_url": getattr(args, "base_url", None),
        "fewshot_dir": getattr(args, "fewshot_dir", None),
    }
    if getattr(args, "quote_strings", False):
        out["quote_strings"] = True
    if getattr(args, "ablate", None):
        out["ablation"] = {name: True for name in args.ablate}
    return out


def resolve_config(args) -> Config:
    if args.config is not None and not Path(args.config).is_file():
        raise InputError(f"config file not found: {args.config}")
    return load_config(args.config, _overrides(args))


def make_backends(cfg: Config) -> Backends:
    if cfg.index:
        if not Path(cfg.index).is_file():
            raise InputError(f"index file not found: {cfg.index}")
        try:
            index = Bm25Index.load(cfg.index)
        except ValueError as exc:
            raise InputError(f"{cfg.index}: {exc}") from None
        chunks = index.chunks
    elif cfg.corpus:
        if not Path(cfg.corpus).is_file():
            raise InputError(f"corpus file not found: {cfg.corpus}")
        chunks = ingest_corpus(cfg.corpus, cfg.chunk_size)
        index = build_index(chunks, cfg.k1, cfg.b) if cfg.mode == "rag" else None
    else:
        raise InputError("no evidence source: pass --index or --corpus (or set them in the config)")
    mode = Rag(cfg.top_k) if cfg.mode == "rag" else InContext()
    provider = EvidenceProvider(mode, index=index, chunks=chunks, cache=cfg.retrieval_cache)

    if cfg.backend == "script":
        if not cfg.script:
            raise InputError("the script backend needs --script")
        if not Path(cfg.script).is_file():
            raise InputError(f"script file not found: {cfg.script}")
        try:
            llm = ScriptedBackend.from_file(cfg.script, strict=cfg.strict_script)
        except ValueError as exc:
            raise InputError(str(exc)) from None
    else:
        if not cfg.model:
            raise InputError("the http backend needs a model name (--model or config)")
        llm = HttpBackend(cfg.base_url, cfg.model, timeout=cfg.timeout, attempts=cfg.attempts, backoff=cfg.backoff)
    fewshot = FewShot.from_dir(cfg.fewshot_dir) if cfg.fewshot_dir else FewShot.defaults()
    return Backends(llm, provider, fewshot)


def _run_id(dataset: Path, cfg: Config) -> str:
    digest = hashlib.sha256((json.dumps(cfg.to_dict(), sort_keys=True) + dataset.read_text("utf-8")).encode()).hexdigest()
    return f"{dataset.stem}-{digest[:10]}"


# -- commands -------------------------------------------------------------------


def cmd_index(args) -> int:
    if not Path(args.corpus).is_file():
        raise InputError(f"corpus file not found: {args.corpus}")
    chunks = ingest_corpus(args.corpus, args.chunk_size)
    index = build_index(chunks)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    index.save(args.out)
    print(f"indexed {count_documents(chunks)} docs ({len(chunks)} chunks) -> {args.out}")
    return EXIT_OK


def cmd_ask(args) -> int:
    cfg = resolve_config(args)
    backends = make_backends(cfg)
    record = answer_question(args.question, cfg, backends, question_id=args.id or "")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "records.jsonl").write_text(record.to_line() + "\n", encoding="utf-8")
    if args.trace:
        sys.stdout.write(format_trace(record))
    else:
        print(record.final_answer)
    if record.aborted:
        print(f"error: {record.abort_reason}", file=sys.stderr)
        return EXIT_BACKEND
    return EXIT_OK


def _safe_answer(example, cfg, backends) -> RunRecord:
    try:
        return answer_question(example.question, cfg, backends, example.id, example.gold_answers, example.gold_passages)
    except Exception as exc:  # a bug on one question must not sink the batch
        logger.exception("question %s failed", example.id)
        return RunRecord(example.id, example.question, list(example.gold_answers), aborted=True,
                         abort_reason=f"{type(exc).__name__}: {exc}")


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    dataset = Path(args.dataset)
    if not dataset.is_file():
        raise InputError(f"dataset not found: {dataset}")
    examples = load_dataset(dataset)
    if args.sample is not None and args.sample < len(examples):
        picked = sorted(random.Random(args.seed).sample(range(len(examples)), args.sample))
        examples = [examples[i] for i in picked]
    if not examples:
        raise InputError("dataset has no examples")
    backends = make_backends(cfg)
    workers = max(1, args.parallel)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda ex: _safe_answer(ex, cfg, backends), examples))
    else:
        records = [_safe_answer(ex, cfg, backends) for ex in examples]

    out = Path(args.out) if args.out else Path("runs") / _run_id(dataset, cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "records.jsonl").write_text("".join(r.to_line() + "\n" for r in records), encoding="utf-8")
    report = build_report([r.to_json() for r in records])
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    text = format_report(report)
    (out / "report.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    print(f"records written to {out / 'records.jsonl'}")
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.records)
    if path.is_dir():
        path = path / "records.jsonl"
    if not path.is_file():
        raise InputError(f"records not found: {path}")
    records = load_records(path)
    if not records:
        raise InputError(f"no records in {path}")
    report = build_report(records)
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        sys.stdout.write(format_report(report))
    return EXIT_OK


def cmd_config_dump(args) -> int:
    sys.stdout.write(resolve_config(args).to_toml())
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def _add_run_options(p: argparse.ArgumentParser) -> None:
    d = Config()
    p.add_argument("--config", metavar="PATH", help="TOML config file (flags override it)")
    p.add_argument("--mode", choices=MODES, help=f"evidence mode (default: {d.mode})")
    p.add_argument("--top-k", type=int, metavar="K", help=f"passages per retrieval in rag mode (default: {d.top_k})")
    p.add_argument("--index", metavar="PATH", help="BM25 index built by 'picot index'")
    p.add_argument("--corpus", metavar="PATH", help="JSON-lines corpus (indexed in memory if no --index)")
    p.add_argument("--backend", choices=BACKENDS, help=f"LLM backend (default: {d.backend})")
    p.add_argument("--script", metavar="PATH", help="JSON-lines script for the script backend")
    p.add_argument("--model", help="model name for the http backend")
    p.add_argument("--base-url", help=f"http backend base URL (default: {d.base_url})")
    p.add_argument("--fewshot-dir", metavar="DIR", help="directory with querygen.txt, slice.txt, final.txt")
    p.add_argument("--ablate", action="append", choices=ABLATIONS, help="drop a part of the final prompt (repeatable)")
    p.add_argument("--quote-strings", action="store_true", help="quote string constants in sub-questions")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="picot", description="Prolog-guided multi-hop question answering.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="chunk a corpus and build a BM25 index", formatter_class=fmt)
    p.add_argument("corpus", help="JSON-lines corpus with id, title, text")
    p.add_argument("--out", required=True, metavar="PATH", help="index file to write")
    p.add_argument("--chunk-size", type=int, default=100, help="words per chunk")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("ask", help="answer one question", formatter_class=fmt)
    p.add_argument("question")
    p.add_argument("--id", default="", help="question id stored in the record")
    p.add_argument("--trace", action="store_true", help="print the step-by-step trace")
    p.add_argument("--out", metavar="DIR", default=None, help="also write records.jsonl here")
    _add_run_options(p)
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("run", help="answer every question of a dataset", formatter_class=fmt)
    p.add_argument("dataset", help="JSON-lines dataset with id, question, answers")
    p.add_argument("--parallel", type=int, default=1, metavar="N", help="questions answered concurrently")
    p.add_argument("--sample", type=int, default=None, metavar="N", help="answer a random subset of N questions")
    p.add_argument("--seed", type=int, default=0, help="seed for --sample")
    p.add_argument("--out", metavar="DIR", default=None, help="output directory (default: runs/<run_id>)")
    _add_run_options(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="summarize a records.jsonl file", formatter_class=fmt)
    p.add_argument("records", help="records.jsonl or its run directory")
    p.add_argument("--json", action="store_true", help="print JSON instead of tables")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("config-dump", help="print the merged configuration as TOML", formatter_class=fmt)
    _add_run_options(p)
    p.set_defaults(func=cmd_config_dump)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, ConfigError, CorpusError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

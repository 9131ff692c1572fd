"""medforge command-line interface.

Eight pipeline subcommands (filter, screen, chunk, rewrite, schedule,
avg, proxy-decode, eval) plus train-ngram for building the desk-scale
providers the decode and eval commands consume. Flag defaults mirror
the reference configuration (window 64, threshold 0.04, priorities
16/2, batch 256, 3-shot, 128/2 generated tokens) so bare invocations
reproduce it.

Exit codes: 0 success, 1 validation error, 2 I/O error. A config file
of ``key = value`` lines may supply defaults; explicit flags win.
"""

from __future__ import annotations

import argparse
import difflib
import hashlib
import json
import logging
import os
import sys
from typing import Sequence

from . import __version__
from .archive import ArchiveFormatError, average, read_archive, write_archive
from .backends import HttpBackend, IdentityEnsemble, ProviderBackend
from .chunking import Chunk, ChunkPolicy, chunk_corpus
from .evalharness import (
    GenerationConfig,
    PromptStyle,
    aggregate,
    fixed_prefix_exemplars,
    load_task,
    score_dataset,
)
from .leakage import build_index, screen
from .medfilter import MatchingMode, filter_corpus, load_dictionary
from .proxy import ProxyEnsemble, load_ngram, save_ngram, train_ngram
from .records import (
    Language,
    RecordError,
    Stage,
    parse_jsonl,
    read_jsonl_file,
    write_jsonl_file,
)
from .rewrite import (
    ChatClientConfig,
    HttpChatClient,
    TemplateLibrary,
    assemble_instruction_records,
    run_jobs,
)
from .scheduler import ScheduleConfig, build_pool, emit_schedule, write_schedule

logger = logging.getLogger(__name__)

COMMANDS = (
    "filter",
    "screen",
    "chunk",
    "rewrite",
    "schedule",
    "avg",
    "proxy-decode",
    "eval",
    "train-ngram",
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(ValueError):
    pass


def run_header(params: dict) -> dict:
    """Reproducibility header stamped into every report."""
    canonical = json.dumps(params, sort_keys=True, ensure_ascii=False, default=str)
    return {
        "version": __version__,
        "config_hash": hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
        "seed": params.get("seed"),
    }


def _write_report(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config_file(path) -> dict:
    """key = value lines; '#' comments; values parsed as JSON scalars
    when possible, else kept as strings."""
    values: dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise _UsageError(f"{path}: line {lineno}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip().replace("-", "_")
            value = value.strip()
            try:
                values[key] = json.loads(value)
            except json.JSONDecodeError:
                values[key] = value
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="medforge", description=__doc__.split("\n\n")[0])
    parser.add_argument("--config", help="key=value config file supplying flag defaults")
    parser.add_argument("--log-level", default="INFO", help="logging level (default INFO)")
    parser.add_argument(
        "--jobs", type=int, default=os.cpu_count() or 1,
        help="upper bound on internal parallelism",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("filter", help="keep documents above a medical-term fraction")
    p.add_argument("--dict", required=True, dest="dict_path", help="one term per line")
    p.add_argument("--threshold", type=float, default=0.04)
    p.add_argument("--mode", choices=[m.value for m in MatchingMode],
                   default=MatchingMode.WORD_BOUNDARY.value)
    p.add_argument("--in", required=True, dest="in_path")
    p.add_argument("--out", required=True, dest="out_path")
    p.add_argument("--report", dest="report_path")

    p = sub.add_parser("screen", help="remove items overlapping benchmark data")
    p.add_argument("--bench", required=True, dest="bench_path")
    p.add_argument("--in", required=True, dest="in_path")
    p.add_argument("--out", required=True, dest="out_path")
    p.add_argument("--report", dest="report_path")
    p.add_argument("--window", type=int, default=64)

    p = sub.add_parser("chunk", help="split documents into bounded chunks")
    p.add_argument("--in", required=True, dest="in_path")
    p.add_argument("--out", required=True, dest="out_path")
    for lang in Language:
        p.add_argument(f"--limit-{lang.value}", type=int, dest=f"limit_{lang.value}")

    p = sub.add_parser("rewrite", help="generate QA/dialogue rewrites via a chat service")
    p.add_argument("--in", required=True, dest="in_path", help="chunk JSONL")
    p.add_argument("--kinds", default="qa", help="comma list from {qa,dialogue}")
    p.add_argument("--manifest", required=True, dest="manifest_path")
    p.add_argument("--out", required=True, dest="out_path")
    p.add_argument("--endpoint", required=True)
    p.add_argument("--model", default="")
    p.add_argument("--templates", dest="templates_dir")
    p.add_argument("--max-retries", type=int, default=3)
    p.add_argument("--backoff", type=float, default=0.5)
    p.add_argument("--timeout", type=float, default=60.0)

    p = sub.add_parser("schedule", help="emit a priority-sampled training schedule")
    p.add_argument("--pt", required=True, dest="pt_path")
    p.add_argument("--sft", required=True, dest="sft_path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--pt-priority", type=float, default=16.0)
    p.add_argument("--sft-priority", type=float, default=2.0)
    p.add_argument("--pt-epochs", type=int, default=1)
    p.add_argument("--sft-epochs", type=int, default=2)
    p.add_argument("--out", required=True, dest="out_path")

    p = sub.add_parser("avg", help="element-wise mean of tensor archives")
    p.add_argument("--in", required=True, dest="in_paths", nargs="+")
    p.add_argument("--out", required=True, dest="out_path")

    p = sub.add_parser("proxy-decode", help="greedy decoding with a logit offset")
    p.add_argument("--base", required=True, dest="base_path")
    p.add_argument("--tuned", required=True, dest="tuned_path")
    p.add_argument("--raw", required=True, dest="raw_path")
    p.add_argument("--prompt", required=True)
    p.add_argument("--max-tokens", type=int, default=128)
    p.add_argument("--min-tokens", type=int, default=2)
    p.add_argument("--alpha", type=float, default=1.0)

    p = sub.add_parser("eval", help="few-shot multiple-choice evaluation")
    p.add_argument("--task", required=True, dest="task_path")
    p.add_argument("--dataset", help="dataset name (default: task file stem)")
    p.add_argument("--lang", default="en", choices=[l.value for l in Language])
    p.add_argument("--backend", required=True, choices=["ngram", "proxy", "http"])
    p.add_argument("--model", dest="model_path", help="ngram backend model file")
    p.add_argument("--base", dest="base_path", help="proxy backend model files")
    p.add_argument("--tuned", dest="tuned_path")
    p.add_argument("--raw", dest="raw_path")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--endpoint", help="http backend URL")
    p.add_argument("--dev", dest="dev_path", help="dev-split task file for exemplars")
    p.add_argument("--shots", type=int, default=3)
    p.add_argument("--max-tokens", type=int, default=128)
    p.add_argument("--min-tokens", type=int, default=2)
    p.add_argument("--special-token", default="")
    p.add_argument("--strict", action=argparse.BooleanOptionalAction, default=True,
                   help="count errored items as incorrect (default on)")
    p.add_argument("--report", required=True, dest="report_path")
    p.add_argument("--no-transcripts", action="store_true")

    p = sub.add_parser("train-ngram", help="train a character n-gram provider")
    p.add_argument("--in", required=True, dest="in_paths", nargs="+", help="corpus JSONL")
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--vocab-from", dest="vocab_paths", nargs="*", default=[],
                   help="extra corpora whose characters widen the vocabulary")
    p.add_argument("--out", required=True, dest="out_path")

    return parser


def _params(args: argparse.Namespace) -> dict:
    skip = {"config", "log_level"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _cmd_filter(args) -> int:
    terms = load_dictionary(args.dict_path, MatchingMode(args.mode))
    records = read_jsonl_file(args.in_path)
    kept, report = filter_corpus(records, terms, args.threshold)
    write_jsonl_file(kept, args.out_path)
    logger.info("filter: kept %d of %d documents", report.kept, report.total)
    if args.report_path:
        payload = report.to_json()
        payload["run"] = run_header(_params(args))
        _write_report(args.report_path, payload)
    return 0


def _cmd_screen(args) -> int:
    bench = read_jsonl_file(args.bench_path)
    index = build_index(bench, window_length=args.window)
    items = read_jsonl_file(args.in_path)
    kept, report = screen(items, index)
    write_jsonl_file(kept, args.out_path)
    logger.info(
        "screen: removed %d of %d items (rate %.4f%%)",
        report.removed, report.total, 100 * report.screening_rate,
    )
    if args.report_path:
        payload = report.to_json()
        payload["run"] = run_header(_params(args))
        _write_report(args.report_path, payload)
    return 0


def _cmd_chunk(args) -> int:
    policy = ChunkPolicy()
    for lang in Language:
        override = getattr(args, f"limit_{lang.value}")
        if override is not None:
            policy.limits[lang] = override
    records = read_jsonl_file(args.in_path)
    pretrain = [r for r in records if r.stage is Stage.PRETRAIN]
    count = 0
    with open(args.out_path, "w", encoding="utf-8", newline="\n") as fh:
        for chunk in chunk_corpus(pretrain, policy):
            fh.write(json.dumps(chunk.to_json(), ensure_ascii=False) + "\n")
            count += 1
    logger.info("chunk: %d documents -> %d chunks", len(pretrain), count)
    return 0


def _read_chunks(path) -> list[Chunk]:
    chunks = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                chunks.append(Chunk.from_json(json.loads(line)))
    return chunks


def _cmd_rewrite(args) -> int:
    chunks = _read_chunks(args.in_path)
    kinds = {k.strip() for k in args.kinds.split(",") if k.strip()}
    cfg = ChatClientConfig(
        endpoint=args.endpoint,
        model=args.model,
        max_retries=args.max_retries,
        backoff_base=args.backoff,
        max_in_flight=args.jobs,
        timeout=args.timeout,
    )
    templates = (
        TemplateLibrary.from_directory(args.templates_dir) if args.templates_dir else None
    )
    client = HttpChatClient(cfg)
    jobs = run_jobs(chunks, kinds, client, cfg, manifest_path=args.manifest_path,
                    templates=templates)
    records, report = assemble_instruction_records(jobs)
    write_jsonl_file(records, args.out_path)
    logger.info(
        "rewrite: %d chunks -> %d records (%d skipped)",
        len(chunks), report.records, len(report.skipped),
    )
    for entry in report.skipped:
        logger.warning("rewrite skip: %s", entry)
    return 0


def _cmd_schedule(args) -> int:
    cfg = ScheduleConfig(
        pt_priority=args.pt_priority,
        sft_priority=args.sft_priority,
        pt_epochs=args.pt_epochs,
        sft_epochs=args.sft_epochs,
        batch_size=args.batch,
        seed=args.seed,
    )
    pt = read_jsonl_file(args.pt_path)
    sft = read_jsonl_file(args.sft_path)
    pool = build_pool(pt, sft, cfg)
    counts = {"pt_items": len(pt), "sft_items": len(sft), "instances": len(pool)}
    batches = emit_schedule(pool, cfg)
    with open(args.out_path, "w", encoding="utf-8", newline="\n") as fh:
        write_schedule(batches, cfg, counts, fh, run_header=run_header(_params(args)))
    logger.info("schedule: %d instances in %d batches", counts["instances"], len(batches))
    return 0


def _cmd_avg(args) -> int:
    archives = [read_archive(p) for p in args.in_paths]
    result = average(archives)
    written = write_archive(result, args.out_path)
    logger.info("avg: %d archives -> %s (%d bytes)", len(archives), args.out_path, written)
    return 0


def _load_ensemble(base_path, tuned_path, raw_path, alpha: float) -> ProxyEnsemble:
    return ProxyEnsemble(
        base=load_ngram(base_path),
        tuned=load_ngram(tuned_path),
        raw=load_ngram(raw_path),
        alpha=alpha,
    )


def _cmd_proxy_decode(args) -> int:
    from .backends import decode_text

    ensemble = _load_ensemble(args.base_path, args.tuned_path, args.raw_path, args.alpha)
    cfg = GenerationConfig(
        shots=0, max_new_tokens=args.max_tokens, min_new_tokens=args.min_tokens
    )
    print(decode_text(ensemble, args.prompt, cfg))
    return 0


def _cmd_eval(args) -> int:
    dataset = args.dataset or os.path.splitext(os.path.basename(args.task_path))[0]
    task = load_task(args.task_path, dataset=dataset, lang=Language(args.lang))
    cfg = GenerationConfig(
        shots=args.shots,
        max_new_tokens=args.max_tokens,
        min_new_tokens=args.min_tokens,
    )
    if cfg.shots > 0:
        if not args.dev_path:
            raise _UsageError("--dev is required when --shots > 0")
        dev = load_task(args.dev_path, dataset=f"{dataset}-dev", lang=Language(args.lang))
        exemplars = fixed_prefix_exemplars(dev.items, cfg.shots)
    else:
        exemplars = []

    if args.backend == "ngram":
        if not args.model_path:
            raise _UsageError("--model is required for the ngram backend")
        backend = ProviderBackend(IdentityEnsemble(load_ngram(args.model_path)))
    elif args.backend == "proxy":
        if not (args.base_path and args.tuned_path and args.raw_path):
            raise _UsageError("--base, --tuned and --raw are required for the proxy backend")
        backend = ProviderBackend(
            _load_ensemble(args.base_path, args.tuned_path, args.raw_path, args.alpha)
        )
    else:
        if not args.endpoint:
            raise _UsageError("--endpoint is required for the http backend")
        backend = HttpBackend(args.endpoint)

    style = PromptStyle(special_token=args.special_token)
    fragment = score_dataset(backend, task, cfg, exemplars, style=style, strict=args.strict)
    report = aggregate([fragment])
    payload = report.to_json(include_transcripts=not args.no_transcripts)
    payload["run"] = run_header(_params(args))
    _write_report(args.report_path, payload)
    logger.info("eval: %s accuracy %.4f", dataset, fragment.accuracy)
    return 0


def _cmd_train_ngram(args) -> int:
    def texts_of(paths) -> list[str]:
        texts: list[str] = []
        for path in paths:
            for record in read_jsonl_file(path):
                texts.append(record.body_text())
        return texts

    corpus = texts_of(args.in_paths)
    extra_vocab: set[str] = set()
    for text in texts_of(args.vocab_paths):
        extra_vocab.update(text)
    model = train_ngram(corpus, order=args.order, delta=args.delta,
                        vocabulary=sorted(extra_vocab))
    save_ngram(model, args.out_path)
    logger.info(
        "train-ngram: order %d over %d texts, vocabulary %d",
        args.order, len(corpus), len(model.vocabulary()),
    )
    return 0


_HANDLERS = {
    "filter": _cmd_filter,
    "screen": _cmd_screen,
    "chunk": _cmd_chunk,
    "rewrite": _cmd_rewrite,
    "schedule": _cmd_schedule,
    "avg": _cmd_avg,
    "proxy-decode": _cmd_proxy_decode,
    "eval": _cmd_eval,
    "train-ngram": _cmd_train_ngram,
}


def dispatch(argv: Sequence[str]) -> int:
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    head = next((a for a in argv if not a.startswith("-")), None)
    if head is not None and head not in COMMANDS:
        suggestion = difflib.get_close_matches(head, COMMANDS, n=1)
        hint = f" (did you mean {suggestion[0]!r}?)" if suggestion else ""
        print(f"medforge: unknown subcommand {head!r}{hint}", file=sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"medforge: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.config:
        try:
            overrides = _load_config_file(args.config)
        except OSError as exc:
            print(f"medforge: cannot read config: {exc}", file=sys.stderr)
            return 2
        parser.set_defaults(**overrides)
        try:
            args = parser.parse_args(argv)  # reparse: explicit flags beat config
        except _UsageError as exc:
            print(f"medforge: {exc}", file=sys.stderr)
            return 1
    if not args.command:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _HANDLERS[args.command](args)
    except (_UsageError, RecordError, ArchiveFormatError, ValueError) as exc:
        print(f"medforge: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"medforge: I/O error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()

"""``psl`` command line: one subcommand per pipeline stage.

Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 gateway error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from ._io import DataError, dumps, make_header, read_header, read_jsonl, write_jsonl
from .benchmarks import import_benchmark, load_mapping
from .config import AppConfig, ConfigError, load_config
from .context_engine import Indices, Mode, Query, answer, build_context, build_indices
from .corpus_dedup import deduplicate
from .evalkit import (
    SWEEP_KS,
    ablate,
    corpus_stats,
    evaluate,
    evaluate_predictions,
    human_summary,
    k_sweep,
    load_dataset,
    load_ratings,
)
from .go_graph import (
    CycleError,
    OboParseError,
    PruningConfigError,
    PruningParams,
    annotate_counts,
    group_proteins,
    group_records,
    parse_obo,
    prune,
)
from .llm_gateway import GatewayError, make_gateway
from .qa_forge import GenerationInterrupted, QAParseError, generate_corpus, load_corpus, parse_types
from .records import import_uniprot_tsv, load_proteins, write_proteins

log = logging.getLogger("psl")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_GATEWAY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# helpers ------------------------------------------------------------------


def _need(path: str | None, what: str) -> Path:
    if not path:
        raise UsageError(f"missing --{what}")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} path does not exist: {path}")
    return p


def _path(args, cfg: AppConfig, name: str, key: str | None = None) -> Path:
    value = getattr(args, name.replace("-", "_"), None) or cfg.paths.get(key or name)
    return _need(value, name)


def _header(cfg: AppConfig, **extra) -> dict:
    return make_header(cfg.hash(), cfg.seed, **extra)


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _gateway(cfg: AppConfig):
    return make_gateway(cfg.gateway, cfg.backend, cfg.mock_script, cfg.seed)


def _load_indices(path: Path) -> Indices:
    header = read_header(path) or {}
    if header.get("kind") == "index":
        rows = read_jsonl(path)
        return Indices.from_dict(rows[0])
    return build_indices(load_corpus(path))


def _parse_ks(text: str) -> list[int]:
    ks: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            ks.extend(range(int(lo), int(hi) + 1))
        elif part:
            ks.append(int(part))
    if not ks or min(ks) < 1:
        raise UsageError(f"bad k list {text!r}")
    return ks


# subcommands ---------------------------------------------------------------


def cmd_import(args, cfg: AppConfig) -> int:
    src = _need(args.input, "in")
    if args.format == "uniprot-tsv":
        with open(src, encoding="utf-8", newline="") as fh:
            proteins = import_uniprot_tsv(fh)
        n = write_proteins(args.out, proteins, _header(cfg, kind="proteins"))
        log.info("imported %d proteins", n)
    else:
        if not args.mapping:
            raise UsageError("--mapping is required for --format benchmark")
        items = import_benchmark(src, load_mapping(args.mapping))
        rows = (
            {k: v for k, v in vars(x).items() if v is not None} for x in sorted(items, key=lambda x: x.id)
        )
        n = write_jsonl(args.out, rows, _header(cfg, kind="dataset"))
        log.info("imported %d benchmark items", n)
    return EXIT_OK


def _pruning_params(cfg: AppConfig, dag) -> PruningParams:
    s = cfg.pruning
    total = s.total_count or max(dag.report.n_annotated, 1)
    try:
        return PruningParams(total_count=total, lambda_=s.lambda_, beta=s.beta, tau0=s.tau0, alpha=s.alpha)
    except ValueError as exc:
        raise ConfigError(f"[pruning] {exc}") from None


def cmd_prune_dag(args, cfg: AppConfig) -> int:
    with open(_path(args, cfg, "obo"), encoding="utf-8") as fh:
        dag = parse_obo(fh)
    proteins = load_proteins(_path(args, cfg, "proteins"))
    counted = annotate_counts(dag, proteins)
    params = _pruning_params(cfg, counted)
    rules = prune(counted, params)
    groups, ungrouped = group_proteins(rules, counted, proteins)
    rows = group_records(rules, counted, groups)
    write_jsonl(args.out, rows, _header(cfg, kind="groups", total_count=params.total_count))
    if counted.report.unresolved:
        log.warning("%d unresolved GO annotations", sum(counted.report.unresolved.values()))
    log.info("retained %d grouping nodes; %d proteins ungrouped", len(rows), len(ungrouped))
    if args.report:
        _write(
            args.report,
            dumps(
                {
                    "unresolved": dict(sorted(counted.report.unresolved.items())),
                    "ungrouped": [p.accession for p in ungrouped],
                    "total_count": params.total_count,
                }
            )
            + "\n",
        )
    return EXIT_OK


def cmd_dedup(args, cfg: AppConfig) -> int:
    with open(_path(args, cfg, "obo"), encoding="utf-8") as fh:
        dag = parse_obo(fh)
    proteins = {p.accession: p for p in load_proteins(_path(args, cfg, "proteins"))}
    groups = {}
    for row in read_jsonl(_path(args, cfg, "groups")):
        try:
            groups[row["term_id"]] = [proteins[a] for a in row["protein_ids"]]
        except KeyError as exc:
            raise DataError(f"groups file references unknown protein/field {exc.args[0]}") from None
    s = cfg.dedup
    result = deduplicate(
        groups, dag, s.cluster_settings(), per_group_target=s.per_group_target, ic_base=s.ic_base, workers=s.workers
    )
    header = _header(cfg, kind="proteins")
    write_proteins(args.out, result.proteins, header)
    prov = args.provenance or str(Path(args.out).with_suffix("")) + ".provenance.jsonl"
    write_jsonl(prov, result.provenance, _header(cfg, kind="provenance"))
    log.info("kept %d of %d proteins", len(result.proteins), len(proteins))
    return EXIT_OK


def cmd_gen_qa(args, cfg: AppConfig) -> int:
    proteins = load_proteins(_path(args, cfg, "proteins"))
    types = parse_types(args.types or cfg.qa.types)
    gateway = _gateway(cfg)
    rejects_path = args.rejects or str(Path(args.out).with_suffix("")) + ".rejects.jsonl"
    header = _header(cfg, kind="qa")
    try:
        result = generate_corpus(
            proteins,
            types,
            gateway,
            retries=cfg.qa.retries,
            checkpoint=args.resume,
            max_inflight=cfg.gateway.max_inflight,
            prompts_dir=args.prompts,
        )
        code = EXIT_OK
    except GenerationInterrupted as exc:
        log.error("%s; partial output written, resume with --resume", exc)
        result = exc.partial
        code = EXIT_GATEWAY
    write_jsonl(args.out, (x.to_dict() for x in result.instances), header)
    write_jsonl(rejects_path, (r.to_dict() for r in result.rejects), _header(cfg, kind="rejects"))
    log.info("generated %d instances %s; %d rejects", len(result.instances), result.type_counts(), len(result.rejects))
    return code


def cmd_build_index(args, cfg: AppConfig) -> int:
    corpus = load_corpus(_path(args, cfg, "corpus"))
    idx = build_indices(corpus, kmer_k=cfg.retrieval.seq_kmer_k)
    write_jsonl(args.out, [idx.to_dict()], _header(cfg, kind="index"))
    log.info("indexed %d instances, %d proteins", len(idx.instances), len(idx.seq_index.sequences))
    return EXIT_OK


def cmd_query(args, cfg: AppConfig) -> int:
    indices = _load_indices(_path(args, cfg, "corpus"))
    if args.seq_file:
        seq = "".join(
            line.strip() for line in _need(args.seq_file, "seq-file").read_text().splitlines() if not line.startswith(">")
        )
    elif args.seq:
        seq = args.seq
    else:
        raise UsageError("one of --seq or --seq-file is required")
    query = Query(seq.upper(), args.question, args.accession)
    if args.dry_run:
        bundle = build_context(query, indices, cfg.retrieval)
        print(bundle.prompt)
        audit = {"answer": None, "bundle": bundle.to_dict()}
    else:
        res = answer(query, indices, cfg.retrieval, _gateway(cfg))
        print(res.text)
        audit = {"answer": res.text, "bundle": res.bundle.to_dict()}
    if args.audit:
        _write(args.audit, dumps({"__header__": _header(cfg, kind="audit"), **audit}) + "\n")
    return EXIT_OK


def _write_report(report, args, cfg: AppConfig, kind: str) -> None:
    header = _header(cfg, kind=kind)
    _write(args.out, report.to_tsv(dumps(header)))
    if args.json:
        _write(args.json, report.to_json(header))
    if getattr(args, "audit", None):
        write_jsonl(args.audit, report.audits, _header(cfg, kind="audit"))


def _eval_inputs(args, cfg: AppConfig):
    path = _path(args, cfg, "dataset")
    args.name = args.name or path.stem
    dataset = load_dataset(path)
    if not dataset:
        raise DataError("empty dataset")
    indices = _load_indices(_path(args, cfg, "corpus"))
    return dataset, indices


def cmd_eval(args, cfg: AppConfig) -> int:
    if args.predictions:
        path = _path(args, cfg, "dataset")
        args.name = args.name or path.stem
        dataset = load_dataset(path)
        preds = {str(r["id"]): str(r.get("prediction", "")) for r in read_jsonl(_need(args.predictions, "predictions"))}
        report = evaluate_predictions(dataset, preds, name=args.name, model=cfg.gateway.model)
    else:
        dataset, indices = _eval_inputs(args, cfg)
        report = evaluate(dataset, indices, cfg.retrieval, _gateway(cfg), name=args.name, k=args.k)
    if args.ratings:
        report.human = human_summary(load_ratings(_need(args.ratings, "ratings")))
    _write_report(report, args, cfg, "eval")
    return EXIT_OK


def cmd_sweep_k(args, cfg: AppConfig) -> int:
    dataset, indices = _eval_inputs(args, cfg)
    ks = _parse_ks(args.ks) if args.ks else list(SWEEP_KS)
    report = k_sweep(dataset, ks, indices, cfg.retrieval, _gateway(cfg), name=args.name)
    _write_report(report, args, cfg, "sweep-k")
    return EXIT_OK


def cmd_ablate(args, cfg: AppConfig) -> int:
    dataset, indices = _eval_inputs(args, cfg)
    modes = [Mode.parse(m) for m in args.modes.split(",") if m.strip()]
    report = ablate(dataset, modes, indices, cfg.retrieval, _gateway(cfg), name=args.name, k=args.k)
    _write_report(report, args, cfg, "ablate")
    return EXIT_OK


def cmd_stats(args, cfg: AppConfig) -> int:
    corpus = load_corpus(_path(args, cfg, "corpus"))
    proteins = load_proteins(args.proteins) if args.proteins else []
    if args.proteins:
        _need(args.proteins, "proteins")
    stats = corpus_stats(corpus, proteins)
    text = json.dumps({"__header__": _header(cfg, kind="stats"), **stats}, indent=2, sort_keys=True) + "\n"
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# parser -------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file; flags override its values")
    p.add_argument("--seed", type=int, help="run seed recorded in every output header")
    p.add_argument("-v", "--verbose", action="store_true")


def _gateway_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("gateway")
    g.add_argument("--backend", choices=["http", "mock"])
    g.add_argument("--mock-script", help="JSON script for the mock backend")
    g.add_argument("--model")
    g.add_argument("--base-url")
    g.add_argument("--temperature", type=float)
    g.add_argument("--max-tokens", type=int)
    g.add_argument("--max-inflight", type=int)


def _retrieval_flags(p: argparse.ArgumentParser, k_default_help: str = "") -> None:
    p.add_argument("--mode", help="dual | seq | qa | zero")
    p.add_argument("--k", type=int, help="exemplar count" + k_default_help)
    p.add_argument("--candidate-m", type=int)
    p.add_argument("--rrf-k", type=int)
    p.add_argument("--token-budget", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="psl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"psl {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("import", help="UniProt TSV -> proteins JSONL, or benchmark -> dataset JSONL")
    p.add_argument("--format", choices=["uniprot-tsv", "benchmark"], default="uniprot-tsv")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--mapping", help="benchmark preset name or mapping JSON path")
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("prune-dag", help="prune the GO DAG into functional groups")
    p.add_argument("--obo")
    p.add_argument("--proteins")
    p.add_argument("--lambda", dest="lambda_", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--tau0", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--total-count", type=int, help="default: proteins with a resolvable annotation")
    p.add_argument("--report", help="JSON with unresolved annotations and ungrouped proteins")
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_prune_dag)

    p = sub.add_parser("dedup", help="sequence clustering + IC sampling per group")
    p.add_argument("--groups")
    p.add_argument("--proteins")
    p.add_argument("--obo")
    p.add_argument("--identity", type=float)
    p.add_argument("--per-group-target", type=int)
    p.add_argument("--no-prefilter", action="store_true")
    p.add_argument("--workers", type=int)
    p.add_argument("--provenance")
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_dedup)

    p = sub.add_parser("gen-qa", help="generate the four QA types through the gateway")
    p.add_argument("--proteins")
    p.add_argument("--types", help="comma list of attr,know,desc,tf")
    p.add_argument("--retries", type=int)
    p.add_argument("--resume", help="checkpoint file (created if missing)")
    p.add_argument("--rejects")
    p.add_argument("--prompts", help="directory with replacement prompt templates")
    p.add_argument("--out", required=True)
    _common(p)
    _gateway_flags(p)
    p.set_defaults(func=cmd_gen_qa)

    p = sub.add_parser("build-index", help="index a QA corpus for retrieval")
    p.add_argument("--corpus")
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("query", help="answer one protein question with adaptive context")
    p.add_argument("--corpus", help="index file or QA corpus JSONL")
    p.add_argument("--seq")
    p.add_argument("--seq-file")
    p.add_argument("--question", required=True)
    p.add_argument("--accession", help="query protein accession, excluded from exemplars")
    p.add_argument("--dry-run", action="store_true", help="print the prompt, do not call the model")
    p.add_argument("--audit", help="write the context bundle audit JSON here")
    _retrieval_flags(p)
    _common(p)
    _gateway_flags(p)
    p.set_defaults(func=cmd_query)

    for name, func, help_ in (
        ("eval", cmd_eval, "zero-shot vs adaptive context ROUGE-L report"),
        ("sweep-k", cmd_sweep_k, "ROUGE-L across exemplar counts"),
        ("ablate", cmd_ablate, "ROUGE-L across retrieval modes"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--dataset")
        p.add_argument("--corpus", help="index file or QA corpus JSONL")
        p.add_argument("--name", default="", help="dataset tag for report rows (default: dataset file stem)")
        p.add_argument("--json", help="also write the report as JSON")
        p.add_argument("--audit", help="JSONL of per-item bundles and predictions")
        p.add_argument("--out", required=True, help="TSV report")
        _retrieval_flags(p, "; default per task: 11 description, 4 QA")
        if name == "eval":
            p.add_argument("--predictions", help="score precomputed predictions JSONL {id, prediction}")
            p.add_argument("--ratings", help="human ratings CSV item_id,rater_id,condition,score")
        if name == "sweep-k":
            p.add_argument("--ks", help="e.g. 1-12 or 1,2,4")
        if name == "ablate":
            p.add_argument("--modes", default="zero,dual,seq,qa")
        _common(p)
        _gateway_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("stats", help="corpus composition statistics")
    p.add_argument("--corpus")
    p.add_argument("--proteins")
    p.add_argument("--out")
    _common(p)
    p.set_defaults(func=cmd_stats)
    return parser


def _overrides(args) -> dict:
    a = vars(args)
    ov = {
        "paths": {},
        "pruning": {k: a.get(f) for k, f in (("lambda", "lambda_"), ("beta", "beta"), ("tau0", "tau0"), ("alpha", "alpha"), ("total_count", "total_count"))},
        "dedup": {
            "identity": a.get("identity"),
            "per_group_target": a.get("per_group_target"),
            "workers": a.get("workers"),
            "prefilter": False if a.get("no_prefilter") else None,
        },
        "retrieval": {
            "mode": a.get("mode"),
            "k": a.get("k"),
            "candidate_m": a.get("candidate_m"),
            "rrf_k": a.get("rrf_k"),
            "token_budget": a.get("token_budget"),
        },
        "gateway": {
            "backend": a.get("backend"),
            "mock_script": a.get("mock_script"),
            "model": a.get("model"),
            "base_url": a.get("base_url"),
            "temperature": a.get("temperature"),
            "max_tokens": a.get("max_tokens"),
            "max_inflight": a.get("max_inflight"),
            "verbose": True if a.get("verbose") else None,
        },
        "qa": {"retries": a.get("retries")},
        "run": {"seed": a.get("seed")},
    }
    return ov


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args.config, _overrides(args))
        return args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"psl {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GatewayError as exc:
        print(f"psl {args.command}: gateway error: {exc}", file=sys.stderr)
        return EXIT_GATEWAY
    except (DataError, OboParseError, CycleError, PruningConfigError, QAParseError, ValueError, KeyError) as exc:
        print(f"psl {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: kg-load, elicit, generate, analyze.

Configuration comes from an optional JSON file; flags win over config
values. Logs go to stderr, data to files. Exit codes: 0 success, 2
configuration error, 3 data/validation error, 4 transport exhaustion.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import core
from .core import PromptMode, TopicSource, load_few_shot, load_task_specs
from .elicit import (
    DEFAULT_TOPIC_TARGET,
    elicit_styles,
    elicit_topics,
    load_candidate_set,
    manual_styles,
    save_candidate_set,
)
from .errors import ConfigError, DataError, KitgenError, TransportError
from .genpipe import GenerationAborted, RunConfig, run_generation
from .kg import ColumnMap, build_lexicon, load_kg
from .llmclient import GenerationParams, HttpBackend, MockBackend, PriceTable
from .promptkit import TemplatePack
from .quality import (
    QualityReport,
    avg_pairwise_similarity,
    cmd as cmd_metric,
    embed_from_file,
    entity_coverage,
    entity_frequency,
    write_cmd_csv,
    write_frequency_csv,
)

logger = logging.getLogger("kitgen")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRANSPORT = 4


class _JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        return json.dumps(
            {"level": record.levelname, "name": record.name, "message": record.getMessage()}
        )


def _setup_logging(verbose: bool, json_logs: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(
        _JsonFormatter() if json_logs else logging.Formatter("%(levelname)s %(name)s: %(message)s")
    )
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with Path(path).open("r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc


def _setting(args_value, config: dict, key: str, default=None):
    if args_value is not None:
        return args_value
    return config.get(key, default)


def _require(value, what: str):
    if value is None:
        raise ConfigError(f"missing required setting: {what}")
    return value


def _column_map(args_columns: str | None, config: dict) -> ColumnMap:
    raw = args_columns if args_columns is not None else config.get("kg_columns")
    if raw is None:
        return ColumnMap()
    if isinstance(raw, str):
        try:
            raw = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--columns must be JSON: {exc}") from exc
    return ColumnMap.from_dict(raw)


def _make_backend(args, config: dict):
    backend = _setting(args.backend, config, "backend", "http")
    audit_dir = _setting(getattr(args, "audit_dir", None), config, "audit_dir")
    if backend == "mock":
        seed = _setting(getattr(args, "seed", None), config, "seed", 0)
        return MockBackend(seed=int(seed), audit_dir=audit_dir)
    base_url = _require(_setting(None, config, "base_url"), "base_url (config)")
    return HttpBackend(
        base_url=base_url,
        api_key_env=config.get("api_key_env", "OPENAI_API_KEY"),
        timeout_s=float(config.get("timeout_s", 60.0)),
        max_in_flight=int(config.get("max_in_flight", 4)),
        audit_dir=audit_dir,
    )


def _make_params(args, config: dict) -> GenerationParams:
    return GenerationParams(
        model_id=_setting(getattr(args, "model", None), config, "model_id", "mock-model"),
        temperature=float(_setting(None, config, "temperature", 1.0)),
        top_p=float(_setting(None, config, "top_p", 1.0)),
        max_output_tokens=int(_setting(None, config, "max_output_tokens", 256)),
    )


def _template_pack(args, config: dict) -> TemplatePack:
    directory = _setting(getattr(args, "template_pack", None), config, "template_pack")
    return TemplatePack.load(directory)


def _load_task(args, config: dict):
    specs_path = _require(
        _setting(getattr(args, "task_specs", None), config, "task_specs"), "task specs file"
    )
    specs = load_task_specs(specs_path)
    task_id = _require(getattr(args, "task", None), "--task")
    if task_id not in specs:
        raise DataError(f"unknown task {task_id!r}; available: {sorted(specs)}")
    return specs[task_id]


def cmd_kg_load(args, config: dict) -> int:
    kg = load_kg(
        _require(_setting(args.nodes, config, "kg_nodes"), "--nodes"),
        _require(_setting(args.edges, config, "kg_edges"), "--edges"),
        _column_map(args.columns, config),
    )
    print(
        f"nodes={len(kg.nodes)} edges={len(kg.edges)}"
        f" dropped_edges={kg.dropped_edges} duplicate_nodes={kg.duplicate_nodes}"
    )
    print(f"types: {', '.join(kg.entity_types)}")
    if args.out:
        payload = {
            "nodes": [
                {"id": n.id, "name": n.name, "type": n.type}
                for n in sorted(kg.nodes.values(), key=lambda n: n.id)
            ],
            "edges": [
                {"head": e.head_id, "relation": e.relation, "tail": e.tail_id}
                for e in kg.edges
            ],
            "dropped_edges": kg.dropped_edges,
        }
        Path(args.out).write_text(
            json.dumps(payload, ensure_ascii=False, indent=2), encoding="utf-8"
        )
        print(f"index written to {args.out}")
    if args.lexicon_out:
        types = args.lexicon_types.split(",") if args.lexicon_types else kg.entity_types
        lexicon = build_lexicon(kg, [t.strip() for t in types])
        lexicon.write_tsv(args.lexicon_out)
        print(f"lexicon ({len(lexicon)} entries) written to {args.lexicon_out}")
    return EXIT_OK


def _kg_topic_candidates(args, config: dict, entity_type: str, count: int | None):
    from .elicit import CandidateKind, CandidateSet
    from .kg import normalize_surface

    kg = load_kg(
        _require(_setting(args.nodes, config, "kg_nodes"), "--nodes"),
        _require(_setting(args.edges, config, "kg_edges"), "--edges"),
        _column_map(args.columns, config),
    )
    node_ids = kg.type_index.get(entity_type)
    if not node_ids:
        raise DataError(
            f"unknown entity type {entity_type!r}; available types: {kg.entity_types}"
        )
    items: list[str] = []
    seen: set[str] = set()
    for node_id in node_ids:
        name = kg.nodes[node_id].name
        key = normalize_surface(name)
        if key in seen:
            continue
        seen.add(key)
        items.append(name)
        if count is not None and len(items) >= count:
            break
    return CandidateSet(kind=CandidateKind.TOPICS, items=items, entity_type=entity_type)


def cmd_elicit(args, config: dict) -> int:
    pack = _template_pack(args, config)
    if args.what == "topics":
        entity_type = _require(args.entity_type, "--entity-type")
        if args.source == "kg":
            cset = _kg_topic_candidates(args, config, entity_type, args.count)
        else:
            cset = elicit_topics(
                _make_backend(args, config),
                entity_type,
                target_count=int(
                    _setting(args.count, config, "topic_target", DEFAULT_TOPIC_TARGET)
                ),
                params=_make_params(args, config),
                pack=pack,
                archive_dir=_setting(args.archive_dir, config, "archive_dir"),
            )
    else:
        task = _load_task(args, config)
        demos = load_few_shot(
            _require(_setting(args.few_shot, config, "few_shot"), "--few-shot")
        )
        cset = elicit_styles(
            _make_backend(args, config),
            task,
            demos,
            params=_make_params(args, config),
            pack=pack,
            archive_dir=_setting(args.archive_dir, config, "archive_dir"),
        )
    out = _require(args.out, "--out")
    save_candidate_set(cset, out)
    shortfall = f" (shortfall {cset.shortfall})" if cset.shortfall else ""
    print(f"{len(cset)} {cset.kind.value.lower()} written to {out}{shortfall}")
    return EXIT_OK


def _topic_source_for(args, config: dict, task, mode: PromptMode, source: TopicSource):
    if mode != PromptMode.KNOWLEDGE_INFUSED:
        return None
    if source == TopicSource.KG:
        return load_kg(
            _require(_setting(args.nodes, config, "kg_nodes"), "--nodes"),
            _require(_setting(args.edges, config, "kg_edges"), "--edges"),
            _column_map(args.columns, config),
        )
    paths = _setting(args.topics, config, "topic_sets")
    if not paths:
        raise ConfigError("LLM topic source requires --topics file(s)")
    if isinstance(paths, str):
        paths = paths.split(",")
    sets = {}
    for path in paths:
        cset = load_candidate_set(path.strip())
        key = cset.entity_type or task.topic_entity_types[0]
        sets[key] = cset
    return sets


def cmd_generate(args, config: dict) -> int:
    task = _load_task(args, config)
    mode = PromptMode(_setting(args.mode, config, "mode", "KnowledgeInfused"))
    source = TopicSource(_setting(args.topic_source, config, "topic_source", "KG"))
    seed = _require(_setting(args.seed, config, "seed"), "--seed")
    run_config = RunConfig(
        task_id=task.id,
        params=_make_params(args, config),
        seed=int(seed),
        n_total=int(_setting(args.n, config, "n_total", 5000)),
        shots_per_label=int(_setting(None, config, "shots_per_label", 5)),
        mode=mode,
        topic_source=source,
        max_regen_attempts=int(_setting(None, config, "max_regen_attempts", 3)),
        max_in_flight=int(_setting(None, config, "max_in_flight", 4)),
    )
    client = _make_backend(args, config)
    pack = _template_pack(args, config)
    topic_source = _topic_source_for(args, config, task, mode, source)
    styles = None
    if mode == PromptMode.KNOWLEDGE_INFUSED:
        styles_path = _setting(args.styles, config, "styles")
        manual = config.get("manual_styles")
        if styles_path:
            styles = load_candidate_set(styles_path)
        elif manual:
            styles = manual_styles(manual, task_id=task.id)
        else:
            raise ConfigError("knowledge-infused mode requires --styles or manual_styles config")
    demos = None
    if mode == PromptMode.DEMO:
        demos = load_few_shot(_require(_setting(args.few_shot, config, "few_shot"), "--few-shot"))
    price_table = None
    price_path = _setting(args.price_table, config, "price_table")
    if price_path:
        price_table = PriceTable.load(price_path)

    out_dir = Path(_setting(args.out, config, "output_dir", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset_path = out_dir / f"{task.id}.jsonl"
    manifest_path = out_dir / f"{task.id}.manifest.json"
    try:
        records, manifest = run_generation(
            run_config,
            task,
            topic_source,
            styles,
            client,
            demos=demos,
            pack=pack,
            price_table=price_table,
            out_path=dataset_path,
            manifest_path=manifest_path,
        )
    except GenerationAborted as exc:
        logger.error("run aborted: %s", exc)
        print(f"partial dataset ({len(exc.records)} records) flushed to {dataset_path}")
        return EXIT_TRANSPORT
    print(
        f"wrote {len(records)} records to {dataset_path}"
        f" (requested {manifest.requested}, rejected {manifest.rejected_final}, seed {manifest.seed})"
    )
    print(f"manifest: {manifest_path}")
    return EXIT_OK


def cmd_analyze(args, config: dict) -> int:
    records = core.read_dataset(_require(args.dataset, "--dataset"))
    if not records:
        raise DataError("dataset is empty")
    reference = core.read_dataset(args.reference) if args.reference else None

    cmd_result = None
    aps_value = None
    if args.embeddings:
        dataset_set = embed_from_file(records, args.embeddings)
        aps_value = avg_pairwise_similarity(dataset_set)
        if reference is not None:
            reference_set = embed_from_file(reference, args.embeddings)
            cmd_result = cmd_metric(dataset_set, reference_set, order=args.cmd_order)

    coverage = None
    frequency = []
    if args.lexicon:
        from .kg import EntityLexicon

        lexicon = EntityLexicon.read_tsv(args.lexicon)
        coverage = entity_coverage(records, lexicon)
        if coverage.total_matches:
            frequency = entity_frequency(coverage)

    report = QualityReport(
        cmd=cmd_result,
        aps=aps_value,
        coverage=coverage,
        frequency=frequency,
        dataset_size=len(records),
        reference_size=len(reference) if reference is not None else None,
        config={"cmd_order": args.cmd_order, "dataset": args.dataset, "reference": args.reference},
    )
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "quality_report.json"
    report.save(report_path)
    print(f"report: {report_path}")
    if cmd_result is not None:
        write_cmd_csv(cmd_result, out_dir / "cmd_terms.csv")
        print(f"cmd total={cmd_result.total:.6f} (order {cmd_result.order})")
    if aps_value is not None:
        print(f"aps={aps_value:.6f}")
    if coverage is not None:
        print(
            f"entity coverage: {coverage.distinct_matched}/{coverage.lexicon_size}"
            f" distinct ({coverage.fraction_of_lexicon:.3f})"
        )
    if frequency:
        write_frequency_csv(frequency, out_dir / "entity_frequency.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kitgen",
        description="Knowledge-infused synthetic text dataset generation and auditing.",
    )
    parser.add_argument("--config", help="JSON configuration file (flags win over config)")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("--log-json", action="store_true", help="machine-readable stderr logs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("kg-load", help="load a knowledge graph and report/persist its indices")
    p.add_argument("--nodes", help="node file (TSV/CSV with header)")
    p.add_argument("--edges", help="edge file (TSV/CSV with header)")
    p.add_argument("--columns", help="JSON column mapping (id/name/type/head/relation/tail)")
    p.add_argument("--out", help="write a normalized JSON index here")
    p.add_argument("--lexicon-out", help="write a surface_form<TAB>node_id lexicon here")
    p.add_argument("--lexicon-types", help="comma-separated entity types for the lexicon")
    p.set_defaults(func=cmd_kg_load)

    p = sub.add_parser("elicit", help="collect candidate topics or styles")
    p.add_argument(
        "--what", choices=("topics", "styles"), required=True, help="what to elicit"
    )
    p.add_argument(
        "--source", choices=("llm", "kg"), default="llm",
        help="topic source: query the LLM or extract typed nodes from the KG",
    )
    p.add_argument("--entity-type", help="entity type for topic elicitation")
    p.add_argument("--count", type=int, help="distinct topics to collect (default 300 for LLM)")
    p.add_argument("--nodes", help="KG node file (kg source)")
    p.add_argument("--edges", help="KG edge file (kg source)")
    p.add_argument("--columns", help="JSON column mapping (kg source)")
    p.add_argument("--task", help="task id (style elicitation)")
    p.add_argument("--task-specs", help="task spec JSON file")
    p.add_argument("--few-shot", help="few-shot JSON file (style elicitation)")
    p.add_argument("--backend", choices=("http", "mock"), help="transport backend")
    p.add_argument("--model", help="model id")
    p.add_argument("--seed", type=int, help="seed for the mock backend")
    p.add_argument("--template-pack", help="directory overriding the built-in templates")
    p.add_argument("--archive-dir", help="directory for raw reply archives")
    p.add_argument("--out", required=True, help="candidate set JSONL output path")
    p.set_defaults(func=cmd_elicit)

    p = sub.add_parser("generate", help="synthesize a labeled JSONL dataset")
    p.add_argument("--task", help="task id")
    p.add_argument("--task-specs", help="task spec JSON file")
    p.add_argument("--n", type=int, help="records to generate (default 5000)")
    p.add_argument("--mode", choices=[m.value for m in PromptMode], help="prompt mode")
    p.add_argument("--topic-source", choices=[s.value for s in TopicSource], help="where topics come from")
    p.add_argument("--seed", type=int, help="run seed (required here or in config)")
    p.add_argument("--backend", choices=("http", "mock"), help="transport backend")
    p.add_argument("--model", help="model id")
    p.add_argument("--nodes", help="KG node file (KG topic source)")
    p.add_argument("--edges", help="KG edge file (KG topic source)")
    p.add_argument("--columns", help="JSON column mapping")
    p.add_argument("--topics", help="comma-separated candidate-set files (LLM topic source)")
    p.add_argument("--styles", help="style candidate-set file")
    p.add_argument("--few-shot", help="few-shot JSON file (demo mode)")
    p.add_argument("--price-table", help="price table JSON for cost accounting")
    p.add_argument("--template-pack", help="directory overriding the built-in templates")
    p.add_argument("--audit-dir", help="request/response archive directory")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("analyze", help="compute quality metrics for a dataset")
    p.add_argument("--dataset", required=True, help="JSONL dataset to analyze")
    p.add_argument("--reference", help="reference JSONL dataset for CMD")
    p.add_argument("--embeddings", help="id -> vector table (TSV or JSONL)")
    p.add_argument("--lexicon", help="lexicon TSV for coverage/frequency")
    p.add_argument("--cmd-order", type=int, default=5, help="CMD moment order (default 5)")
    p.add_argument("--out", help="output directory for the report and CSVs")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose, args.log_json)
    try:
        config = _load_config(args.config)
        return args.func(args, config)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except TransportError as exc:
        logger.error("transport error: %s", exc)
        return EXIT_TRANSPORT
    except (DataError, KitgenError, OSError, json.JSONDecodeError) as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

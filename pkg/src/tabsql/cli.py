"""Command-line front end: data checks, stage training, scoring, the grid.

Commands compose through a model directory: `induce-grammar` and the three
`train-*` commands each drop their artifact there and fold their settings
into `config.cfg`, so a later `predict` or `evaluate` sees exactly what
training saw. Every report prints as text; `--json PATH` writes the same
report as JSON, with `-` meaning stdout.
"""
from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from pathlib import Path
from typing import Callable, Optional, Sequence

from .dataset import DatasetRecord, TableData, load_dataset, load_tables
from .decoder import train_nsp
from .errors import MissingFile, TabsqlError
from .grammar import induce_grammar, load_grammar, save_grammar
from .linker import train_nel
from .ner import Gazetteer, train_ner
from .pipeline import (
    Pipeline,
    PipelineConfig,
    build_link_groups,
    build_ner_examples,
    build_nsp_examples,
    evaluate,
    format_grid_report,
    prepare_records,
    run_experiment_grid,
)
from .sql import parse_sql, serialize
from .synth import DEFAULT_SEED, make_corpus


def _emit_json(obj: dict, target: Optional[str]) -> None:
    if target is None:
        return
    text = json.dumps(obj, indent=2, sort_keys=True)
    if target == "-":
        print(text)
    else:
        Path(target).write_text(text + "\n", encoding="utf-8")


def _load_corpus(args) -> tuple[list[DatasetRecord], dict[str, TableData]]:
    tables_dir = args.tables or str(Path(args.data) / "tables")
    return load_dataset(args.data, args.split), load_tables(tables_dir)


def _resolve_config(args, model_dir: Optional[Path]) -> PipelineConfig:
    """Config file if given, else the model directory's saved one, else
    defaults; then flag and key=value overrides on top."""
    if getattr(args, "config", None):
        config = PipelineConfig.from_file(args.config)
    elif model_dir is not None and (model_dir / "config.cfg").is_file():
        config = PipelineConfig.from_file(model_dir / "config.cfg")
    else:
        config = PipelineConfig()
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "no_schema", False):
        overrides.append("use_schema=false")
    if getattr(args, "no_cell", False):
        overrides.append("use_cell=false")
    if getattr(args, "no_gazetteer", False):
        overrides.append("use_gazetteer_filter=false")
    return config.with_overrides(overrides)


def _save_stage_config(config: PipelineConfig, model_dir: Path) -> None:
    model_dir.mkdir(parents=True, exist_ok=True)
    config.to_file(model_dir / "config.cfg")


def _gazetteer_cache(config: PipelineConfig
                     ) -> Callable[[TableData], Gazetteer]:
    cache: dict[str, Gazetteer] = {}

    def build(table: TableData) -> Gazetteer:
        if table.table_id not in cache:
            cache[table.table_id] = Gazetteer.build(
                table, use_schema=config.use_schema,
                use_cell=config.use_cell)
        return cache[table.table_id]

    return build


def _usable(prepared):
    return [p for p in prepared if p.tree is not None]


def _loss_span(curve: Sequence[float]) -> str:
    return f"{curve[0]:.4f} -> {curve[-1]:.4f}" if curve else "n/a"


# --------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    records, tables = _load_corpus(args)
    referenced = {r.table_id for r in records}
    missing = sorted(referenced - set(tables))
    if missing:
        raise MissingFile(f"tables referenced but absent: {missing}")
    unsupported: Counter[str] = Counter()
    syntax_errors = 0
    in_subset = 0
    round_trip_failures = []
    for rec in records:
        try:
            tree = parse_sql(rec.gold_sql_tokens)
        except TabsqlError as exc:
            construct = getattr(exc, "construct", None)
            if construct is not None:
                unsupported[construct] += 1
            else:
                syntax_errors += 1
            continue
        in_subset += 1
        if parse_sql(serialize(tree)) != tree:
            round_trip_failures.append(rec.record_id)
    report = {
        "split": args.split,
        "records": len(records),
        "tables_referenced": len(referenced),
        "in_subset": in_subset,
        "out_of_subset": dict(sorted(unsupported.items())),
        "syntax_errors": syntax_errors,
        "round_trip_failures": round_trip_failures,
    }
    print(f"split {args.split}: {len(records)} records over "
          f"{len(referenced)} tables")
    print(f"  gold SQL in subset:  {in_subset}")
    for construct, n in sorted(unsupported.items()):
        print(f"  out of subset ({construct}): {n}")
    print(f"  syntax errors:       {syntax_errors}")
    print(f"  round-trip failures: {len(round_trip_failures)}")
    _emit_json(report, args.json)
    return 1 if round_trip_failures else 0


def cmd_derive_annotations(args) -> int:
    records, tables = _load_corpus(args)
    prepared = prepare_records(records, tables)
    usable = _usable(prepared)
    label_counts: Counter[str] = Counter()
    issue_reasons: Counter[str] = Counter()
    skip_reasons: Counter[str] = Counter()
    rows = []
    for p in prepared:
        if p.tree is None:
            skip_reasons[p.reason or "unknown"] += 1
            continue
        for s in p.spans:
            label_counts[s.label.name] += 1
        for issue in p.issues:
            issue_reasons[issue.reason] += 1
        rows.append({
            "id": p.record.record_id,
            "spans": [[s.start, s.end, s.label.name, s.link_target]
                      for s in p.spans],
            "issues": [i.reason for i in p.issues],
        })
    report = {
        "split": args.split,
        "records": len(prepared),
        "annotated": len(usable),
        "skipped": dict(sorted(skip_reasons.items())),
        "spans_by_label": dict(sorted(label_counts.items())),
        "issues_by_reason": dict(sorted(issue_reasons.items())),
        "rows": rows,
    }
    print(f"derived spans for {len(usable)}/{len(prepared)} records")
    for label, n in sorted(label_counts.items()):
        print(f"  {label:<16} {n}")
    if skip_reasons:
        print("skipped records:")
        for reason, n in sorted(skip_reasons.items()):
            print(f"  {reason}: {n}")
    n_issues = sum(issue_reasons.values())
    print(f"annotation issues: {n_issues}")
    for reason, n in sorted(issue_reasons.items()):
        print(f"  {reason}: {n}")
    _emit_json(report, args.json)
    return 0


def cmd_induce_grammar(args) -> int:
    records, tables = _load_corpus(args)
    usable = _usable(prepare_records(records, tables))
    grammar = induce_grammar(p.tree for p in usable)
    model_dir = Path(args.model)
    model_dir.mkdir(parents=True, exist_ok=True)
    out = model_dir / "grammar.txt"
    save_grammar(grammar, out)
    print(f"induced {len(grammar.rules)} rules from {len(usable)} trees "
          f"-> {out}")
    _emit_json({"rules": len(grammar.rules), "trees": len(usable),
                "path": str(out)}, args.json)
    return 0


def cmd_train_ner(args) -> int:
    model_dir = Path(args.model)
    config = _resolve_config(args, model_dir)
    records, tables = _load_corpus(args)
    usable = _usable(prepare_records(records, tables))
    if config.train_cap:
        usable = usable[:config.train_cap]
    examples = build_ner_examples(usable, _gazetteer_cache(config))
    model, curve = train_ner(examples, config.ner_config(),
                             epochs=config.ner_epochs, lr=config.ner_lr)
    _save_stage_config(config, model_dir)
    model.save(str(model_dir / "ner.npz"))
    print(f"mention model on {len(examples)} examples, "
          f"loss {_loss_span(curve)}")
    _emit_json({"examples": len(examples), "loss": curve}, args.json)
    return 0


def cmd_train_nel(args) -> int:
    model_dir = Path(args.model)
    config = _resolve_config(args, model_dir)
    records, tables = _load_corpus(args)
    usable = _usable(prepare_records(records, tables))
    if config.train_cap:
        usable = usable[:config.train_cap]
    groups = build_link_groups(usable)
    model, curve, skipped = train_nel(groups, config.nel_config(),
                                      epochs=config.nel_epochs,
                                      lr=config.nel_lr)
    _save_stage_config(config, model_dir)
    model.save(str(model_dir / "nel.npz"))
    print(f"linker on {len(groups)} mention groups, loss {_loss_span(curve)}")
    for reason, n in sorted(skipped.items()):
        print(f"  skipped ({reason}): {n}")
    _emit_json({"groups": len(groups), "loss": curve,
                "skipped": skipped}, args.json)
    return 0


def cmd_train_nsp(args) -> int:
    model_dir = Path(args.model)
    config = _resolve_config(args, model_dir)
    grammar_path = model_dir / "grammar.txt"
    if not grammar_path.is_file():
        raise MissingFile(f"{grammar_path} (run induce-grammar first)")
    grammar = load_grammar(grammar_path)
    records, tables = _load_corpus(args)
    usable = _usable(prepare_records(records, tables))
    if config.train_cap:
        usable = usable[:config.train_cap]
    examples = build_nsp_examples(usable, grammar, config.mode)
    model, curve = train_nsp(examples, grammar, config.nsp_config(),
                             epochs=config.nsp_epochs, lr=config.nsp_lr)
    _save_stage_config(config, model_dir)
    model.save(str(model_dir / "nsp.npz"))
    print(f"parser on {len(examples)} examples ({config.mode}), "
          f"loss {_loss_span(curve)}")
    _emit_json({"examples": len(examples), "mode": config.mode,
                "loss": curve}, args.json)
    return 0


def cmd_predict(args) -> int:
    pipeline = Pipeline.load(args.model)
    if args.set:
        pipeline.config = pipeline.config.with_overrides(args.set)
    records, tables = _load_corpus(args)
    if args.cap:
        records = records[:args.cap]
    predictions = []
    for rec in records:
        if rec.table_id not in tables:
            raise MissingFile(f"table {rec.table_id} (record {rec.record_id})")
        pred = pipeline.predict(list(rec.query_tokens), tables[rec.table_id],
                                record_id=rec.record_id)
        predictions.append(pred.to_obj())
        print(f"{rec.record_id}\t{pred.sql or f'<{pred.failure}>'}")
    _emit_json({"predictions": predictions}, args.json)
    return 0


def cmd_evaluate(args) -> int:
    pipeline = Pipeline.load(args.model)
    overrides = list(args.set or [])
    if args.no_gazetteer:
        overrides.append("use_gazetteer_filter=false")
    if overrides:
        pipeline.config = pipeline.config.with_overrides(overrides)
    records, tables = _load_corpus(args)
    prepared = prepare_records(records, tables)
    report = evaluate(pipeline, prepared,
                      cap=args.cap or pipeline.config.eval_cap)
    print(report.summary())
    _emit_json(report.to_obj(), args.json)
    return 0


def cmd_grid(args) -> int:
    config = _resolve_config(args, None)
    tables_dir = args.tables or str(Path(args.data) / "tables")
    train_records = load_dataset(args.data, args.train_split)
    eval_records = load_dataset(args.data, args.eval_split)
    tables = load_tables(tables_dir)
    out_path = None if args.json in (None, "-") else args.json
    report = run_experiment_grid(train_records, eval_records, tables,
                                 config=config, out_path=out_path,
                                 log=print if args.verbose else None)
    print(format_grid_report(report))
    if args.json == "-":
        print(json.dumps(report, indent=2, sort_keys=True))
    failed = [name for name, ok in report["checks"].items() if not ok]
    return 1 if failed else 0


def cmd_make_data(args) -> int:
    manifest = make_corpus(args.out, seed=args.seed)
    for split, n in manifest["counts"].items():
        print(f"{split}: {n} records")
    n_tables = sum(len(ids) for ids in manifest["tables"].values())
    print(f"tables: {n_tables} -> {args.out}")
    _emit_json(manifest, args.json)
    return 0


# --------------------------------------------------------------------------
# argument wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tabsql",
        description="Train and score the three-stage text-to-SQL system.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", required=True,
                      help="corpus directory holding <split>.jsonl files")
    data.add_argument("--split", required=True,
                      help="split name, e.g. train or dev")
    data.add_argument("--tables",
                      help="table directory (default: <data>/tables)")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--model", required=True,
                       help="model directory for stage artifacts")

    conf = argparse.ArgumentParser(add_help=False)
    conf.add_argument("--config", help="flat key = value config file")
    conf.add_argument("--set", action="append", metavar="KEY=VALUE",
                      help="override one config key (repeatable)")

    report = argparse.ArgumentParser(add_help=False)
    report.add_argument("--json", metavar="PATH",
                        help="also write the report as JSON ('-' for stdout)")

    p = sub.add_parser("ingest", parents=[data, report],
                       help="load a split and report parse coverage")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("derive-annotations", parents=[data, report],
                       help="derive typed spans from alignments")
    p.set_defaults(func=cmd_derive_annotations)

    p = sub.add_parser("induce-grammar", parents=[data, model, report],
                       help="induce the production grammar from gold trees")
    p.set_defaults(func=cmd_induce_grammar)

    p = sub.add_parser("train-ner", parents=[data, model, conf, report],
                       help="train the mention model")
    p.add_argument("--no-schema", action="store_true",
                   help="drop schema surfaces from the gazetteer")
    p.add_argument("--no-cell", action="store_true",
                   help="drop cell surfaces from the gazetteer")
    p.add_argument("--no-gazetteer", action="store_true",
                   help="disable gazetteer filtering at decode time")
    p.set_defaults(func=cmd_train_ner)

    p = sub.add_parser("train-nel", parents=[data, model, conf, report],
                       help="train the entity linker")
    p.set_defaults(func=cmd_train_nel)

    p = sub.add_parser("train-nsp", parents=[data, model, conf, report],
                       help="train the structured parser")
    p.set_defaults(func=cmd_train_nsp)

    p = sub.add_parser("predict", parents=[data, model, report],
                       help="parse a split with a trained model")
    p.add_argument("--cap", type=int, default=0,
                   help="stop after this many records")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[data, model, report],
                       help="score a split by logical form and execution")
    p.add_argument("--cap", type=int, default=0,
                   help="evaluate at most this many records")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--no-gazetteer", action="store_true",
                   help="disable gazetteer filtering for this run")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("grid", parents=[conf, report],
                       help="run the mode and ablation grid")
    p.add_argument("--data", required=True)
    p.add_argument("--tables")
    p.add_argument("--train-split", default="train")
    p.add_argument("--eval-split", default="dev")
    p.add_argument("--verbose", action="store_true",
                   help="print per-stage progress")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("make-data", parents=[report],
                       help="generate the bundled synthetic corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_make_data)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TabsqlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

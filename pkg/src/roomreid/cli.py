"""Command-line entry point.

Subcommands: ``synth`` (generate a synthetic dataset), ``build-db`` (build
and persist the reference index), ``query`` (run the cascade over a query
manifest), ``evaluate`` (query plus metric report), ``ablate`` (the fixed
ablation battery).

Scoring options come from an optional JSON config file whose keys mirror
ScoringConfig; command-line flags override file values, and the effective
configuration is echoed into the output directory for provenance.

Exit codes: 0 success, 2 usage error, 3 data/format error, 4 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import database, evaluation, manifest, pipeline, synth
from .errors import (
    DataFormatError,
    InvariantViolation,
    RoomReidError,
    UsageError,
    ValidationError,
)
from .providers import MatchCountTable, ProviderBundle, default_bundle
from .scoring import ScoringConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

_CONFIG_FLAGS = (
    ("patch-strategy", "patch_strategy", str),
    ("object-strategy", "object_strategy", str),
    ("stage1-k", "stage1_k", int),
    ("stage2-k", "stage2_k", int),
    ("nms-iou", "nms_iou", float),
    ("object-conf-threshold", "object_conf_threshold", float),
)
_CONFIG_SWITCHES = ("use_global", "use_patch", "use_object", "use_fine_grained")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="JSON file with ScoringConfig keys")
    for flag, _, typ in _CONFIG_FLAGS:
        p.add_argument(f"--{flag}", type=typ, default=None)
    for name in _CONFIG_SWITCHES:
        flag = name.replace("_", "-")
        group = p.add_mutually_exclusive_group()
        group.add_argument(f"--{flag}", dest=name, action="store_true", default=None)
        group.add_argument(f"--no-{flag}", dest=name, action="store_false", default=None)


def _load_config(args: argparse.Namespace) -> ScoringConfig:
    values: Dict = {}
    if args.config is not None:
        if not args.config.is_file():
            raise DataFormatError(f"config file not found: {args.config}")
        try:
            values = json.loads(args.config.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise DataFormatError(f"config file {args.config} is not valid JSON: {e}") from e
        if not isinstance(values, dict):
            raise DataFormatError(f"config file {args.config} must hold a JSON object")
    for _, key, _typ in _CONFIG_FLAGS:
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    for key in _CONFIG_SWITCHES:
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    return ScoringConfig.from_dict(values)


def _prepare_out(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path

def _echo_config(cfg: ScoringConfig, out_dir: Path) -> None:
    (out_dir / "effective_config.json").write_text(
        json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _load_manifest(path: Path) -> manifest.Dataset:
    if not path.exists():
        raise DataFormatError(f"manifest not found: {path}")
    return manifest.load_dataset(path)


def _providers_from_args(args: argparse.Namespace) -> ProviderBundle:
    bundle = default_bundle()
    table_path: Optional[Path] = getattr(args, "match_counts", None)
    if table_path is not None:
        table = MatchCountTable.load(table_path)
        bundle = ProviderBundle(
            patch_feature_provider=bundle.patch_feature_provider,
            fine_matcher=table.matcher(),
            thread_safe=True,
        )
    return bundle


def _select_queries(ds: manifest.Dataset, which: str) -> List:
    if which == "query":
        records = ds.queries()
    elif which == "referencepool":
        records = ds.reference_pool()
    else:
        records = list(ds.records)
    if not records:
        raise DataFormatError(f"manifest {ds.name!r} has no records in split {which!r}")
    return records


def _write_traces(results: Sequence, out_dir: Path) -> Path:
    path = out_dir / "traces.jsonl"
    with path.open("w", encoding="utf-8") as fh:
        for r in results:
            if isinstance(r, pipeline.QueryFailure):
                fh.write(
                    json.dumps(
                        {
                            "schema": pipeline.TRACE_SCHEMA,
                            "query": r.query_image_id,
                            "error": r.message,
                            "stage": r.stage,
                        },
                        separators=(",", ":"),
                    )
                    + "\n"
                )
            else:
                fh.write(r.trace_line() + "\n")
    return path


def cmd_synth(args: argparse.Namespace) -> int:
    spec = synth.SynthSpec(
        n_rooms=args.rooms,
        objects_per_room=(args.objects_min, args.objects_max),
        feature_dim=args.feature_dim,
        keypoints_per_image=(args.keypoints_min, args.keypoints_max),
        viewpoint_noise=args.noise,
        dropout=args.dropout,
        distractor_similarity=args.distractor,
        rng_seed=args.seed,
    )
    ds = synth.make_dataset(spec, args.views, name=args.name)
    manifest.write_dataset(ds, args.out)
    print(f"wrote {len(ds.records)} records ({len(ds.queries())} queries) to {args.out}")
    return EXIT_OK


def cmd_build_db(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    ds = _load_manifest(args.manifest)
    pool = ds.reference_pool() or list(ds.records)
    db = database.build_database(pool, cfg)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    database.save_database(db, args.out)
    print(f"rooms: {len(db)}")
    for room in db.room_order:
        record = db.refs[room]
        print(
            f"  {room}: reference={record.image_id} "
            f"objects={len(record.objects)} patches={len(db.patch_features[room])}"
        )
    print(f"index written to {args.out}")
    return EXIT_OK


def _run_queries(args: argparse.Namespace):
    cfg = _load_config(args)
    db = database.load_database(args.db)
    ds = _load_manifest(args.manifest)
    queries = _select_queries(ds, args.split)
    providers = _providers_from_args(args)
    results = pipeline.query_batch(queries, db, cfg, providers=providers, workers=args.workers)
    return cfg, db, ds, queries, results


def cmd_query(args: argparse.Namespace) -> int:
    out_dir = _prepare_out(args.out)
    cfg, _db, _ds, queries, results = _run_queries(args)
    _echo_config(cfg, out_dir)
    trace_path = _write_traces(results, out_dir)
    failures = [r for r in results if isinstance(r, pipeline.QueryFailure)]
    print(f"queried {len(queries)} images; {len(failures)} failures; traces in {trace_path}")
    return EXIT_OK if not failures else EXIT_DATA


def cmd_evaluate(args: argparse.Namespace) -> int:
    out_dir = _prepare_out(args.out)
    cfg, _db, ds, queries, results = _run_queries(args)
    _echo_config(cfg, out_dir)
    _write_traces(results, out_dir)
    failures = [r for r in results if isinstance(r, pipeline.QueryFailure)]
    if failures:
        f = failures[0]
        raise ValidationError(f"query {f.query_image_id!r} failed: {f.message}")
    predictions = {r.query_image_id: r.final_room_id for r in results}
    report = evaluation.score(predictions, ds.truth(), timings=[r.timings_us for r in results])
    table = evaluation.compare_table([("run", report)])
    print(table, end="")
    timing_lines = [f"{label}: {report.stage_timings_us[label]:.1f} us" for label in pipeline.STAGE_LABELS]
    print("mean per-stage timings:")
    for line in timing_lines:
        print(f"  {line}")
    (out_dir / "report.txt").write_text(table, encoding="utf-8")
    (out_dir / "metrics.jsonl").write_text(report.record_line("run") + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    out_dir = _prepare_out(args.out)
    cfg = _load_config(args)
    db = database.load_database(args.db)
    ds = _load_manifest(args.manifest)
    queries = _select_queries(ds, args.split)
    providers = _providers_from_args(args)
    _echo_config(cfg, out_dir)
    runs = evaluation.run_ablations(
        queries, ds.truth(), db, cfg, providers=providers, workers=args.workers
    )
    table = evaluation.compare_table(runs)
    print(table, end="")
    (out_dir / "ablations.txt").write_text(table, encoding="utf-8")
    with (out_dir / "metrics.jsonl").open("w", encoding="utf-8") as fh:
        for label, report in runs:
            fh.write(report.record_line(label) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roomreid", description="Room reidentification retrieval engine"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset manifest")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--rooms", type=int, default=8)
    p.add_argument("--views", type=int, default=4, help="query views per room")
    p.add_argument("--objects-min", type=int, default=3)
    p.add_argument("--objects-max", type=int, default=8)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--keypoints-min", type=int, default=4)
    p.add_argument("--keypoints-max", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--distractor", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", type=str, default="synthetic")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-db", help="build and persist the reference index")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_config_args(p)
    p.set_defaults(func=cmd_build_db)

    for name, fn, needs_out in (
        ("query", cmd_query, True),
        ("evaluate", cmd_evaluate, True),
        ("ablate", cmd_ablate, True),
    ):
        p = sub.add_parser(name)
        p.add_argument("--db", type=Path, required=True)
        p.add_argument("--manifest", type=Path, required=True)
        p.add_argument("--out", type=Path, required=True)
        p.add_argument("--split", choices=("query", "referencepool", "all"), default="query")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--match-counts", type=Path, default=None,
                       help="precomputed fine-match count table")
        _add_config_args(p)
        p.set_defaults(func=fn)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, ValidationError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except InvariantViolation as e:
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    except RoomReidError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001 - last-resort diagnostic
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

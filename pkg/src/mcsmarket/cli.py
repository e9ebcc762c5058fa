"""Command-line interface: scenario generation, mechanism runs, verification.

Exit codes: 0 success, 1 verification failure, 2 usage/config error.
Log level comes from MCS_LOG_LEVEL (error|warn|info|debug).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .matching import Matching
from .mechanisms import MECHANISMS, RunConfig, run_mechanism, aggregate
from .model import validate_scenario
from .rng import SeededRng
from .scenario import (
    ConfigError,
    GeneratorConfig,
    benchmark_config,
    generate_scenario,
    load_scenario,
    load_worker_csv,
    merge_workers,
    save_scenario,
    table2_config,
)
from .suites import SUITES
from .verifiers import check_individual_rationality

log = logging.getLogger("mcsmarket")

CSV_COLUMNS = [
    "mechanism",
    "replication",
    "seed",
    "quality",
    "task_utility",
    "worker_utility",
    "welfare",
    "podsq",
    "potaw",
    "rt_ms",
    "ni",
    "dip_ms",
    "ecip_j",
]

SCHEMA_VERSION = 1


def _setup_logging() -> None:
    level = os.environ.get("MCS_LOG_LEVEL", "warn").lower()
    mapping = {
        "error": logging.ERROR,
        "warn": logging.WARNING,
        "info": logging.INFO,
        "debug": logging.DEBUG,
    }
    logging.basicConfig(
        level=mapping.get(level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def canonical_csv_hash(path: Path, mask_columns: tuple[str, ...] = ("rt_ms",)) -> str:
    """Hash of the CSV with wall-clock columns zeroed (the one
    non-deterministic field); everything else is byte-stable under a seed."""
    digest = hashlib.sha256()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        digest.update(",".join(reader.fieldnames or []).encode())
        for row in reader:
            for col in mask_columns:
                if col in row:
                    row[col] = "0"
            digest.update(json.dumps(row, sort_keys=True).encode())
    return digest.hexdigest()


def _write_manifest(out_dir: Path, payload: dict) -> Path:
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return path


def cmd_generate(args: argparse.Namespace) -> int:
    try:
        if args.config:
            config = GeneratorConfig.from_json(args.config)
        else:
            preset = table2_config if args.preset == "table2" else benchmark_config
            overrides = {}
            if args.tasks is not None:
                overrides["n_tasks"] = args.tasks
            if args.workers is not None:
                overrides["n_workers"] = args.workers
            config = preset(**overrides)
        config.validate()
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 2

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": "generate",
        "seed": args.seed,
        "preset": args.preset if not args.config else None,
        "config_path": args.config,
        "workers_csv": args.workers_csv,
        "outputs": {"scenario": out.name},
    }
    manifest_path = _write_manifest(out.parent, manifest)

    scenario = generate_scenario(config, args.seed)
    if args.workers_csv:
        try:
            workers = load_worker_csv(args.workers_csv)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        scenario = merge_workers(scenario, workers)
    problems = validate_scenario(scenario)
    if problems:
        print("error: generated scenario invalid:", file=sys.stderr)
        for p in problems:
            print(f"  - {p}", file=sys.stderr)
        return 2
    save_scenario(scenario, out)
    manifest["hashes"] = {"scenario": sha256_file(out)}
    _write_manifest(out.parent, manifest)
    log.info("wrote %s", out)
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: cannot load scenario: {exc}", file=sys.stderr)
        return 2
    mechanisms = [m.strip() for m in args.mechanism.split(",") if m.strip()]
    for m in mechanisms:
        if m not in MECHANISMS:
            print(
                f"error: unknown mechanism {m!r}; choose from {', '.join(MECHANISMS)}",
                file=sys.stderr,
            )
            return 2

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": "run",
        "scenario": str(args.scenario),
        "scenario_sha256": sha256_file(Path(args.scenario)),
        "mechanisms": mechanisms,
        "replications": args.replications,
        "seed": args.seed,
        "outputs": {"csv": "replications.csv", "report": "report.json"},
    }
    _write_manifest(out_dir, manifest)

    root = SeededRng(args.seed)
    seeds = [
        int(root.substream("rep", r).integers(0, 2**62)) for r in range(args.replications)
    ]
    config = RunConfig()
    all_rows = []
    reports = {}
    if args.parallel > 1:
        from concurrent.futures import ProcessPoolExecutor

        jobs = [(name, scenario, seeds, config) for name in mechanisms]
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            for name, (rows, _) in zip(
                mechanisms, pool.map(_run_mechanism_star, jobs)
            ):
                all_rows.extend(rows)
                reports[name] = aggregate(rows)
    else:
        for name in mechanisms:
            rows, _ = run_mechanism(name, scenario, seeds, config)
            all_rows.extend(rows)
            reports[name] = aggregate(rows)
    all_rows.sort(key=lambda r: (r.mechanism, r.replication))

    csv_path = out_dir / "replications.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in all_rows:
            writer.writerow([getattr(row, col) for col in CSV_COLUMNS])

    report_path = out_dir / "report.json"
    report_payload = {
        "schema_version": SCHEMA_VERSION,
        "replications": args.replications,
        "seed": args.seed,
        "mechanisms": {
            name: {
                metric: {"mean": stat.mean, "std": stat.std}
                for metric, stat in rep.stats.items()
            }
            for name, rep in reports.items()
        },
    }
    report_path.write_text(
        json.dumps(report_payload, indent=2, sort_keys=True), encoding="utf-8"
    )
    manifest["hashes"] = {
        "csv_canonical": canonical_csv_hash(csv_path),
        "report": "wall-clock fields excluded from reproducibility contract",
    }
    _write_manifest(out_dir, manifest)
    log.info("wrote %s and %s", csv_path, report_path)
    return 0


def _run_mechanism_star(job):
    name, scenario, seeds, config = job
    return run_mechanism(name, scenario, seeds, config)


def cmd_verify(args: argparse.Namespace) -> int:
    if args.inject:
        try:
            scenario = load_scenario(args.scenario)
            matching = Matching.from_dict(
                json.loads(Path(args.inject).read_text(encoding="utf-8"))
            )
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            print(f"error: cannot load injected matching: {exc}", file=sys.stderr)
            return 2
        violations = check_individual_rationality(matching, scenario)
        if violations:
            print(
                json.dumps(
                    {
                        "suite": "inject",
                        "violations": [
                            {"kind": v.kind, "subject": v.subject, "detail": v.detail}
                            for v in violations
                        ],
                    },
                    indent=2,
                )
            )
            return 1
        print(json.dumps({"suite": "inject", "violations": []}))
        return 0

    if args.suite not in SUITES:
        print(
            f"error: unknown suite {args.suite!r}; choose from {', '.join(SUITES)}",
            file=sys.stderr,
        )
        return 2
    report = SUITES[args.suite](args.trials, args.seed)
    summary = {
        "suite": report.suite,
        "trials": report.trials,
        "passed": report.passed,
        "failures": report.failures,
    }
    print(json.dumps(summary, indent=2))
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcsmarket",
        description="Two-stage service-trading market simulator for mobile crowdsensing",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a scenario file")
    gen.add_argument("--config", help="generator config JSON")
    gen.add_argument(
        "--preset", choices=["benchmark", "table2"], default="benchmark",
        help="built-in parameter preset (ignored with --config)",
    )
    gen.add_argument("--tasks", type=int, default=None)
    gen.add_argument("--workers", type=int, default=None)
    gen.add_argument("--workers-csv", help="ingest dataset-derived workers from CSV")
    gen.add_argument("--seed", type=int, default=1)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_generate)

    run = sub.add_parser("run", help="run mechanisms over seeded replications")
    run.add_argument("--scenario", required=True)
    run.add_argument("--mechanism", default="stagewise", help="comma-separated list")
    run.add_argument("--replications", type=int, default=1)
    run.add_argument("--seed", type=int, default=1)
    run.add_argument("--parallel", type=int, default=1)
    run.add_argument("--out", required=True)
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify", help="run seeded property-verification suites")
    ver.add_argument(
        "--suite", choices=sorted(SUITES), default="stability",
    )
    ver.add_argument("--trials", type=int, default=20)
    ver.add_argument("--seed", type=int, default=1)
    ver.add_argument("--scenario", help="scenario for --inject checks")
    ver.add_argument("--inject", help="matching JSON to check (fault injection)")
    ver.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``gmeml {generate,supervised,semisup,active,report}``.

Exit codes: 0 success, 2 configuration error, 3 quota or solver failure,
4 schema mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from gmeml import gmn, pipeline

EXIT_OK, EXIT_CONFIG, EXIT_QUOTA, EXIT_SCHEMA = 0, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    defaults = pipeline.ExperimentConfig().dumps()
    p = argparse.ArgumentParser(
        prog="gmeml",
        description="GME labelling and (semi-)supervised classification of three-qubit states.",
        epilog="Config file: JSON object; omitted keys take these defaults:\n" + defaults,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, dataset=True):
        sp.add_argument("--config", help="experiment config (JSON)")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--out", default="runs", help="output directory (default: runs)")
        sp.add_argument("--jobs", type=int, help="worker processes (results do not depend on it)")
        sp.add_argument("--audit-fraction", type=float, help="fraction of records to re-solve after generation")
        if dataset:
            sp.add_argument("--dataset", help="dataset JSON-lines file (default: OUT/dataset.jsonl)")

    common(sub.add_parser("generate", help="draw and label states until the class quotas are met"), dataset=False)
    common(sub.add_parser("supervised", help="CV grid search, screening and test accuracy"))
    common(sub.add_parser("semisup", help="s4vm / svm-s4vm / renewal protocols"))
    common(sub.add_parser("active", help="trace-distance vs random labeled-set selection"))
    rp = sub.add_parser("report", help="flatten run files into CSV + JSON summary")
    rp.add_argument("runs", nargs="+", help="semisup.json / active.json files")
    rp.add_argument("--out", default="runs", help="output directory (default: runs)")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            csv_path, json_path = pipeline.cmd_report(args.runs, args.out)
            print(f"wrote {csv_path} and {json_path}")
            return EXIT_OK
        cfg = pipeline.load_config(args.config).with_overrides(args.seed, args.jobs, args.audit_fraction)
        out = Path(args.out)
        if args.command == "generate":
            res = pipeline.cmd_generate(cfg, out)
            audit = pipeline.audit_dataset(pipeline.load_records(res.path), cfg.audit_fraction, cfg.seed)
            print(f"wrote {res.records} records to {res.path} ({res.attempts} states drawn); audit re-solved {audit.checked}, mismatches {len(audit.mismatches)}")
            return EXIT_OK if audit.passed else EXIT_QUOTA
        dataset = Path(args.dataset) if args.dataset else out / "dataset.jsonl"
        if not dataset.exists():
            raise pipeline.ConfigError(f"dataset {dataset} does not exist")
        runner = {"supervised": pipeline.cmd_supervised, "semisup": pipeline.cmd_semisup, "active": pipeline.cmd_active}[args.command]
        report = runner(cfg, dataset, out)
        print(json.dumps(report.get("summary", {}), sort_keys=True, indent=2))
        return EXIT_OK
    except pipeline.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (pipeline.QuotaError, gmn.GmnSolverError) as exc:
        print(f"generation failed: {exc}", file=sys.stderr)
        return EXIT_QUOTA
    except pipeline.SchemaError as exc:
        print(f"schema mismatch: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())

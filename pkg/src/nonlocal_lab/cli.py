"""Command-line experiment runner.

Usage::

    nonlocal-lab <kind> --config PATH [--out DIR] [--seed N] [--threads N] [--baseline PATH]

Exit status is 0 when every hard assertion passes, 2 when only soft
verdicts fail (a ratio exceeding its frozen baseline by more than 10 %, or a
failed good-lambda verdict) and 1 on errors or failed hard assertions.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from .config import KINDS, ExperimentConfig, load_config
from .errors import BaselineMismatchError, IntegrityError, NonlocalLabError
from .experiments import run_experiment

__all__ = ["main", "run", "baseline", "load_baseline", "compare_baseline", "BASELINE_TOLERANCE"]

log = logging.getLogger("nonlocal_lab")
BASELINE_TOLERANCE = 0.10


def _checksum(payload):
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def baseline(config: ExperimentConfig, report, path):
    """Freeze the report's baseline metrics, keyed by the configuration hash."""
    if report.params.get("config_hash") != config.hash:
        raise BaselineMismatchError("report was produced by a different configuration")
    payload = {
        "config_hash": config.hash,
        "experiment": report.experiment,
        "values": report.baseline_values(),
    }
    doc = dict(payload, checksum=_checksum(payload))
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


def load_baseline(path):
    doc = json.loads(Path(path).read_text())
    checksum = doc.pop("checksum", None)
    if checksum is None or checksum != _checksum(doc):
        raise IntegrityError(f"baseline {path} failed its checksum")
    return doc


def compare_baseline(report, doc, tolerance=BASELINE_TOLERANCE):
    """Return ``(status, details)``; status is 'skipped', 'pass' or 'drift'."""
    if doc["config_hash"] != report.params.get("config_hash"):
        return "skipped", {"reason": "configuration hash differs"}
    current = report.baseline_values()
    details = {}
    status = "pass"
    for key, frozen in doc["values"].items():
        now = current.get(key)
        details[key] = {"baseline": frozen, "current": now}
        if now is None or now > frozen * (1 + tolerance) + 1e-300:
            status = "drift"
    return status, details


def run(config: ExperimentConfig, out_dir=None, baseline_path=None):
    """Run one experiment; returns ``(exit_status, report)``."""
    report = run_experiment(config)
    status = 0
    if report.hard_failures:
        status = 1
    soft_fail = report.experiment == "good-lambda" and not report.summary.get("pass", True)
    if baseline_path is not None:
        bp = Path(baseline_path)
        if bp.exists():
            doc = load_baseline(bp)
            verdict, details = compare_baseline(report, doc)
            report.summary["baseline"] = {"status": verdict, "details": details}
            soft_fail = soft_fail or verdict == "drift"
        else:
            baseline(config, report, bp)
            report.summary["baseline"] = {"status": "frozen"}
    if status == 0 and soft_fail:
        status = 2
    out = out_dir or config.output_dir
    if out is not None:
        report.write(out)
    return status, report


def build_parser():
    parser = argparse.ArgumentParser(prog="nonlocal-lab", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", required=True, help="YAML experiment configuration")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="override the configuration seed")
        p.add_argument("--threads", type=int, help="worker threads for sweeps")
        p.add_argument("--baseline", help="baseline file: compared if present, frozen otherwise")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, default_kind=args.kind)
        if cfg.kind != args.kind:
            raise NonlocalLabError(f"config kind {cfg.kind!r} does not match subcommand {args.kind!r}")
        cfg = cfg.with_overrides(seed=args.seed, threads=args.threads, output=args.out)
        status, report = run(cfg, cfg.output_dir, args.baseline)
    except (NonlocalLabError, OSError, ValueError) as exc:
        print(f"error [{args.kind}]: {exc}", file=sys.stderr)
        return 1
    summary = json.dumps(report.to_dict(include_metadata=False)["summary"], sort_keys=True)
    print(f"{args.kind}: status {status} {summary}")
    return status


if __name__ == "__main__":
    sys.exit(main())

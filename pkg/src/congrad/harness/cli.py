"""``congrad`` command line: gen-data, train, filter-analyze, report.

Exit codes: 0 success, 1 validation error (bad config, bad input, malformed
report), 2 runtime error (including a locked output directory).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..config import ExperimentConfig
from ..errors import ConfigError, InvalidInputError, ReportParseError
from . import analysis, runner

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    if args.out is not None:
        cfg = cfg.with_overrides(output_dir=args.out)
    return runner.apply_arm(cfg, getattr(args, "arm", None), getattr(args, "rho", None))


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    out = Path(cfg.output_dir)
    with runner.directory_lock(out / "data"):
        data = runner.gen_data(cfg, out)
    print(f"wrote {data}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    arm_dir = runner.train(cfg, Path(cfg.output_dir), resume=args.resume, stop_after=args.stop_after)
    manifest = json.loads((arm_dir / "manifest.json").read_text())
    print(f"{arm_dir}: {manifest['status']} ({manifest['rounds_completed']}/{manifest['rounds_planned']} rounds)")
    return EXIT_OK


def cmd_filter_analyze(args) -> int:
    path = Path(args.report)
    if path.is_dir():
        path = path / "filter_report.jsonl"
    records = analysis.load_filter_report(path)
    rhos = tuple(args.rho) if args.rho else analysis.DEFAULT_RHOS
    result = analysis.filter_analyze(records, rhos, bins=args.bins)
    text = analysis.format_filter_analysis(result)
    if args.output:
        Path(args.output).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    print(text, end="")
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.output or "report")
    path = analysis.write_report(args.metrics, out)
    print(path.read_text(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="congrad", description="Consensus-gradient filtering for self-rewarding "
                                "multilingual preference alignment (desk-scale harness).")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, arm=True):
        sp.add_argument("--config", help="experiment config (JSON); defaults are used when omitted")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        if arm:
            sp.add_argument("--arm", help=f"filter arm: {', '.join(list(runner.ARMS) + ['congrad', 'reward_margin', 'length_margin'])}")
            sp.add_argument("--rho", type=float, help="retain fraction in (0, 1]")

    g = sub.add_parser("gen-data", help="write synthetic prompts, targets and the seed policy")
    common(g, arm=False)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run the self-rewarding loop for one filter arm")
    common(t)
    t.add_argument("--resume", action="store_true", help="continue from the latest round checkpoint")
    t.add_argument("--stop-after", type=int, help=argparse.SUPPRESS)
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("filter-analyze", help="histograms and offline rho re-selection from a filter report")
    f.add_argument("report", help="filter_report.jsonl or an arm directory")
    f.add_argument("--rho", type=float, action="append", help="retain fraction to re-select at (repeatable)")
    f.add_argument("--bins", type=int, default=10)
    f.add_argument("--output", help="write the full analysis as JSON here")
    f.set_defaults(func=cmd_filter_analyze)

    r = sub.add_parser("report", help="round-by-round tables and plot-ready CSV series")
    r.add_argument("metrics", nargs="+", help="metrics.jsonl files or arm directories")
    r.add_argument("--output", help="directory for report.md and series CSVs (default: ./report)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"congrad: config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (InvalidInputError, ReportParseError) as exc:
        print(f"congrad: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except runner.LockError as exc:
        print(f"congrad: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        print(f"congrad: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

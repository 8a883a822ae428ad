"""Command line entry point: ``cdnfront <stage>``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigError, PipelineConfig, load_config
from .demo import BUNDLED, bundled_harness, run_demo
from .net import Resolver


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cdnfront", description="Measure which CDNs allow domain fronting.")
    p.add_argument("--config", help="pipeline config file (TOML)")
    p.add_argument("--seed", type=int, help="run seed; overrides the config")
    p.add_argument("--out-dir", help="artifact directory; overrides the config")
    p.add_argument("--resolver-override", action="append", default=[], metavar="HOST=ADDR",
                   help="resolve HOST to ADDR[:PORT] before system DNS (repeatable)")
    p.add_argument("--acknowledge-request-cap", action="store_true",
                   help="allow more than 4000 requests per CDN")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    ingest = sub.add_parser("ingest", help="DNS logs -> stable FQDN to CDN mapping")
    ingest.add_argument("--dns-log", action="append", default=[], help="DNS log file (repeatable)")
    ingest.add_argument("--catalog", help="CDN catalog file")
    sub.add_parser("discover", help="liveness checks, crawling, per-CDN URL sets")
    sub.add_parser("test", help="run fronting tuples against each CDN")
    enrich = sub.add_parser("enrich", help="popularity ranks and reputation flags")
    enrich.add_argument("--ranking", help="rank,domain CSV")
    report = sub.add_parser("report", help="aggregate outcomes into per-CDN reports")
    report.add_argument("--format", choices=("table", "json", "plotdata"), default="table")
    demo = sub.add_parser("demo", help="offline end-to-end run against a mock CDN")
    demo.add_argument("harness", nargs="*", default=list(BUNDLED),
                      help=f"harness config file or bundled name ({', '.join(BUNDLED)})")
    return p


def _config(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out_dir:
        cfg.out_dir = args.out_dir
    if args.resolver_override:
        Resolver.from_pairs(args.resolver_override)  # validates
        cfg.resolver.update(dict(pair.split("=", 1) for pair in args.resolver_override))
    cfg.acknowledge_request_cap = cfg.acknowledge_request_cap or args.acknowledge_request_cap
    if getattr(args, "dns_log", None):
        cfg.dns_logs = list(args.dns_log)
    if getattr(args, "catalog", None):
        cfg.catalog = args.catalog
    if getattr(args, "ranking", None):
        cfg.ranking = args.ranking
    return cfg.validate()


def _demo(names: list[str]) -> int:
    status = 0
    for name in names:
        path = Path(name)
        if path.exists():
            text, base = path.read_text("utf-8"), path.parent
        else:
            text, base = bundled_harness(name), Path(".")
        print(f"== demo: {name}")
        status |= run_demo(text, base_dir=base)
    return status


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "demo":
            return _demo(args.harness)
        cfg = _config(args)
        if args.command == "report":
            pipeline.cmd_report(cfg)
            suffix = {"table": "report.txt", "json": "report.jsonl", "plotdata": "plotdata.csv"}[args.format]
            sys.stdout.write((cfg.out / suffix).read_text("utf-8"))
            return 0
        stage = getattr(pipeline, f"cmd_{args.command}")
        out = stage(cfg)
        print(f"wrote {out}")
        return 0
    except (ConfigError, pipeline.MissingArtifact, ValueError, OSError) as exc:
        print(f"cdnfront {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

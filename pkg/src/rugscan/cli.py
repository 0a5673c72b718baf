"""Command-line front end.

Exit codes for ``analyze``: 0 when no high-severity finding is reported,
2 when at least one is, 1 on any operational error. ``batch`` exits 0 when
every target was analysed and 1 when any failed.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__
from .batch import Manifest, run_batch, write_reports
from .config import Config, ConfigError
from .datalog import export_tsv
from .errors import AnalysisError, InvalidInputError
from .pipeline import parse_hex_input, run_analysis
from .rpc import RPC_URL_ENV, default_cache_dir, fetch_code, is_address

log = logging.getLogger("rugscan")

EXIT_CLEAN = 0
EXIT_ERROR = 1
EXIT_FINDINGS = 2


def _load_config(path: str | None) -> Config:
    return Config.load(path) if path else Config()


def _read_code(target: str, args: argparse.Namespace, config: Config):
    if is_address(target) and not os.path.exists(target):
        cache = None if args.no_cache else (args.cache or default_cache_dir())
        return fetch_code(target, args.rpc_url, config.rpc, cache)
    try:
        with open(target, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InvalidInputError(f"cannot read {target}: {exc.strerror}") from None
    return parse_hex_input(text)


def cmd_analyze(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    analysis = run_analysis(_read_code(args.target, args, config), config)
    if args.dump_cfg:
        sys.stderr.write(analysis.cfg.dump())
    if args.dump_facts:
        export_tsv(analysis.base_facts, os.path.join(args.dump_facts, "base"))
        derived = sorted(set(analysis.facts.relations) - set(analysis.base_facts.relations))
        export_tsv(analysis.facts, os.path.join(args.dump_facts, "derived"), derived)
    report = analysis.report
    sys.stdout.write(report.to_text() if args.format == "text" else report.to_json())
    return EXIT_FINDINGS if report.has_high_severity else EXIT_CLEAN


def cmd_batch(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    manifest = Manifest.load(args.manifest)
    cache = None if args.no_cache else (args.cache or default_cache_dir())
    result = run_batch(manifest, config, jobs=args.jobs, cache_dir=cache, rpc_url=args.rpc_url)
    if args.out:
        write_reports(result, args.out)
    sys.stdout.write(result.to_text() if args.format == "text" else result.to_json())
    return EXIT_ERROR if result.failures else EXIT_CLEAN


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rugscan", description="Detect rug-pull backdoors in EVM runtime bytecode."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", metavar="FILE", help="JSON configuration file")
        p.add_argument("--rpc-url", metavar="URL", help=f"JSON-RPC endpoint (default: ${RPC_URL_ENV})")
        p.add_argument("--cache", metavar="DIR", help="bytecode cache directory")
        p.add_argument("--no-cache", action="store_true", help="always query the node")
        p.add_argument("--format", choices=("json", "text"), default="json")

    a = sub.add_parser("analyze", help="analyse one contract")
    a.add_argument("target", help="file holding hex bytecode, or a 0x-prefixed address")
    common(a)
    a.add_argument("--dump-cfg", action="store_true", help="write the control-flow graph to stderr")
    a.add_argument("--dump-facts", metavar="DIR", help="write base and derived facts as TSV files")
    a.set_defaults(func=cmd_analyze)

    b = sub.add_parser("batch", help="analyse a labelled corpus and score it")
    b.add_argument("manifest", help="JSON manifest of targets and expected findings")
    common(b)
    b.add_argument("--jobs", type=int, default=None, help="parallel workers (default: CPU count)")
    b.add_argument("--out", metavar="DIR", help="write per-target JSON reports here")
    b.set_defaults(func=cmd_batch)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (AnalysisError, ConfigError) as exc:
        code = getattr(exc, "code", "config_error")
        sys.stderr.write(f"rugscan: error [{code}]: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

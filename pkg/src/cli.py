#!/usr/bin/env python3
"""
CLI Interface for the PDENFF phishing mail filter

Exit codes: 0 ok (ham in pipe mode), 1 phish (pipe mode), 2 usage or
configuration error, 3 runtime error.
"""

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

# Add parent directory to path for imports
sys.path.append(str(Path(__file__).parent.parent))

from rich import box
from rich.console import Console
from rich.table import Table

from ingest.build_profile import ProfileBuilder
from src.data_loader import iter_corpus
from src.detector import FeaturePipeline, PhishDetector, stream_corpus
from src.exceptions import ConfigError, PdenffError, ProfileStoreError
from src.features import FeatureRegistry
from src.filter_server import FilterServer, FilterService, forward_unclassified, run_pipe
from src.labels import Label
from src.logger import get_logger, setup_logging
from src.metrics import MetricsReport, report_to_record
from src.profile_store import ProfileStore
from src.run_config import RunConfig, coerce_value, load_run_config, validate_config

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_PHISH = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def parse_overrides(pairs: Sequence[str]) -> Dict[str, Any]:
    """KEY=VALUE pairs coerced to the type of the RunConfig default"""
    known = {f.name for f in fields(RunConfig)}
    overrides: Dict[str, Any] = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in known:
            raise ConfigError(f"Bad override {pair!r}; expected KEY=VALUE with a known config key")
        overrides[key] = coerce_value(key, value)
    return overrides


class PdenffCLI:
    """Command handlers; every handler returns an exit code"""

    def __init__(self, cfg: RunConfig, console: Optional[Console] = None):
        self.cfg = cfg
        self.console = console or Console(stderr=True)

    def display_report(self, report: MetricsReport, title: str) -> None:
        table = Table(title=title, box=box.ROUNDED)
        table.add_column("Metric", style="cyan")
        table.add_column("Value", style="green")
        counts = report.counts
        table.add_row("Samples", str(report.total))
        table.add_row("TP / TN / FP / FN", f"{counts.tp} / {counts.tn} / {counts.fp} / {counts.fn}")
        table.add_row("Sensitivity", _fmt(report.sensitivity))
        table.add_row("Precision", _fmt(report.precision))
        table.add_row("Specificity", _fmt(report.specificity))
        table.add_row("F-measure", _fmt(report.f_measure))
        table.add_row("Accuracy", _fmt(report.accuracy))
        table.add_row("Rules", str(report.rule_count))
        table.add_row("Rules created / updated / deleted",
                      f"{report.rules_created} / {report.rules_updated} / {report.rules_deleted}")
        table.add_row("Mean latency (ms)", f"{report.latency_mean * 1000:.3f}")
        self.console.print(table)

    def cmd_extract(self, args) -> int:
        pipeline = FeaturePipeline(FeatureRegistry.load(self.cfg.registry_path), self.cfg.mode)
        frame = pipeline.dump(iter_corpus(args.corpus, Label.parse(args.label)), progress=args.progress)
        if args.format == "json":
            text = frame.to_json(orient="records", lines=True)
        else:
            text = frame.to_csv(index=False)
        if args.output:
            Path(args.output).write_text(text, encoding="utf-8")
            self.console.print(f"Wrote {len(frame)} records to {args.output}", style="green")
        else:
            sys.stdout.write(text)
        return EXIT_OK

    def cmd_train(self, args) -> int:
        builder = ProfileBuilder(self.cfg, progress=args.progress)
        with self.console.status("[bold blue]Training profile...", spinner="dots"):
            outcome = builder.build(iter_corpus(args.corpus, Label.parse(args.label)))
        self.console.print(
            f"Profile version {outcome.version} active: {len(outcome.rulebase.rules)} rules "
            f"from {outcome.samples} messages ({outcome.labeled} labeled)",
            style="green",
        )
        self.display_report(outcome.report, "Training set")
        return EXIT_OK

    def cmd_stream(self, args) -> int:
        detector = PhishDetector.from_config(self.cfg)
        try:
            result = stream_corpus(
                detector,
                iter_corpus(args.corpus, Label.parse(args.label)),
                report_every=args.report_every,
                progress=args.progress,
            )
        finally:
            detector.close()
        store = detector.manager.store
        if result.report is None:
            store.audit("stream_completed", processed=result.processed, scored=0,
                        profile_version=detector.profile_version)
            self.console.print(f"Classified {result.processed} unlabeled messages", style="yellow")
            return EXIT_OK
        record = report_to_record(result.report, processed=result.processed,
                                  profile_version=detector.profile_version)
        store.audit("stream_completed", processed=result.processed, scored=result.report.total,
                    accuracy=result.report.accuracy, profile_version=detector.profile_version)
        if args.output:
            Path(args.output).write_text(json.dumps(record, indent=2), encoding="utf-8")
        self.display_report(result.report, f"Stream ({result.processed} messages)")
        return EXIT_OK

    def cmd_serve(self, args) -> int:
        if self.cfg.io_mode == "pipe":
            try:
                detector = PhishDetector.from_config(self.cfg)
            except PdenffError as e:
                logger.error(f"No detector available, forwarding unclassified: {e}")
                return forward_unclassified(sys.stdin.buffer, sys.stdout.buffer)
            return run_pipe(detector, sys.stdin.buffer, sys.stdout.buffer, self.cfg.max_message_bytes)

        detector = PhishDetector.from_config(self.cfg, background=True)
        service = FilterService(detector, self.cfg.max_message_bytes, self.cfg.feedback_memory)
        try:
            with FilterServer(service, self.cfg.socket_address) as server:
                self.console.print(f"Serving on {server.server_address} (Ctrl+C to stop)", style="green")
                try:
                    server.serve_forever()
                except KeyboardInterrupt:
                    self.console.print("\nInterrupted, shutting down", style="yellow")
        finally:
            detector.close()
        return EXIT_OK

    def cmd_profile_list(self, args) -> int:
        store = ProfileStore(self.cfg.store_path)
        active = store.active_version()
        table = Table(title=f"Profiles in {store.root}", box=box.ROUNDED)
        table.add_column("Version", style="cyan")
        table.add_column("Active", style="green")
        table.add_column("Rules", style="yellow")
        table.add_column("Created", style="white")
        for version in store.list_versions():
            document = store.read_document(version)
            table.add_row(
                str(version),
                "*" if version == active else "",
                str(len(document.get("rules", []))),
                str(document.get("created_at", "")),
            )
        self.console.print(table)
        return EXIT_OK

    def cmd_profile_show(self, args) -> int:
        store = ProfileStore(self.cfg.store_path)
        version = args.version or store.active_version()
        if version is None:
            raise ProfileStoreError(f"No active profile in {store.root}; run 'train' first")
        rulebase = store.load(version)
        table = Table(title=f"Profile version {version}", box=box.ROUNDED)
        table.add_column("Rule", style="cyan")
        table.add_column("Origin", style="green")
        table.add_column("Version", style="yellow")
        table.add_column("Support", style="white")
        table.add_column("Intercept", style="white")
        for rule in rulebase.rules:
            table.add_row(str(rule.rule_id), rule.origin.value, str(rule.version),
                          str(rule.support), f"{rule.consequent[0]:.4f}")
        self.console.print(table)
        self.console.print(
            f"{len(rulebase.rules)} rules ({rulebase.offline_count} offline-enhanced), "
            f"{len(rulebase.clusterer)} clusters, mode {rulebase.vector_mode.value}, "
            f"{rulebase.samples_seen} samples seen"
        )
        return EXIT_OK

    def cmd_profile_activate(self, args) -> int:
        store = ProfileStore(self.cfg.store_path)
        store.load(args.version)
        record = store.activate(args.version, event="manual_activation")
        self.console.print(f"Activated version {record.new_version} (was {record.old_version})", style="green")
        return EXIT_OK

    def cmd_registry_dump(self, args) -> int:
        sys.stdout.write(FeatureRegistry.load(self.cfg.registry_path).dump() + "\n")
        return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pdenff",
        description="PDENFF - streaming phishing e-mail filter with evolving fuzzy rules",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python src/cli.py registry dump > registry.json
  python src/cli.py train corpus.csv
  python src/cli.py stream inbox.mbox --label ham
  python src/cli.py serve < message.eml > stamped.eml
  python src/cli.py --set io_mode=socket serve
        """
    )
    parser.add_argument("--config", help="JSON run config file")
    parser.add_argument("--store", dest="store_path", help="profile store directory")
    parser.add_argument("--registry", dest="registry_path", help="feature registry JSON")
    parser.add_argument("--vector-mode", choices=["short", "long"], help="engine input vector")
    parser.add_argument("--log-level", help="logging level (DEBUG, INFO, ...)")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    parser.add_argument("--progress", action="store_true", help="show progress bars")

    commands = parser.add_subparsers(dest="command", required=True)

    def corpus_args(sub):
        sub.add_argument("corpus", help="CSV manifest, mbox file, .eml file, .eml directory or - for stdin")
        sub.add_argument("--label", choices=[label.value for label in Label], help="label for a non-manifest source")

    extract = commands.add_parser("extract", help="dump features of every message")
    corpus_args(extract)
    extract.add_argument("--format", choices=["csv", "json"], default="csv")
    extract.add_argument("--output", help="write the dump to a file instead of stdout")
    extract.set_defaults(handler=PdenffCLI.cmd_extract)

    train = commands.add_parser("train", help="build and activate the initial profile")
    corpus_args(train)
    train.set_defaults(handler=PdenffCLI.cmd_train)

    stream = commands.add_parser("stream", help="prequential evaluation with online learning")
    corpus_args(stream)
    stream.add_argument("--report-every", type=int, help="log a live report every N messages")
    stream.add_argument("--output", help="write the final report record as JSON")
    stream.set_defaults(handler=PdenffCLI.cmd_stream)

    serve = commands.add_parser("serve", help="run as a mail filter (pipe or socket mode)")
    serve.add_argument("--io-mode", choices=["pipe", "socket"])
    serve.add_argument("--socket", dest="socket_address", help="Unix socket path or 127.0.0.1:PORT")
    serve.set_defaults(handler=PdenffCLI.cmd_serve)

    profile = commands.add_parser("profile", help="inspect and activate profile versions")
    profile_commands = profile.add_subparsers(dest="profile_command", required=True)
    profile_commands.add_parser("list", help="list versions").set_defaults(handler=PdenffCLI.cmd_profile_list)
    show = profile_commands.add_parser("show", help="summarize a version (default: active)")
    show.add_argument("version", type=int, nargs="?")
    show.set_defaults(handler=PdenffCLI.cmd_profile_show)
    activate = profile_commands.add_parser("activate", help="make a stored version active")
    activate.add_argument("version", type=int)
    activate.set_defaults(handler=PdenffCLI.cmd_profile_activate)

    registry = commands.add_parser("registry", help="feature registry tools")
    registry_commands = registry.add_subparsers(dest="registry_command", required=True)
    registry_commands.add_parser("dump", help="print the registry JSON").set_defaults(handler=PdenffCLI.cmd_registry_dump)
    return parser


def _flag_overrides(args) -> Dict[str, Any]:
    flags = parse_overrides(args.overrides)
    for key in ("store_path", "registry_path", "log_level"):
        if getattr(args, key, None) is not None:
            flags[key] = getattr(args, key)
    if args.vector_mode is not None:
        flags["vector_mode"] = args.vector_mode
    if getattr(args, "io_mode", None) is not None:
        flags["io_mode"] = args.io_mode
    if getattr(args, "socket_address", None) is not None:
        flags["socket_address"] = args.socket_address
    return flags


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point"""
    args = build_parser().parse_args(argv)
    if getattr(args, "corpus", None) == "-":
        args.corpus = sys.stdin.buffer

    console = Console(stderr=True)
    try:
        cfg = load_run_config(args.config, _flag_overrides(args))
    except ConfigError as e:
        console.print(f"Configuration error: {e}", style="red")
        return EXIT_USAGE
    problems = validate_config(cfg)
    if problems:
        for problem in problems:
            console.print(f"Configuration error: {problem}", style="red")
        return EXIT_USAGE

    setup_logging(cfg.log_level)
    try:
        return args.handler(PdenffCLI(cfg, console), args)
    except PdenffError as e:
        console.print(f"Error [{e.code}]: {e}", style="red")
        logger.error(f"{args.command} failed: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

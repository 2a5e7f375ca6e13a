"""Main entry point for the MTD simulator CLI and MCP server."""

import argparse
import csv
import json
import logging
import sys
from typing import List, NoReturn, Optional

from . import mtd_tool
from .config import get_config
from .scenario import CSV_HEADER, ReportFormat, csv_rows, emit
from .utils.errors import InvalidInputError, InvariantViolation, format_error

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_INVARIANT = 2


class _Parser(argparse.ArgumentParser):
    """Usage errors count as invalid input."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mtd-sim", description="Moving target defense simulator")
    parser.add_argument(
        "--log-level",
        default=None,
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Set the logging level (default: MTD_LOG_LEVEL or INFO)",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="Run a scenario to its horizon")
    p.add_argument("scenario", help="Scenario file or shipped scenario name")
    p.add_argument("--seed", type=int, default=None, help="Override the scenario seed")
    p.add_argument("--out", default=None, help="Report path (default: stdout)")
    p.add_argument("--format", default="json", choices=[f.value for f in ReportFormat])

    p = sub.add_parser("risk", help="Score the security risk of scan reports")
    p.add_argument("reports", nargs="+", help="Scan-report files")
    p.add_argument("--table", default=None, help="CWE risk-score table")
    p.add_argument(
        "--method",
        default="orrm_sum",
        choices=["orrm_sum", "orrm_mean", "cvss_average", "cvss_shrinkage", "all"],
    )

    p = sub.add_parser("plan", help="Plan a diversification over scan reports")
    p.add_argument("reports", nargs="+", help="Scan-report files, every variant of every service")
    p.add_argument("--index", required=True, help="Diversification index m_d:m")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("matrix", help="Build the vulnerability correlation matrix")
    p.add_argument("reports", nargs="+", help="Scan-report files")
    p.add_argument("--scope", default="horizontal", choices=["horizontal", "vertical"])
    p.add_argument("--weighted", action="store_true", help="Count-weighted Pearson vectors")

    p = sub.add_parser("throughput", help="Regenerations a provider completes within a window")
    p.add_argument("provider", help="aws, gce, azure, openstack or a profile file")
    p.add_argument("--horizon", type=float, required=True, help="Window length in seconds")

    p = sub.add_parser("serve", help="Start the MCP server")
    p.add_argument(
        "--transport",
        type=str,
        default="stdio",
        choices=["stdio", "sse", "streamable-http"],
        help="Specify the MCP server transport type as stdio or sse or streamable-http.",
    )
    p.add_argument("--host", default="127.0.0.1", help="Host to bind to")
    p.add_argument("--port", type=int, default=8000, help="Port to listen on")
    return parser


def _print_json(data) -> None:
    print(json.dumps(data, indent=2))


def _run(args: argparse.Namespace) -> None:
    report = mtd_tool.run_summary(args.scenario, args.seed)
    if args.out:
        emit(report, args.format, args.out)
    elif args.format == ReportFormat.CSV.value:
        writer = csv.writer(sys.stdout)
        writer.writerow(CSV_HEADER)
        writer.writerows(csv_rows(report))
    else:
        print(report.model_dump_json(indent=2))


def _serve(args: argparse.Namespace) -> None:
    from .server import app

    transport = args.transport
    logger.info(f"Starting MTD MCP server with {transport} mode...")

    run_kwargs: dict = {}
    if transport in {"sse", "streamable-http"}:
        run_kwargs["host"] = args.host
        run_kwargs["port"] = args.port

    app.run(transport=transport, **run_kwargs)


def dispatch(args: argparse.Namespace) -> None:
    if args.command == "run":
        _run(args)
    elif args.command == "risk":
        reports = mtd_tool.load_reports(args.reports)
        _print_json(mtd_tool.risk_summary(reports, args.method, args.table))
    elif args.command == "plan":
        reports = mtd_tool.load_reports(args.reports)
        _print_json(mtd_tool.plan_summary(reports, args.index, args.seed))
    elif args.command == "matrix":
        reports = mtd_tool.load_reports(args.reports)
        _print_json(mtd_tool.correlation_summary(reports, args.scope, args.weighted or None))
    elif args.command == "throughput":
        _print_json(mtd_tool.throughput_summary(args.provider, args.horizon))
    elif args.command == "serve":
        _serve(args)


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)

    try:
        log_level = args.log_level or get_config().log_level
    except ValueError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_INVALID

    # Configure logging
    logging.basicConfig(
        level=getattr(logging, log_level),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )

    try:
        dispatch(args)
    except InvariantViolation as e:
        print(format_error(e), file=sys.stderr)
        return EXIT_INVARIANT
    except (InvalidInputError, OSError, ValueError) as e:
        print(format_error(e), file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

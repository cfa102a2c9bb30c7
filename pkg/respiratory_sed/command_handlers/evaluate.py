"""``evaluate`` command: score a system event file against references."""

from __future__ import annotations

import argparse
import os

from ..events import evaluate
from ..storage import read_events, write_json
from .utils import add_settings_arguments, format_report, settings_from_args

REPORT_NAME = "report.json"


def register_evaluate(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("evaluate", help="Collared event-based F1 and error rate.")
    parser.add_argument("--ref", required=True, help="Reference events (JSON lines).")
    parser.add_argument("--sys", required=True, help="System events (JSON lines).")
    parser.add_argument("--out-dir", help="Also write report.json here.")
    add_settings_arguments(parser)
    parser.set_defaults(handler=handle_evaluate)


def handle_evaluate(args: argparse.Namespace) -> int:
    settings = settings_from_args(args)
    references = read_events(args.ref)
    predictions = read_events(args.sys)
    report = evaluate(references, predictions, settings.dataset.classes, settings.decode)
    print(format_report(report))
    if args.out_dir:
        write_json(os.path.join(args.out_dir, REPORT_NAME), report.to_dict())
    return 0

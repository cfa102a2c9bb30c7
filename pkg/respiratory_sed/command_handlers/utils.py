"""Shared utilities for command handlers."""

from __future__ import annotations

import argparse
import os
from typing import Any, Dict, List

from ..config import Settings, get_settings, load_settings
from ..events import ClassMetrics, EvalReport

_REPORT_COLUMNS = (
    ("class", 10),
    ("Nref", 6),
    ("Nsys", 6),
    ("F", 8),
    ("Pre", 8),
    ("Rec", 8),
    ("ER", 8),
    ("Del", 8),
    ("Ins", 8),
)


def add_settings_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file layered over the defaults.")
    parser.add_argument("--preset", help="Named preset from respiratory_sed/presets, or a JSON path.")
    parser.add_argument("--seed", type=int, help="Override train.seed.")
    parser.add_argument("--use-meta", action="store_true", help="Append position/gender one-hots to node features.")


def cli_overrides(args: argparse.Namespace) -> Dict[str, Dict[str, Any]]:
    overrides: Dict[str, Dict[str, Any]] = {}
    if getattr(args, "seed", None) is not None:
        overrides.setdefault("train", {})["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        overrides.setdefault("train", {})["epochs"] = args.epochs
    if getattr(args, "use_meta", False):
        overrides.setdefault("model", {})["use_meta"] = True
    if getattr(args, "conf_threshold", None) is not None:
        overrides.setdefault("decode", {})["conf_threshold"] = args.conf_threshold
    return overrides


def settings_from_args(args: argparse.Namespace) -> Settings:
    overrides = cli_overrides(args)
    if args.config is None and args.preset is None and not overrides:
        return get_settings()
    return load_settings(config_path=args.config, preset=args.preset, overrides=overrides)


def manifest_dir(path: str) -> str:
    return os.path.dirname(os.path.abspath(path))


def format_cell(value: str, width: int) -> str:
    if len(value) <= width:
        return value.ljust(width)
    if width <= 3:
        return value[:width]
    return (value[: width - 3] + "...").ljust(width)


def _report_row(name: str, values: ClassMetrics) -> str:
    cells = [
        name,
        str(values.n_ref),
        str(values.n_sys),
        f"{values.f1:.4f}",
        f"{values.precision:.4f}",
        f"{values.recall:.4f}",
        f"{values.er:.4f}",
        f"{values.deletion_rate:.4f}",
        f"{values.insertion_rate:.4f}",
    ]
    return " ".join(format_cell(cell, width) for cell, (_, width) in zip(cells, _REPORT_COLUMNS)).rstrip()


def format_report(report: EvalReport) -> str:
    lines: List[str] = [" ".join(format_cell(name, width) for name, width in _REPORT_COLUMNS).rstrip()]
    lines.append("-" * len(lines[0]))
    for name, values in report.classes.items():
        lines.append(_report_row(name, values))
    if report.overall is not None:
        lines.append(_report_row("overall", report.overall))
        lines.append(f"overall F1={report.overall.f1:.4f} ER={report.overall.er:.4f}")
    return "\n".join(lines)

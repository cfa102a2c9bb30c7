"""Command line registrations for the respiratory event detector."""

from __future__ import annotations

import argparse
import logging
from typing import Sequence

from .anchors import AnchorError
from .command_handlers import (
    register_evaluate,
    register_inspect,
    register_predict,
    register_prepare,
    register_train,
)
from .config import ConfigError
from .features import FeatureError
from .graphify import GraphError
from .storage import CheckpointError, ManifestError
from .trainer import TrainingAborted

logger = logging.getLogger(__name__)

_EXPECTED_ERRORS = (
    AnchorError,
    CheckpointError,
    ConfigError,
    FeatureError,
    GraphError,
    ManifestError,
    TrainingAborted,
    OSError,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="respiratory_sed", description="Respiratory sound event detection.")
    subparsers = parser.add_subparsers(dest="command", required=True)
    register_prepare(subparsers)
    register_train(subparsers)
    register_evaluate(subparsers)
    register_predict(subparsers)
    register_inspect(subparsers)
    return parser


def run_command(argv: Sequence[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except SystemExit as exc:
        return int(exc.code or 0)

    logger.debug("Running %s with %s.", args.command, vars(args))
    try:
        return args.handler(args)
    except _EXPECTED_ERRORS as exc:
        logger.error("%s failed: %s", args.command, exc)
        return 1

"""``train`` command."""

from __future__ import annotations

import argparse
import logging

from ..storage import read_manifest
from ..trainer import fit
from .utils import add_settings_arguments, manifest_dir, settings_from_args

logger = logging.getLogger(__name__)


def register_train(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("train", help="Train a detector on a manifest.")
    parser.add_argument("--manifest", required=True, help="Manifest JSON-lines file.")
    parser.add_argument("--out-dir", required=True, help="Run directory for logs and checkpoints.")
    parser.add_argument("--checkpoint", help="Resume from this checkpoint.")
    parser.add_argument("--epochs", type=int, help="Override train.epochs.")
    add_settings_arguments(parser)
    parser.set_defaults(handler=handle_train)


def handle_train(args: argparse.Namespace) -> int:
    settings = settings_from_args(args)
    records = read_manifest(args.manifest, check_paths=True)
    result = fit(settings, records, manifest_dir(args.manifest), args.out_dir, resume=args.checkpoint)
    logger.info(
        "Finished %d steps; best validation F1 %.4f at epoch %d. Run directory: %s",
        result.steps,
        result.best_f1,
        result.best_epoch,
        result.run_dir,
    )
    return 0

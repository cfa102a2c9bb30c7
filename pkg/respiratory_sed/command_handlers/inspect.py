"""``inspect`` command: duration histograms, loss curves, anchor dumps and model size."""

from __future__ import annotations

import argparse
import logging
import os

from .. import anchors as anchor_ops
from ..config import settings_from_dict
from ..dataset import check_vocabulary
from ..detector import build_model
from ..plots import plot_duration_histograms, plot_loss_curves
from ..storage import load_checkpoint, read_manifest, write_lines
from ..trainer import LOSS_LOG, partition_parameters
from .utils import add_settings_arguments, settings_from_args

logger = logging.getLogger(__name__)


def register_inspect(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("inspect", help="Static plots and model/anchor summaries.")
    parser.add_argument("--manifest", help="Plot per-class event duration distributions.")
    parser.add_argument("--run-dir", help="Plot loss curves from RUN_DIR/losses.csv.")
    parser.add_argument("--checkpoint", help="Report parameter counts and serialized size.")
    parser.add_argument("--dump-anchors", action="store_true", help="With --manifest, write anchor assignments per clip.")
    parser.add_argument("--out-dir", default="plots", help="Where images and dumps go.")
    add_settings_arguments(parser)
    parser.set_defaults(handler=handle_inspect)


def _dump_anchors(records, settings, out_dir: str) -> int:
    check_vocabulary(records, settings.dataset.classes)
    vocab = list(settings.dataset.classes)
    target_dir = os.path.join(out_dir, "anchors")
    for record in records:
        anchor_set = anchor_ops.generate(record["duration_s"], settings.anchors)
        truth = [((event["onset_s"], event["offset_s"]), vocab.index(event["label"])) for event in record["events"]]
        labels = anchor_ops.assign(anchor_set, truth, settings.anchors.iou_threshold)
        write_lines(os.path.join(target_dir, f"{record['clip_id']}.tsv"), anchor_ops.anchor_dump_rows(anchor_set, labels))
    return len(records)


def _model_size(checkpoint: str) -> None:
    payload = load_checkpoint(checkpoint)
    model = build_model(settings_from_dict(payload["settings"]))
    load_checkpoint(checkpoint, model)
    node_params, interval_params = partition_parameters(model)
    node_count = sum(parameter.numel() for parameter in node_params)
    interval_count = sum(parameter.numel() for parameter in interval_params)
    logger.info(
        "Parameters: %d node group, %d interval group, %d total; checkpoint %.2f MB.",
        node_count,
        interval_count,
        node_count + interval_count,
        os.path.getsize(checkpoint) / (1024 * 1024),
    )
    print(f"node={node_count} interval={interval_count} total={node_count + interval_count}")


def handle_inspect(args: argparse.Namespace) -> int:
    if not (args.manifest or args.run_dir or args.checkpoint):
        logger.error("inspect needs at least one of --manifest, --run-dir or --checkpoint.")
        return 2
    settings = settings_from_args(args)
    if args.manifest:
        records = read_manifest(args.manifest)
        paths = plot_duration_histograms(records, settings.dataset.classes, args.out_dir)
        print("\n".join(paths))
        if args.dump_anchors:
            logger.info("Dumped anchors for %d clips.", _dump_anchors(records, settings, args.out_dir))
    if args.run_dir:
        print(plot_loss_curves(os.path.join(args.run_dir, LOSS_LOG), os.path.join(args.out_dir, "loss_curves.png")))
    if args.checkpoint:
        _model_size(args.checkpoint)
    return 0

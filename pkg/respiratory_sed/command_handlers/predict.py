"""``predict`` command: decode events for manifest clips with a trained checkpoint."""

from __future__ import annotations

import argparse
import logging
import os
from typing import Dict, Iterator

import numpy as np

from ..config import settings_from_dict
from ..dataset import reference_events
from ..detector import build_model
from ..events import evaluate
from ..storage import load_checkpoint, read_manifest, write_events, write_json, write_lines
from ..trainer import ClipDataset, make_loader, predict_clips
from ..types import IntervalArrays
from .utils import cli_overrides, format_report, manifest_dir

logger = logging.getLogger(__name__)

PREDICTIONS_NAME = "predictions.jsonl"
REFERENCES_NAME = "references.jsonl"
RAW_DUMP_NAME = "anchors_refined.tsv"
REPORT_NAME = "report.json"


def register_predict(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("predict", help="Write decoded events for manifest clips.")
    parser.add_argument("--manifest", required=True, help="Manifest JSON-lines file.")
    parser.add_argument("--checkpoint", required=True, help="Checkpoint written by train.")
    parser.add_argument("--out-dir", required=True, help="Where predictions.jsonl and report.json go.")
    parser.add_argument("--split", help="Only predict clips of this split.")
    parser.add_argument("--conf-threshold", type=float, help="Override decode.conf_threshold.")
    parser.add_argument("--dump-raw", action="store_true", help="Also dump every refined anchor before decoding.")
    parser.set_defaults(handler=handle_predict)


def _raw_rows(raw: Dict[str, IntervalArrays]) -> Iterator[str]:
    for clip_id in sorted(raw):
        arrays = raw[clip_id]
        counters: Dict[int, int] = {}
        for row in range(len(arrays.start)):
            scale = int(arrays.scale[row])
            index = counters.get(scale, 0)
            counters[scale] = index + 1
            logits = arrays.cls_logits[row]
            yield "\t".join(
                [
                    clip_id,
                    str(scale),
                    str(index),
                    f"{arrays.start[row]:.4f}",
                    f"{arrays.end[row]:.4f}",
                    f"{arrays.conf_logit[row]:.6f}",
                    str(int(np.argmax(logits))),
                    ",".join(f"{value:.6f}" for value in logits),
                ]
            )


def handle_predict(args: argparse.Namespace) -> int:
    payload = load_checkpoint(args.checkpoint)
    settings = settings_from_dict(payload["settings"], cli_overrides(args))
    model = build_model(settings)
    load_checkpoint(args.checkpoint, model)

    records = read_manifest(args.manifest, check_paths=True)
    if args.split:
        records = [record for record in records if record["split"] == args.split]
    loader = make_loader(ClipDataset(records, manifest_dir(args.manifest), settings), settings, shuffle=False)
    predictions, raw = predict_clips(model, loader, settings)

    write_events(os.path.join(args.out_dir, PREDICTIONS_NAME), predictions)
    references = reference_events(records)
    write_events(os.path.join(args.out_dir, REFERENCES_NAME), references)
    if args.dump_raw:
        write_lines(os.path.join(args.out_dir, RAW_DUMP_NAME), _raw_rows(raw))

    report = evaluate(references, predictions, settings.dataset.classes, settings.decode)
    write_json(os.path.join(args.out_dir, REPORT_NAME), report.to_dict())
    print(format_report(report))
    logger.info("Wrote predictions for %d clips to %s.", len(predictions), args.out_dir)
    return 0

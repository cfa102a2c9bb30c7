"""``prepare`` command: ingest a dataset (or synthesize one) and warm the feature cache."""

from __future__ import annotations

import argparse
import logging
import os

from tqdm import tqdm

from ..dataset import ADAPTERS, check_vocabulary, default_label_map, ingest
from ..storage import write_manifest
from ..synthetic import MANIFEST_NAME, generate_dataset
from ..trainer import ClipDataset
from .utils import add_settings_arguments, manifest_dir, settings_from_args

logger = logging.getLogger(__name__)


def register_prepare(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("prepare", help="Build a manifest and precompute spectrogram caches.")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--dataset-dir", help="Directory holding audio and annotations.")
    source.add_argument("--synthetic", type=int, metavar="N", help="Generate N synthetic clips instead.")
    parser.add_argument("--format", choices=sorted(ADAPTERS), default="sprsound", help="Annotation layout.")
    parser.add_argument("--out-dir", required=True, help="Where the manifest (and synthetic audio) go.")
    parser.add_argument("--manifest", help="Manifest path; defaults to OUT_DIR/manifest.jsonl.")
    parser.add_argument("--no-cache", action="store_true", help="Skip spectrogram precomputation.")
    add_settings_arguments(parser)
    parser.set_defaults(handler=handle_prepare)


def handle_prepare(args: argparse.Namespace) -> int:
    settings = settings_from_args(args)
    manifest_path = args.manifest or os.path.join(args.out_dir, MANIFEST_NAME)
    if args.synthetic is not None:
        records = generate_dataset(
            args.out_dir,
            n_clips=args.synthetic,
            sample_rate=settings.features.sample_rate,
            seed=settings.train.seed,
        )
        if os.path.abspath(manifest_path) != os.path.abspath(os.path.join(args.out_dir, MANIFEST_NAME)):
            for record in records:
                record["audio_path"] = os.path.abspath(os.path.join(args.out_dir, record["audio_path"]))
            write_manifest(manifest_path, records)
    else:
        label_map = default_label_map(settings.dataset.classes)
        records = ingest(args.dataset_dir, args.format, label_map, settings.dataset.val_fraction)
        check_vocabulary(records, settings.dataset.classes)
        write_manifest(manifest_path, records)
    logger.info("Manifest with %d clips written to %s.", len(records), manifest_path)

    if not args.no_cache:
        warm = ClipDataset(records, manifest_dir(manifest_path), settings)
        for index in tqdm(range(len(warm)), desc="features", disable=None):
            warm[index]
        logger.info("Cached spectrograms for %d clips.", len(warm))
    return 0

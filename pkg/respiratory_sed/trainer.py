"""Training loop with separate optimizers for the graph trunk and the anchor refiner."""

from __future__ import annotations

import logging
import math
import os
import random
from dataclasses import dataclass
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np
import torch
from torch.optim.lr_scheduler import CosineAnnealingLR, LambdaLR
from torch.utils.data import DataLoader, Dataset
from tqdm import tqdm

from . import anchors as anchor_ops
from .config import Settings
from .dataset import load_clip, reference_events
from .detector import EventGraphDetector, build_model
from .events import EvalReport, decode, evaluate
from .features import augment_randomly, compute_stack, mask_randomly, row_normalize
from .graphify import build_clip_graph, collate, meta_onehot
from .logging_config import attach_run_log, detach_run_log
from .objective import LossReport, compute_losses
from .storage import (
    append_csv_rows,
    load_checkpoint,
    load_feature_cache,
    save_checkpoint,
    save_feature_cache,
    write_json,
)
from .types import AnchorLabels, AnchorSet, BatchGraph, ClipGraph, EventRecord, IntervalArrays, ManifestRecord, Split

logger = logging.getLogger(__name__)

LOSS_LOG = "losses.csv"
CONFIG_SNAPSHOT = "config.json"
LAST_CHECKPOINT = "last.pt"
BEST_CHECKPOINT = "best.pt"


class TrainingAborted(RuntimeError):
    """Raised when a batch produces a non-finite loss."""

    def __init__(self, step: int, clip_ids: Sequence[str]) -> None:
        super().__init__(f"Non-finite loss at step {step} for clips: {', '.join(clip_ids)}")
        self.step = step
        self.clip_ids = list(clip_ids)


def node_lr(step: int, lr0: float = 1e-3, base: float = 0.99, period: int = 126) -> float:
    return lr0 * base ** (step / period)


def interval_lr(step: int, t_max: int, lr0: float = 1e-3, lr_min: float = 2e-4) -> float:
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * step / t_max))


def partition_parameters(model: EventGraphDetector) -> Tuple[List[torch.nn.Parameter], List[torch.nn.Parameter]]:
    """Trunk parameters (node generator, attention, node head) and refiner parameters."""
    return list(model.trunk.parameters()), list(model.refiner.parameters())


class DualOptimizer:
    """Two Adam optimizers stepped together, each with its own schedule."""

    def __init__(self, model: EventGraphDetector, settings: Settings, t_max: int) -> None:
        train = settings.train
        node_params, interval_params = partition_parameters(model)
        self.node = torch.optim.Adam(node_params, lr=train.lr_node)
        self.interval = torch.optim.Adam(interval_params, lr=train.lr_interval)
        self.node_schedule = LambdaLR(
            self.node,
            lambda step: train.node_decay_base ** (step / train.node_decay_period),
        )
        self.interval_schedule = CosineAnnealingLR(self.interval, T_max=max(1, t_max), eta_min=train.lr_interval_min)
        self.t_max = max(1, t_max)

    def zero_grad(self) -> None:
        self.node.zero_grad(set_to_none=True)
        self.interval.zero_grad(set_to_none=True)

    def step(self) -> None:
        self.node.step()
        self.interval.step()
        self.node_schedule.step()
        self.interval_schedule.step()

    def current_lrs(self) -> Tuple[float, float]:
        return self.node.param_groups[0]["lr"], self.interval.param_groups[0]["lr"]

    def state_dict(self) -> Dict[str, object]:
        return {
            "node": self.node.state_dict(),
            "interval": self.interval.state_dict(),
            "node_schedule": self.node_schedule.state_dict(),
            "interval_schedule": self.interval_schedule.state_dict(),
        }

    def load_state_dict(self, state: Dict[str, object]) -> None:
        self.node.load_state_dict(state["node"])
        self.interval.load_state_dict(state["interval"])
        self.node_schedule.load_state_dict(state["node_schedule"])
        self.interval_schedule.load_state_dict(state["interval_schedule"])


def build_optimizers(model: EventGraphDetector, settings: Settings, steps_per_epoch: int) -> DualOptimizer:
    t_max = settings.train.t_max or settings.train.epochs * max(1, steps_per_epoch)
    logger.info("Interval learning rate anneals over %d steps.", t_max)
    return DualOptimizer(model, settings, t_max)


def seed_everything(seed: int, deterministic: bool = False) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)


@dataclass
class PreparedClip:
    graph: ClipGraph
    anchors: AnchorSet
    labels: AnchorLabels
    events: List[EventRecord]


@dataclass
class TrainingBatch:
    graph: BatchGraph
    anchors: List[AnchorSet]
    labels: List[AnchorLabels]

    @property
    def clip_ids(self) -> List[str]:
        return self.graph.clip_ids


class ClipDataset(Dataset):
    """Manifest records turned into labelled graphs and anchors.

    Training items are augmented with a generator seeded from
    ``(seed, epoch, index)``, so results do not depend on worker
    scheduling. Items without augmentation go through the feature cache.
    """

    def __init__(
        self,
        records: Sequence[ManifestRecord],
        manifest_dir: str,
        settings: Settings,
        augment: bool = False,
        seed: int = 0,
        use_cache: bool = True,
    ) -> None:
        self.records = list(records)
        self.manifest_dir = manifest_dir
        self.settings = settings
        self.augment = augment and settings.augment.enabled
        self.seed = seed
        self.epoch = 0
        self.use_cache = use_cache
        self.cache_key = settings.section_hash("features")

    def __len__(self) -> int:
        return len(self.records)

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def _cache_path(self, record: ManifestRecord) -> str:
        cache_dir = os.path.join(self.manifest_dir, self.settings.dataset.cache_dir)
        return os.path.join(cache_dir, f"{record['clip_id']}.npz")

    def _stack(self, record: ManifestRecord, rng: np.random.Generator | None):
        feats = self.settings.features
        if rng is None and self.use_cache:
            cached = load_feature_cache(self._cache_path(record), self.cache_key)
            if cached is not None:
                return cached, None
        clip = load_clip(record, self.manifest_dir, feats.sample_rate)
        if rng is not None:
            clip = augment_randomly(clip, self.settings.augment, rng)
        stack = row_normalize(compute_stack(clip, feats))
        if rng is not None:
            stack = mask_randomly(stack, self.settings.augment, rng)
        elif self.use_cache:
            save_feature_cache(self._cache_path(record), stack, self.cache_key)
        return stack, clip.events

    def __getitem__(self, index: int) -> PreparedClip:
        record = self.records[index]
        rng = np.random.default_rng([self.seed, self.epoch, index]) if self.augment else None
        stack, events = self._stack(record, rng)
        if events is None:
            events = [EventRecord(e["onset_s"], e["offset_s"], e["label"]) for e in record["events"]]
        return prepare_clip(stack, events, record, self.settings)


def prepare_clip(stack, events: Sequence[EventRecord], record: ManifestRecord, settings: Settings) -> PreparedClip:
    dataset = settings.dataset
    vocab = list(dataset.classes)
    meta = meta_onehot(record.get("position"), record.get("gender"), dataset.positions, dataset.genders)
    graph = build_clip_graph(
        stack,
        events,
        vocab,
        group=settings.features.frames_per_node,
        meta=meta,
        clip_id=record["clip_id"],
    )
    anchor_set = anchor_ops.generate(stack.source_duration_s, settings.anchors)
    truth = [((event.onset_s, event.offset_s), vocab.index(event.label)) for event in events]
    labels = anchor_ops.assign(anchor_set, truth, settings.anchors.iou_threshold)
    return PreparedClip(graph=graph, anchors=anchor_set, labels=labels, events=list(events))


def collate_clips(items: Sequence[PreparedClip]) -> TrainingBatch:
    return TrainingBatch(
        graph=collate([item.graph for item in items]),
        anchors=[item.anchors for item in items],
        labels=[item.labels for item in items],
    )


def make_loader(dataset: ClipDataset, settings: Settings, shuffle: bool) -> DataLoader:
    generator = torch.Generator()
    generator.manual_seed(settings.train.seed)
    return DataLoader(
        dataset,
        batch_size=settings.train.batch_size,
        shuffle=shuffle,
        collate_fn=collate_clips,
        num_workers=settings.train.num_workers,
        generator=generator,
    )


def train_epoch(
    loader: DataLoader,
    model: EventGraphDetector,
    optimizers: DualOptimizer,
    settings: Settings,
    start_step: int = 0,
) -> Iterator[Tuple[int, LossReport]]:
    """Run one pass over ``loader`` and yield ``(step, LossReport)`` after every update."""
    model.train()
    step = start_step
    for batch in loader:
        outputs = model(batch.graph, batch.anchors)
        loss, report = compute_losses(outputs, batch.graph, batch.labels, settings.loss)
        if not torch.isfinite(loss):
            logger.error("Non-finite loss at step %d; offending clips: %s", step, batch.clip_ids)
            raise TrainingAborted(step, batch.clip_ids)
        optimizers.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), settings.train.grad_clip)
        optimizers.step()
        step += 1
        yield step, report


@torch.no_grad()
def predict_clips(
    model: EventGraphDetector,
    loader: DataLoader,
    settings: Settings,
) -> Tuple[Dict[str, List[EventRecord]], Dict[str, IntervalArrays]]:
    """Decoded events and raw refined anchors for every clip in ``loader``."""
    model.eval()
    vocab = list(settings.dataset.classes)
    events: Dict[str, List[EventRecord]] = {}
    raw: Dict[str, IntervalArrays] = {}
    for batch in loader:
        outputs = model(batch.graph, batch.anchors)
        for clip, clip_id in enumerate(batch.clip_ids):
            arrays = outputs.intervals.to_arrays(clip)
            raw[clip_id] = arrays
            events[clip_id] = decode(arrays, vocab, settings.decode.conf_threshold, settings.decode.nms_iou)
    return events, raw


def validate(
    model: EventGraphDetector,
    loader: DataLoader,
    references: Dict[str, List[EventRecord]],
    settings: Settings,
) -> EvalReport:
    predictions, _ = predict_clips(model, loader, settings)
    return evaluate(references, predictions, settings.dataset.classes, settings.decode)


def checkpoint_payload(
    model: EventGraphDetector,
    optimizers: DualOptimizer | None,
    settings: Settings,
    step: int,
    epoch: int,
    best_f1: float,
) -> Dict[str, object]:
    return {
        "model": model.state_dict(),
        "optimizers": optimizers.state_dict() if optimizers is not None else None,
        "step": step,
        "epoch": epoch,
        "best_f1": best_f1,
        "config_hash": settings.config_hash(),
        "settings": settings.to_dict(),
    }


@dataclass
class FitResult:
    run_dir: str
    steps: int
    best_f1: float
    best_epoch: int


def fit(
    settings: Settings,
    records: Sequence[ManifestRecord],
    manifest_dir: str,
    run_dir: str,
    resume: str | None = None,
) -> FitResult:
    """Train on the ``train`` split, validate each epoch and keep the best checkpoint by overall F1."""
    seed_everything(settings.train.seed, settings.train.deterministic)
    handler = attach_run_log(run_dir)
    try:
        write_json(os.path.join(run_dir, CONFIG_SNAPSHOT), settings.to_dict())
        train_records = [record for record in records if record["split"] == Split.TRAIN.value]
        val_records = [record for record in records if record["split"] == Split.VAL.value]
        if not train_records:
            train_records = list(records)
        if not val_records:
            logger.warning("No validation clips; validating on the training clips.")
            val_records = train_records

        train_set = ClipDataset(train_records, manifest_dir, settings, augment=True, seed=settings.train.seed)
        val_set = ClipDataset(val_records, manifest_dir, settings)
        train_loader = make_loader(train_set, settings, shuffle=True)
        val_loader = make_loader(val_set, settings, shuffle=False)
        references = reference_events(val_records)

        model = build_model(settings).to(settings.train.device)
        optimizers = build_optimizers(model, settings, len(train_loader))
        step, first_epoch, best_f1, best_epoch = 0, 0, -1.0, -1
        if resume:
            payload = load_checkpoint(resume, model, settings.config_hash())
            if payload.get("optimizers"):
                optimizers.load_state_dict(payload["optimizers"])
            step, first_epoch = int(payload["step"]), int(payload["epoch"]) + 1
            best_f1 = float(payload["best_f1"])
            logger.info("Resumed from %s at epoch %d (step %d).", resume, first_epoch, step)

        logger.info("Training on %d clips, validating on %d clips.", len(train_records), len(val_records))
        for epoch in range(first_epoch, settings.train.epochs):
            train_set.set_epoch(epoch)
            rows = []
            progress = tqdm(total=len(train_loader), desc=f"epoch {epoch}", leave=False, disable=None)
            for step, report in train_epoch(train_loader, model, optimizers, settings, start_step=step):
                rows.append(report.as_row(step))
                progress.set_postfix(loss=f"{report.total:.4f}")
                progress.update(1)
            progress.close()
            append_csv_rows(os.path.join(run_dir, LOSS_LOG), rows)

            report = validate(model, val_loader, references, settings)
            f1 = report.overall.f1 if report.overall else 0.0
            write_json(os.path.join(run_dir, "eval", f"epoch_{epoch:04d}.json"), report.to_dict())
            node_rate, interval_rate = optimizers.current_lrs()
            logger.info(
                "Epoch %d: loss %.4f, val F1 %.4f, ER %.4f, lr %.2e / %.2e.",
                epoch,
                rows[-1]["total"] if rows else float("nan"),
                f1,
                report.overall.er if report.overall else float("nan"),
                node_rate,
                interval_rate,
            )
            if f1 > best_f1:
                best_f1, best_epoch = f1, epoch
                save_checkpoint(
                    os.path.join(run_dir, BEST_CHECKPOINT),
                    checkpoint_payload(model, optimizers, settings, step, epoch, best_f1),
                )
            save_checkpoint(
                os.path.join(run_dir, LAST_CHECKPOINT),
                checkpoint_payload(model, optimizers, settings, step, epoch, best_f1),
            )
        return FitResult(run_dir=run_dir, steps=step, best_f1=max(best_f1, 0.0), best_epoch=best_epoch)
    finally:
        detach_run_log(handler)

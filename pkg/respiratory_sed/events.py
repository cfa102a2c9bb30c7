"""Event decoding and collared event-based evaluation."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Mapping, Sequence

import numpy as np
from dcase_util.containers import MetaDataContainer
from scipy.special import expit
from sed_eval.sound_event import EventBasedMetrics

from .anchors import iou
from .config import DecodeConfig
from .types import EventRecord, IntervalArrays

logger = logging.getLogger(__name__)

COLLAR_TOLERANCE = 1e-9


def decode(
    arrays: IntervalArrays,
    vocab: Sequence[str],
    conf_threshold: float = 0.5,
    nms_iou: float = 0.4,
) -> List[EventRecord]:
    """Turn refined anchors of one clip into events.

    Anchors below ``conf_threshold`` or with zero width are dropped; the rest
    go through greedy per-class suppression, where a candidate overlapping an
    already kept event of its class at IoU ``>= nms_iou`` is discarded.
    """
    scores = expit(np.asarray(arrays.conf_logit, dtype=np.float64))
    keep = (scores >= conf_threshold) & (arrays.end > arrays.start)
    if not keep.any():
        return []

    classes = np.argmax(arrays.cls_logits, axis=1)
    events: List[EventRecord] = []
    for class_index in np.unique(classes[keep]):
        candidates = np.flatnonzero(keep & (classes == class_index))
        candidates = candidates[np.argsort(-scores[candidates], kind="stable")]
        kept: List[int] = []
        for candidate in candidates:
            interval = (arrays.start[candidate], arrays.end[candidate])
            if all(iou(interval, (arrays.start[other], arrays.end[other])) < nms_iou for other in kept):
                kept.append(int(candidate))
        events.extend(
            EventRecord(
                onset_s=float(arrays.start[index]),
                offset_s=float(arrays.end[index]),
                label=vocab[int(class_index)],
                score=float(scores[index]),
            )
            for index in kept
        )
    return sorted(events, key=lambda event: (event.onset_s, event.offset_s, event.label))


def _sed_event(event: EventRecord, clip_id: str) -> Dict[str, object]:
    return {"filename": clip_id, "event_label": event.label, "onset": event.onset_s, "offset": event.offset_s}


def _event_list(events: Iterable[EventRecord], clip_id: str) -> MetaDataContainer:
    """Events of one clip in onset order, the order greedy matching walks them in."""
    ordered = sorted(events, key=lambda event: (event.onset_s, event.offset_s))
    return MetaDataContainer([_sed_event(event, clip_id) for event in ordered])


def _event_metrics(labels: Sequence[str], cfg: DecodeConfig, matching: str) -> EventBasedMetrics:
    return EventBasedMetrics(
        event_label_list=list(labels),
        t_collar=cfg.collar + COLLAR_TOLERANCE,
        percentage_of_length=cfg.offset_ratio,
        evaluate_onset=True,
        evaluate_offset=True,
        event_matching_type=matching,
    )


def collar_match(
    ref: EventRecord,
    sys: EventRecord,
    collar: float = 0.2,
    offset_ratio: float = 0.1,
) -> bool:
    """Onset within ``collar``; offset within ``max(collar, offset_ratio * len(ref))``."""
    reference = _sed_event(ref, "")
    estimated = _sed_event(sys, "")
    t_collar = collar + COLLAR_TOLERANCE
    return EventBasedMetrics.validate_onset(reference, estimated, t_collar) and EventBasedMetrics.validate_offset(
        reference, estimated, t_collar, offset_ratio
    )


@dataclass
class MatchCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        return MatchCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def _class_counts(metric: EventBasedMetrics, label: str) -> MatchCounts:
    counts = metric.class_wise[label]
    tp = int(counts["Ntp"])
    return MatchCounts(tp=tp, fp=int(counts["Nsys"]) - tp, fn=int(counts["Nref"]) - tp)


def _match(refs: Sequence[EventRecord], syss: Sequence[EventRecord], cfg: DecodeConfig, matching: str) -> MatchCounts:
    labels = sorted({event.label for event in refs} | {event.label for event in syss})
    if not labels:
        return MatchCounts()
    metric = _event_metrics(labels, cfg, matching)
    metric.evaluate(reference_event_list=_event_list(refs, "clip"), estimated_event_list=_event_list(syss, "clip"))
    total = MatchCounts()
    for label in labels:
        total = total + _class_counts(metric, label)
    return total


def match_events(
    refs: Sequence[EventRecord],
    syss: Sequence[EventRecord],
    cfg: DecodeConfig | None = None,
) -> MatchCounts:
    """Greedy one-to-one matching of one clip, both sides in onset order."""
    return _match(refs, syss, cfg or DecodeConfig(), "greedy")


def match_events_optimal(
    refs: Sequence[EventRecord],
    syss: Sequence[EventRecord],
    cfg: DecodeConfig | None = None,
) -> MatchCounts:
    """Maximum one-to-one matching; an upper bound for :func:`match_events`."""
    return _match(refs, syss, cfg or DecodeConfig(), "optimal")


@dataclass
class ClassMetrics:
    n_ref: int
    n_sys: int
    tp: int
    fp: int
    fn: int
    f1: float
    precision: float
    recall: float
    er: float
    substitutions: int
    deletions: int
    insertions: int
    deletion_rate: float
    insertion_rate: float


def metrics(tp: int, fp: int, fn: int, n_ref: int, n_sys: int | None = None) -> ClassMetrics:
    """F1 and error rate with substitutions ``min(FN, FP)``; rates divide by ``max(n_ref, 1)``."""
    f1_denominator = 2 * tp + fp + fn
    substitutions = min(fn, fp)
    deletions = max(0, fn - fp)
    insertions = max(0, fp - fn)
    reference = max(n_ref, 1)
    return ClassMetrics(
        n_ref=n_ref,
        n_sys=tp + fp if n_sys is None else n_sys,
        tp=tp,
        fp=fp,
        fn=fn,
        f1=2 * tp / f1_denominator if f1_denominator else 0.0,
        precision=tp / (tp + fp) if tp + fp else 0.0,
        recall=tp / (tp + fn) if tp + fn else 0.0,
        er=(substitutions + deletions + insertions) / reference,
        substitutions=substitutions,
        deletions=deletions,
        insertions=insertions,
        deletion_rate=deletions / reference,
        insertion_rate=insertions / reference,
    )


@dataclass
class EvalReport:
    classes: Dict[str, ClassMetrics] = field(default_factory=dict)
    overall: ClassMetrics | None = None
    greedy_shortfall: int = 0

    def to_dict(self) -> Dict[str, object]:
        return {
            "classes": {name: asdict(value) for name, value in self.classes.items()},
            "overall": asdict(self.overall) if self.overall else None,
            "greedy_shortfall": self.greedy_shortfall,
        }


def evaluate(
    refs_by_clip: Mapping[str, Sequence[EventRecord]],
    syss_by_clip: Mapping[str, Sequence[EventRecord]],
    vocab: Sequence[str],
    cfg: DecodeConfig | None = None,
) -> EvalReport:
    """Class-wise and micro-averaged metrics over every clip in either mapping.

    Counts are summed over clips before the rates are taken, so the result
    does not depend on clip or record order. Labels outside ``vocab`` are
    scored as extra classes after a warning.
    """
    cfg = cfg or DecodeConfig()
    seen = {
        event.label
        for by_clip in (refs_by_clip, syss_by_clip)
        for clip_events in by_clip.values()
        for event in clip_events
    }
    extra = sorted(seen - set(vocab))
    if extra:
        logger.warning("Scoring labels outside the vocabulary as extra classes: %s", ", ".join(extra))
    labels = list(vocab) + extra

    greedy = _event_metrics(labels, cfg, "greedy")
    optimal = _event_metrics(labels, cfg, "optimal")
    for clip_id in sorted(set(refs_by_clip) | set(syss_by_clip)):
        refs = _event_list(refs_by_clip.get(clip_id, ()), clip_id)
        syss = _event_list(syss_by_clip.get(clip_id, ()), clip_id)
        greedy.evaluate(reference_event_list=refs, estimated_event_list=syss)
        optimal.evaluate(reference_event_list=refs, estimated_event_list=syss)

    shortfall = sum(_class_counts(optimal, label).tp - _class_counts(greedy, label).tp for label in labels)
    if shortfall:
        logger.info("Greedy matching found %d fewer true positives than optimal matching.", shortfall)
    report = EvalReport(greedy_shortfall=shortfall)
    overall = MatchCounts()
    for label in labels:
        counts = _class_counts(greedy, label)
        report.classes[label] = metrics(counts.tp, counts.fp, counts.fn, counts.tp + counts.fn)
        overall = overall + counts
    report.overall = metrics(overall.tp, overall.fp, overall.fn, overall.tp + overall.fn)
    return report

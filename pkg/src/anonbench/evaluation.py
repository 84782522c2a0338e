"""Greedy IoU matching and AP / AR / bucketed-recall metrics.

Detections are matched to ground truth per frame, greedily in descending
score order, at a single IoU threshold (0.5 by default). AP uses COCO-style
101-point interpolation over the globally score-ranked detection list; AR is
plain recall at the configured threshold.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataset import UNRESOLVED, Detection, GroundTruthBox, GroundTruthSet
from .geometry import iou

# exact i/100 doubles; matters for >= comparisons when recall lands on a level
RECALL_LEVELS = np.arange(101) / 100.0


@dataclass(frozen=True)
class EvaluationConfig:
    iou_threshold: float = 0.5
    max_detections_per_frame: int | None = None
    category: str = "face"

    def __post_init__(self):
        if not 0.0 < self.iou_threshold < 1.0:
            raise ValueError(f"iou_threshold must be in (0, 1), got {self.iou_threshold}")


@dataclass(frozen=True)
class MatchedDetection:
    frame_id: str
    det_index: int  # input-order index within the frame
    score: float
    matched_box_id: str | None
    iou: float


@dataclass
class MatchResult:
    matches: list[MatchedDetection]
    unmatched_gt: set[str]
    total_gt: int

    @property
    def matched_gt(self) -> set[str]:
        return {m.matched_box_id for m in self.matches if m.matched_box_id is not None}

    def merge(self, other: "MatchResult") -> "MatchResult":
        return MatchResult(
            matches=self.matches + other.matches,
            unmatched_gt=self.unmatched_gt | other.unmatched_gt,
            total_gt=self.total_gt + other.total_gt,
        )


@dataclass(frozen=True)
class BucketStat:
    key: str
    label: str
    gt_count: int
    matched_count: int
    recall: float


@dataclass
class EvaluationReport:
    ap: float
    ar: float
    buckets: list[BucketStat] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "ap": self.ap,
            "ar": self.ar,
            "buckets": [
                {
                    "key": b.key,
                    "label": b.label,
                    "gt_count": b.gt_count,
                    "matched_count": b.matched_count,
                    "recall": b.recall,
                }
                for b in self.buckets
            ],
        }


def match_frame(
    detections: list[Detection],
    gt_boxes: list[GroundTruthBox],
    cfg: EvaluationConfig,
) -> MatchResult:
    """Greedy per-frame assignment: best-IoU unmatched GT, descending score order."""
    ranked = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    if cfg.max_detections_per_frame is not None:
        ranked = ranked[: cfg.max_detections_per_frame]
    taken: set[int] = set()
    matches: list[MatchedDetection] = []
    for di in ranked:
        det = detections[di]
        best_gi = -1
        best_iou = 0.0
        for gi, gt in enumerate(gt_boxes):
            if gi in taken:
                continue
            overlap = iou(det.box, gt.box)
            if overlap >= cfg.iou_threshold and overlap > best_iou:
                best_iou = overlap
                best_gi = gi
        if best_gi >= 0:
            taken.add(best_gi)
            matches.append(
                MatchedDetection(det.frame_id, di, det.score, gt_boxes[best_gi].box_id, best_iou)
            )
        else:
            matches.append(MatchedDetection(det.frame_id, di, det.score, None, 0.0))
    unmatched = {gt.box_id for gi, gt in enumerate(gt_boxes) if gi not in taken}
    return MatchResult(matches=matches, unmatched_gt=unmatched, total_gt=len(gt_boxes))


def greedy_match(
    detections_by_frame: dict[str, list[Detection]],
    gts_by_frame: dict[str, list[GroundTruthBox]],
    cfg: EvaluationConfig,
) -> MatchResult:
    """Match every frame independently and merge; frames missing on either side count."""
    result = MatchResult(matches=[], unmatched_gt=set(), total_gt=0)
    for frame_id in sorted(set(detections_by_frame) | set(gts_by_frame)):
        frame_result = match_frame(
            detections_by_frame.get(frame_id, []), gts_by_frame.get(frame_id, []), cfg
        )
        result = result.merge(frame_result)
    return result


def average_precision(match: MatchResult) -> float:
    """COCO-style 101-point interpolated AP over the global score ranking."""
    if match.total_gt == 0 or not match.matches:
        return 0.0
    ordered = sorted(match.matches, key=lambda m: (-m.score, m.frame_id, m.det_index))
    tp = np.array([m.matched_box_id is not None for m in ordered], dtype=np.float64)
    tp_cum = np.cumsum(tp)
    ranks = np.arange(1, len(ordered) + 1, dtype=np.float64)
    precision = tp_cum / ranks
    recall = tp_cum / match.total_gt
    # best precision achievable at-or-beyond each rank, then sample at 101 recall levels
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_LEVELS, side="left")
    sampled = np.where(idx < len(ordered), envelope[np.minimum(idx, len(ordered) - 1)], 0.0)
    return float(sampled.mean())


def average_recall(match: MatchResult) -> float:
    """Fraction of ground-truth boxes matched at the configured IoU threshold."""
    if match.total_gt == 0:
        warnings.warn("average_recall over zero ground-truth boxes is vacuously 1.0")
        return 1.0
    return len(match.matched_gt) / match.total_gt


def bucketed_recall(
    match: MatchResult, gts: GroundTruthSet, keys: list[str], category: str | None = None
) -> list[BucketStat]:
    """Recall restricted to ground-truth boxes carrying each (key, label) pair.

    Boxes whose vote for a key ended "unresolved" are excluded from that key's
    buckets; boxes missing the key entirely are simply not bucketed.
    """
    matched = match.matched_gt
    stats: list[BucketStat] = []
    boxes = [b for b in gts.boxes if category is None or b.category == category]
    for key in keys:
        labelled = [b for b in boxes if key in b.attributes and b.attributes[key] != UNRESOLVED]
        if not labelled:
            warnings.warn(f"attribute key {key!r} present in zero ground-truth boxes")
            continue
        for label in sorted({b.attributes[key] for b in labelled}):
            bucket = [b for b in labelled if b.attributes[key] == label]
            hit = sum(1 for b in bucket if b.box_id in matched)
            stats.append(
                BucketStat(
                    key=key,
                    label=label,
                    gt_count=len(bucket),
                    matched_count=hit,
                    recall=hit / len(bucket),
                )
            )
    return stats


def evaluate(
    gts: GroundTruthSet,
    detections: list[Detection],
    cfg: EvaluationConfig,
    bucket_keys: list[str] | None = None,
) -> EvaluationReport:
    """Run the full protocol for one category: match, AP, AR, optional buckets."""
    dets_by_frame: dict[str, list[Detection]] = {}
    for d in detections:
        if d.category == cfg.category:
            dets_by_frame.setdefault(d.frame_id, []).append(d)
    gts_by_frame: dict[str, list[GroundTruthBox]] = {}
    for b in gts.boxes:
        if b.category == cfg.category:
            gts_by_frame.setdefault(b.frame_id, []).append(b)
    match = greedy_match(dets_by_frame, gts_by_frame, cfg)
    return EvaluationReport(
        ap=average_precision(match),
        ar=average_recall(match),
        buckets=bucketed_recall(match, gts, bucket_keys or [], category=cfg.category),
    )

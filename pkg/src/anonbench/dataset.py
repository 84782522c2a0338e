"""Ingestion and validation of ground truth, detections, and annotator reviews.

All files are UTF-8 JSON. Unknown fields are ignored with a warning; schema
violations are errors that name the offending record.
"""

from __future__ import annotations

import json
import re
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from .geometry import BoundingBox

CATEGORIES = ("face", "license_plate")
UNRESOLVED = "unresolved"

_ATTR_KEY_RE = re.compile(r"^[a-z][a-z0-9_]*$")


class SchemaError(ValueError):
    """Raised when an input file violates the interchange schema."""


@dataclass(frozen=True)
class FrameInfo:
    frame_id: str
    width: int
    height: int


@dataclass(frozen=True)
class GroundTruthBox:
    frame_id: str
    box_id: str
    box: BoundingBox
    category: str
    attributes: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Detection:
    frame_id: str
    box: BoundingBox
    category: str
    score: float


@dataclass
class GroundTruthSet:
    """Validated, immutable-by-convention collection of annotated boxes."""

    frames: dict[str, FrameInfo]
    boxes: list[GroundTruthBox]

    def __post_init__(self):
        self._by_id = {b.box_id: b for b in self.boxes}
        self._by_frame = defaultdict(list)
        for b in self.boxes:
            self._by_frame[b.frame_id].append(b)

    def box_by_id(self, box_id: str) -> GroundTruthBox:
        return self._by_id[box_id]

    def boxes_for_frame(self, frame_id: str, category: str | None = None) -> list[GroundTruthBox]:
        boxes = self._by_frame.get(frame_id, [])
        if category is None:
            return list(boxes)
        return [b for b in boxes if b.category == category]

    def category_counts(self) -> Counter:
        return Counter(b.category for b in self.boxes)

    def bucket_histogram(self, key: str) -> Counter:
        """Counts per label of one attribute key; boxes missing the key are skipped."""
        return Counter(b.attributes[key] for b in self.boxes if key in b.attributes)

    def to_json(self) -> dict:
        return {
            "frames": [
                {"frame_id": f.frame_id, "width": f.width, "height": f.height}
                for f in self.frames.values()
            ],
            "boxes": [
                {
                    "box_id": b.box_id,
                    "frame_id": b.frame_id,
                    "category": b.category,
                    "bbox": [b.box.x, b.box.y, b.box.w, b.box.h],
                    "attributes": dict(sorted(b.attributes.items())),
                }
                for b in self.boxes
            ],
        }


@dataclass
class DetectionSet:
    """Detections in stable input order, grouped on demand by frame."""

    detections: list[Detection]

    def __post_init__(self):
        self._by_frame = defaultdict(list)
        for d in self.detections:
            self._by_frame[d.frame_id].append(d)

    def for_frame(self, frame_id: str, category: str | None = None) -> list[Detection]:
        dets = self._by_frame.get(frame_id, [])
        if category is None:
            return list(dets)
        return [d for d in dets if d.category == category]

    def to_json(self) -> dict:
        return {
            "detections": [
                {
                    "frame_id": d.frame_id,
                    "category": d.category,
                    "bbox": [d.box.x, d.box.y, d.box.w, d.box.h],
                    "score": d.score,
                }
                for d in self.detections
            ]
        }


@dataclass
class ReviewSet:
    """Per-box annotator attribute maps, keyed by box_id."""

    reviews: dict[str, list[dict[str, str]]]


@dataclass(frozen=True)
class Conflict:
    box_id: str
    key: str
    votes: dict[str, int]


@dataclass
class ConflictReport:
    conflicts: list[Conflict]

    def to_json(self) -> dict:
        return {
            "conflicts": [
                {"box_id": c.box_id, "key": c.key, "votes": dict(sorted(c.votes.items()))}
                for c in self.conflicts
            ]
        }


def _warn_unknown_fields(record: dict, known: set[str], where: str):
    unknown = set(record) - known
    if unknown:
        warnings.warn(f"{where}: ignoring unknown fields {sorted(unknown)}", stacklevel=3)


def _parse_bbox(raw, where: str) -> BoundingBox:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise SchemaError(f"{where}: bbox must be [x, y, w, h], got {raw!r}")
    try:
        x, y, w, h = (float(v) for v in raw)
    except (TypeError, ValueError):
        raise SchemaError(f"{where}: bbox has non-numeric entries: {raw!r}")
    if w <= 0 or h <= 0:
        raise SchemaError(f"{where}: zero-area box (w={w}, h={h}) rejected")
    return BoundingBox(x=x, y=y, w=w, h=h)


def _parse_attributes(raw, where: str) -> dict[str, str]:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise SchemaError(f"{where}: attributes must be an object")
    attrs = {}
    for key, value in raw.items():
        if not _ATTR_KEY_RE.match(key):
            raise SchemaError(f"{where}: attribute key {key!r} is not lowercase snake_case")
        attrs[key] = str(value)
    return attrs


def _require(record: dict, field_name: str, where: str):
    if field_name not in record:
        raise SchemaError(f"{where}: missing field {field_name!r}")
    return record[field_name]


def _load_json(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: top-level value must be an object")
    return doc


def load_ground_truth(path) -> GroundTruthSet:
    """Load and validate a ground-truth annotation file."""
    doc = _load_json(path)
    _warn_unknown_fields(doc, {"frames", "boxes"}, str(path))
    frames: dict[str, FrameInfo] = {}
    for i, rec in enumerate(doc.get("frames", [])):
        where = f"frames[{i}]"
        frame_id = str(_require(rec, "frame_id", where))
        if frame_id in frames:
            raise SchemaError(f"{where}: duplicate frame_id {frame_id!r}")
        _warn_unknown_fields(rec, {"frame_id", "width", "height"}, where)
        frames[frame_id] = FrameInfo(
            frame_id=frame_id,
            width=int(_require(rec, "width", where)),
            height=int(_require(rec, "height", where)),
        )
    boxes: list[GroundTruthBox] = []
    seen_ids: set[str] = set()
    for i, rec in enumerate(doc.get("boxes", [])):
        where = f"boxes[{i}]"
        _warn_unknown_fields(rec, {"box_id", "frame_id", "category", "bbox", "attributes"}, where)
        box_id = str(_require(rec, "box_id", where))
        frame_id = str(_require(rec, "frame_id", where))
        if not frame_id:
            raise SchemaError(f"{where}: empty frame_id")
        if box_id in seen_ids:
            raise SchemaError(f"{where}: duplicate box_id {box_id!r}")
        seen_ids.add(box_id)
        category = _require(rec, "category", where)
        if category not in CATEGORIES:
            raise SchemaError(f"{where}: unknown category {category!r}")
        boxes.append(
            GroundTruthBox(
                frame_id=frame_id,
                box_id=box_id,
                box=_parse_bbox(_require(rec, "bbox", where), where),
                category=category,
                attributes=_parse_attributes(rec.get("attributes"), where),
            )
        )
    return GroundTruthSet(frames=frames, boxes=boxes)


def load_detections(path) -> DetectionSet:
    """Load and validate a detections file; input order is preserved."""
    doc = _load_json(path)
    _warn_unknown_fields(doc, {"detections"}, str(path))
    detections: list[Detection] = []
    for i, rec in enumerate(doc.get("detections", [])):
        where = f"detections[{i}]"
        _warn_unknown_fields(rec, {"frame_id", "category", "bbox", "score"}, where)
        frame_id = str(_require(rec, "frame_id", where))
        if not frame_id:
            raise SchemaError(f"{where}: empty frame_id")
        category = _require(rec, "category", where)
        if category not in CATEGORIES:
            raise SchemaError(f"{where}: unknown category {category!r}")
        score = _require(rec, "score", where)
        try:
            score = float(score)
        except (TypeError, ValueError):
            raise SchemaError(f"{where}: non-numeric score {score!r}")
        if not 0.0 <= score <= 1.0:
            raise SchemaError(f"{where}: score {score} outside [0, 1]")
        detections.append(
            Detection(
                frame_id=frame_id,
                box=_parse_bbox(_require(rec, "bbox", where), where),
                category=category,
                score=score,
            )
        )
    return DetectionSet(detections=detections)


def load_reviews(path, gts: GroundTruthSet) -> ReviewSet:
    """Load annotator reviews; every review must reference a known box."""
    doc = _load_json(path)
    _warn_unknown_fields(doc, {"reviews"}, str(path))
    reviews: dict[str, list[dict[str, str]]] = defaultdict(list)
    known = {b.box_id for b in gts.boxes}
    for i, rec in enumerate(doc.get("reviews", [])):
        where = f"reviews[{i}]"
        _warn_unknown_fields(rec, {"box_id", "annotator_id", "attributes"}, where)
        box_id = str(_require(rec, "box_id", where))
        if box_id not in known:
            raise SchemaError(f"{where}: review references unknown box {box_id!r}")
        _require(rec, "annotator_id", where)
        reviews[box_id].append(_parse_attributes(rec.get("attributes"), where))
    return ReviewSet(reviews=dict(reviews))


def majority_label(labels: list[str]) -> str | None:
    """Strict-majority winner of a vote, or None when no label clears half."""
    counts = Counter(labels)
    label, count = counts.most_common(1)[0]
    if count * 2 > len(labels):
        return label
    return None


def merge_reviews(gts: GroundTruthSet, reviews: ReviewSet) -> tuple[GroundTruthSet, ConflictReport]:
    """Assign per-box attributes by strict majority vote over annotator reviews.

    For each attribute key, only annotators who supplied that key vote. Keys
    with no strict majority are set to the reserved label "unresolved" and
    recorded in the conflict report. The result is independent of annotator
    order.
    """
    conflicts: list[Conflict] = []
    merged_boxes: list[GroundTruthBox] = []
    for b in gts.boxes:
        box_reviews = reviews.reviews.get(b.box_id, [])
        attrs = dict(b.attributes)
        keys = sorted({k for r in box_reviews for k in r})
        for key in keys:
            labels = [r[key] for r in box_reviews if key in r]
            winner = majority_label(labels)
            if winner is None:
                attrs[key] = UNRESOLVED
                conflicts.append(Conflict(box_id=b.box_id, key=key, votes=dict(Counter(labels))))
            else:
                attrs[key] = winner
        merged_boxes.append(
            GroundTruthBox(
                frame_id=b.frame_id,
                box_id=b.box_id,
                box=b.box,
                category=b.category,
                attributes=attrs,
            )
        )
    return GroundTruthSet(frames=dict(gts.frames), boxes=merged_boxes), ConflictReport(conflicts=conflicts)


def save_json(doc: dict, path):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n", encoding="utf-8")

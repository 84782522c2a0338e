from __future__ import annotations

import json

import numpy as np
import pytest

from anonbench.imaging import ImageBuffer, encode_frame


def write_json(path, doc):
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def gt_doc(boxes, frames=None):
    """Assemble a ground-truth document from (box_id, frame_id, bbox, attrs) tuples."""
    frame_ids = sorted({b[1] for b in boxes}) if frames is None else frames
    return {
        "frames": [{"frame_id": f, "width": 640, "height": 480} for f in frame_ids],
        "boxes": [
            {
                "box_id": box_id,
                "frame_id": frame_id,
                "category": "face",
                "bbox": list(bbox),
                "attributes": attrs or {},
            }
            for box_id, frame_id, bbox, attrs in boxes
        ],
    }


def det_doc(dets):
    """Assemble a detections document from (frame_id, bbox, score) tuples."""
    return {
        "detections": [
            {"frame_id": frame_id, "category": "face", "bbox": list(bbox), "score": score}
            for frame_id, bbox, score in dets
        ]
    }


def random_image(rng, width=32, height=32, channels=3) -> ImageBuffer:
    data = rng.integers(0, 256, size=(height, width, channels), dtype=np.uint8)
    return ImageBuffer(data=data)


@pytest.fixture
def rng():
    return np.random.default_rng(20240824)


@pytest.fixture
def frame_dir(tmp_path, rng):
    """Directory of three deterministic PPM frames with planted bright patches."""
    d = tmp_path / "frames"
    d.mkdir()
    for i in range(3):
        img = random_image(rng, width=48, height=40)
        img.data[10:20, 12:24] = 250  # planted high-contrast patch
        (d / f"frame_{i:03d}.ppm").write_bytes(encode_frame(img))
    return d

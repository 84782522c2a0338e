"""Replay detector: answers the detector wire protocol from a detections file.

Run as `python -m anonbench.echo_detector detections.json`. Useful for testing
pipelines end to end without a real model, and as a template for wrapping one.
"""

from __future__ import annotations

import json
import sys

from . import dataset


def serve(detections_path: str, stdin=None, stdout=None) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    dets = dataset.load_detections(detections_path)
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        request = json.loads(line)
        frame_id = request["frame_id"]
        response = {
            "frame_id": frame_id,
            "detections": [
                {
                    "category": d.category,
                    "bbox": [d.box.x, d.box.y, d.box.w, d.box.h],
                    "score": d.score,
                }
                for d in dets.for_frame(frame_id)
            ],
        }
        stdout.write(json.dumps(response) + "\n")
        stdout.flush()


if __name__ == "__main__":
    if len(sys.argv) != 2:
        print("usage: python -m anonbench.echo_detector detections.json", file=sys.stderr)
        sys.exit(64)
    serve(sys.argv[1])

"""Batch anonymization: discover frames, fetch detections, blur, write, manifest.

Detections come either from a JSON file or from an external detector process
speaking newline-delimited JSON over stdin/stdout. Output bytes are
deterministic and independent of the worker count.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import dataset, geometry, imaging
from .dataset import Detection, DetectionSet
from .geometry import BoundingBox
from .imaging import ImageBuffer

FRAME_EXTENSIONS = (".ppm", ".pgm", ".png")
DEFAULT_DETECTOR_TIMEOUT = 30.0


class PipelineError(RuntimeError):
    """Fatal pipeline failure (missing input, detector breakdown, bad frame)."""


class EmptyInputError(PipelineError):
    """Raised when the input directory contains no supported raster files."""


class DetectorProtocolError(PipelineError):
    """Raised when a detector subprocess violates the line protocol."""


@dataclass(frozen=True)
class PipelineConfig:
    input_dir: Path
    output_dir: Path
    detections_file: Path | None = None
    detector_cmd: tuple[str, ...] | None = None
    margin: float = 0.10
    sigma_scale: float = 0.125
    score_threshold: float = 0.1
    categories: tuple[str, ...] = ("face", "license_plate")
    workers: int = 1
    skip_failed: bool = False
    detector_timeout: float = DEFAULT_DETECTOR_TIMEOUT

    def __post_init__(self):
        if (self.detections_file is None) == (self.detector_cmd is None):
            raise ValueError("exactly one of detections_file or detector_cmd must be set")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.sigma_scale <= 0:
            raise ValueError("sigma_scale must be > 0")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValueError("score_threshold must be in [0, 1]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_json(self) -> dict:
        return {
            "input_dir": str(self.input_dir),
            "output_dir": str(self.output_dir),
            "detection_source": (
                {"file": str(self.detections_file)}
                if self.detections_file is not None
                else {"command": list(self.detector_cmd)}
            ),
            "margin": self.margin,
            "sigma_scale": self.sigma_scale,
            "score_threshold": self.score_threshold,
            "categories": list(self.categories),
            "workers": self.workers,
            "skip_failed": self.skip_failed,
        }


@dataclass
class FrameRecord:
    frame_id: str
    input_path: str
    output_path: str | None
    regions: dict[str, int]
    detector_latency_ms: float
    digest: str | None
    error: str | None = None


@dataclass
class RunManifest:
    config: dict
    frames: list[FrameRecord]
    totals: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "frames": [
                {
                    "frame_id": f.frame_id,
                    "input": f.input_path,
                    "output": f.output_path,
                    "regions": f.regions,
                    "detector_latency_ms": f.detector_latency_ms,
                    "digest": f.digest,
                    "error": f.error,
                }
                for f in self.frames
            ],
            "totals": self.totals,
        }


def discover_frames(input_dir: Path) -> list[tuple[str, Path]]:
    """Recursively list supported raster files as (frame_id, path), sorted by id."""
    input_dir = Path(input_dir)
    if not input_dir.is_dir():
        raise PipelineError(f"input directory {input_dir} does not exist")
    frames = []
    for path in input_dir.rglob("*"):
        if path.is_file() and path.suffix.lower() in FRAME_EXTENSIONS:
            rel = path.relative_to(input_dir)
            frame_id = str(rel.with_suffix("")).replace("\\", "/")
            frames.append((frame_id, path))
    if not frames:
        raise EmptyInputError(f"empty input: no {'/'.join(FRAME_EXTENSIONS)} files under {input_dir}")
    frames.sort(key=lambda item: item[0])
    return frames


class DetectorProcess:
    """One external detector child; requests are serialized by an internal lock."""

    def __init__(self, cmd, timeout: float = DEFAULT_DETECTOR_TIMEOUT):
        self._timeout = timeout
        self._lock = threading.Lock()
        self._proc = subprocess.Popen(
            list(cmd),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

    def detect(self, frame_id: str, path: Path, width: int, height: int) -> list[Detection]:
        request = json.dumps(
            {"frame_id": frame_id, "path": str(Path(path).resolve()), "width": width, "height": height}
        )
        with self._lock:
            if self._proc.poll() is not None:
                raise DetectorProtocolError(f"detector exited with code {self._proc.returncode}")
            self._proc.stdin.write(request + "\n")
            self._proc.stdin.flush()
            line = _read_line_with_timeout(self._proc, self._timeout)
        return _parse_response_line(line, frame_id)

    def close(self):
        if self._proc.poll() is None:
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _read_line_with_timeout(proc, timeout: float) -> str:
    result: list[str] = []

    def reader():
        result.append(proc.stdout.readline())

    t = threading.Thread(target=reader, daemon=True)
    t.start()
    t.join(timeout)
    if t.is_alive():
        proc.kill()
        raise DetectorProtocolError(f"detector response timed out after {timeout}s")
    line = result[0] if result else ""
    if not line:
        raise DetectorProtocolError("detector closed its output stream mid-protocol")
    return line


def _parse_response_line(line: str, frame_id: str) -> list[Detection]:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DetectorProtocolError(f"malformed detector response line {line!r}: {exc}") from exc
    if "frame_id" not in doc:
        raise DetectorProtocolError(f"detector response missing field 'frame_id': {line!r}")
    if doc["frame_id"] != frame_id:
        raise DetectorProtocolError(
            f"detector answered frame {doc['frame_id']!r} but {frame_id!r} was requested"
        )
    if "detections" not in doc:
        raise DetectorProtocolError(f"detector response missing field 'detections': {line!r}")
    detections = []
    for i, rec in enumerate(doc["detections"]):
        for field_name in ("category", "bbox", "score"):
            if field_name not in rec:
                raise DetectorProtocolError(
                    f"detector response detections[{i}] missing field {field_name!r}"
                )
        x, y, w, h = (float(v) for v in rec["bbox"])
        detections.append(
            Detection(
                frame_id=frame_id,
                box=BoundingBox(x=x, y=y, w=w, h=h),
                category=rec["category"],
                score=float(rec["score"]),
            )
        )
    return detections


def admitted_detections(detections: list[Detection], cfg: PipelineConfig) -> list[Detection]:
    return [
        d
        for d in detections
        if d.score >= cfg.score_threshold and d.category in cfg.categories
    ]


def anonymize_frame(img: ImageBuffer, detections: list[Detection], cfg: PipelineConfig) -> tuple[ImageBuffer, dict[str, int]]:
    """Blur every configured-category detection region; returns (buffer, counts).

    Regions are expanded by the margin, clipped to the image, and blurred
    sequentially in sorted (y, x, w, h) order so overlaps resolve
    deterministically.
    """
    admitted = [d for d in detections if d.category in cfg.categories]
    counts = {c: 0 for c in cfg.categories}
    staged = []
    for det in admitted:
        counts[det.category] += 1
        region = geometry.clip(geometry.expand(det.box, cfg.margin), img.width, img.height)
        if region is None:
            continue
        staged.append((region, det.box))
    staged.sort(key=lambda item: (item[0].y, item[0].x, item[0].w, item[0].h))
    for region, original in staged:
        kernel = imaging.make_kernel(imaging.sigma_for_box(original, cfg.sigma_scale))
        img = imaging.blur_region(img, region, kernel)
    return img, counts


def _process_frame(frame_id: str, path: Path, cfg: PipelineConfig, source) -> FrameRecord:
    raw = path.read_bytes()
    img = imaging.decode_frame(raw)
    started = time.perf_counter()
    if isinstance(source, DetectionSet):
        detections = source.for_frame(frame_id)
    else:
        detections = source.detect(frame_id, path, img.width, img.height)
    latency_ms = (time.perf_counter() - started) * 1000.0
    detections = [d for d in detections if d.score >= cfg.score_threshold]
    out_img, counts = anonymize_frame(img, detections, cfg)
    rel = path.relative_to(cfg.input_dir)
    out_path = Path(cfg.output_dir) / rel
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fmt = "png" if path.suffix.lower() == ".png" else "pnm"
    out_bytes = imaging.encode_frame(out_img, fmt)
    out_path.write_bytes(out_bytes)
    return FrameRecord(
        frame_id=frame_id,
        input_path=str(path),
        output_path=str(out_path),
        regions=counts,
        detector_latency_ms=latency_ms,
        digest=hashlib.sha256(out_bytes).hexdigest(),
    )


def run(cfg: PipelineConfig) -> RunManifest:
    """Anonymize every frame under input_dir; write outputs and run_manifest.json.

    Raises on the first failed frame unless skip_failed is set, in which case
    failures are recorded in the manifest and processing continues.
    """
    frames = discover_frames(cfg.input_dir)
    if cfg.detections_file is not None:
        source = dataset.load_detections(cfg.detections_file)
        closer = None
    else:
        source = DetectorProcess(cfg.detector_cmd, timeout=cfg.detector_timeout)
        closer = source

    def task(item):
        frame_id, path = item
        try:
            return _process_frame(frame_id, path, cfg, source)
        except Exception as exc:
            if not cfg.skip_failed:
                raise PipelineError(f"frame {frame_id!r}: {exc}") from exc
            return FrameRecord(
                frame_id=frame_id,
                input_path=str(path),
                output_path=None,
                regions={c: 0 for c in cfg.categories},
                detector_latency_ms=0.0,
                digest=None,
                error=str(exc),
            )

    try:
        if cfg.workers == 1:
            records = [task(item) for item in frames]
        else:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                records = list(pool.map(task, frames))
    finally:
        if closer is not None:
            closer.close()

    totals_regions = {c: sum(r.regions.get(c, 0) for r in records) for c in cfg.categories}
    manifest = RunManifest(
        config=cfg.to_json(),
        frames=records,
        totals={
            "frames": len(records),
            "failed": sum(1 for r in records if r.error is not None),
            "regions": totals_regions,
        },
    )
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset.save_json(manifest.to_json(), out_dir / "run_manifest.json")
    return manifest

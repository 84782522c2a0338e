from __future__ import annotations

import json
import sys

import numpy as np
import pytest

from anonbench import imaging, pipeline
from anonbench.dataset import Detection, load_detections
from anonbench.geometry import BoundingBox, clip, expand
from anonbench.pipeline import (
    DetectorProcess,
    DetectorProtocolError,
    EmptyInputError,
    PipelineConfig,
    PipelineError,
    anonymize_frame,
    discover_frames,
    run,
)
from conftest import det_doc, random_image, write_json

ECHO_CMD = [sys.executable, "-m", "anonbench.echo_detector"]


def cfg_for(frame_dir, tmp_path, **kw):
    defaults = dict(
        input_dir=frame_dir,
        output_dir=tmp_path / "out",
        detections_file=tmp_path / "dets.json",
        workers=1,
    )
    defaults.update(kw)
    return PipelineConfig(**defaults)


def frame_detections(tmp_path):
    doc = det_doc(
        [
            ("frame_000", (12, 10, 12, 10), 0.9),
            ("frame_001", (5, 5, 10, 10), 0.8),
            ("frame_001", (30, 20, 8, 8), 0.7),
        ]
    )
    return write_json(tmp_path / "dets.json", doc)


def strip_latency(manifest_doc):
    """Drop latency and run-specific paths so cross-run manifests can be compared."""
    doc = json.loads(json.dumps(manifest_doc))
    for f in doc["frames"]:
        f["detector_latency_ms"] = None
        f["input"] = f["output"] = None
    return doc


class TestDiscoverFrames:
    def test_sorted(self, tmp_path, rng):
        d = tmp_path / "in"
        d.mkdir()
        for name in ("b.ppm", "a.ppm"):
            (d / name).write_bytes(imaging.encode_frame(random_image(rng, 4, 4)))
        assert [fid for fid, _ in discover_frames(d)] == ["a", "b"]

    def test_recursive_relative_ids(self, tmp_path, rng):
        d = tmp_path / "in"
        (d / "sub").mkdir(parents=True)
        (d / "sub" / "x.ppm").write_bytes(imaging.encode_frame(random_image(rng, 4, 4)))
        (d / "y.png").write_bytes(imaging.encode_frame(random_image(rng, 4, 4), "png"))
        assert [fid for fid, _ in discover_frames(d)] == ["sub/x", "y"]

    def test_empty_input_distinct_error(self, tmp_path):
        d = tmp_path / "in"
        d.mkdir()
        (d / "notes.txt").write_text("hi")
        with pytest.raises(EmptyInputError, match="empty input"):
            discover_frames(d)

    def test_missing_dir(self, tmp_path):
        with pytest.raises(PipelineError):
            discover_frames(tmp_path / "nope")


class TestAnonymizeFrame:
    def test_zero_detections_identity(self, rng, tmp_path):
        cfg = cfg_for(tmp_path, tmp_path)
        img = random_image(rng, 30, 30)
        out, counts = anonymize_frame(img, [], cfg)
        assert np.array_equal(out.data, img.data)
        assert sum(counts.values()) == 0

    def test_locality_and_interior_change(self, rng, tmp_path):
        cfg = cfg_for(tmp_path, tmp_path)
        img = random_image(rng, 40, 40)
        d = Detection(frame_id="f", box=BoundingBox(10, 10, 12, 12), category="face", score=0.9)
        out, counts = anonymize_frame(img, [d], cfg)
        region = clip(expand(d.box, cfg.margin), 40, 40)
        x0, y0, x1, y1 = imaging.pixel_extent(region, 40, 40)
        mask = np.ones((40, 40), dtype=bool)
        mask[y0:y1, x0:x1] = False
        assert np.array_equal(out.data[mask], img.data[mask])
        assert not np.array_equal(out.data[~mask], img.data[~mask])
        assert counts["face"] == 1

    def test_non_configured_category_ignored(self, rng, tmp_path):
        cfg = cfg_for(tmp_path, tmp_path, categories=("face",))
        img = random_image(rng, 30, 30)
        d = Detection(frame_id="f", box=BoundingBox(5, 5, 10, 10), category="license_plate", score=0.9)
        out, counts = anonymize_frame(img, [d], cfg)
        assert np.array_equal(out.data, img.data)
        assert counts == {"face": 0}


class TestRunFileMode:
    def test_three_frames(self, frame_dir, tmp_path):
        frame_detections(tmp_path)
        manifest = run(cfg_for(frame_dir, tmp_path))
        assert manifest.totals["frames"] == 3
        assert manifest.totals["failed"] == 0
        assert (tmp_path / "out" / "run_manifest.json").exists()
        for rec in manifest.frames:
            assert rec.digest is not None

    def test_manifest_region_totals(self, frame_dir, tmp_path):
        frame_detections(tmp_path)
        manifest = run(cfg_for(frame_dir, tmp_path))
        dets = load_detections(tmp_path / "dets.json")
        admitted = [d for d in dets.detections if d.score >= 0.1]
        assert manifest.totals["regions"]["face"] == len(admitted)

    def test_rerun_identical_digests(self, frame_dir, tmp_path):
        frame_detections(tmp_path)
        m1 = run(cfg_for(frame_dir, tmp_path, output_dir=tmp_path / "o1"))
        m2 = run(cfg_for(frame_dir, tmp_path, output_dir=tmp_path / "o2"))
        assert [f.digest for f in m1.frames] == [f.digest for f in m2.frames]

    def test_worker_count_invariance(self, frame_dir, tmp_path):
        frame_detections(tmp_path)
        m1 = run(cfg_for(frame_dir, tmp_path, output_dir=tmp_path / "o1", workers=1))
        m8 = run(cfg_for(frame_dir, tmp_path, output_dir=tmp_path / "o8", workers=8))
        for f1, f8 in zip(m1.frames, m8.frames):
            out1 = (tmp_path / "o1" / f"{f1.frame_id}.ppm").read_bytes()
            out8 = (tmp_path / "o8" / f"{f8.frame_id}.ppm").read_bytes()
            assert out1 == out8
        assert strip_latency(m1.to_json())["frames"] == strip_latency(m8.to_json())["frames"]

    def test_score_threshold_filters(self, frame_dir, tmp_path):
        write_json(tmp_path / "dets.json", det_doc([("frame_000", (12, 10, 12, 10), 0.05)]))
        manifest = run(cfg_for(frame_dir, tmp_path, score_threshold=0.1))
        assert manifest.totals["regions"]["face"] == 0

    def test_pixel_safety_whole_run(self, frame_dir, tmp_path):
        frame_detections(tmp_path)
        cfg = cfg_for(frame_dir, tmp_path)
        run(cfg)
        dets = load_detections(tmp_path / "dets.json")
        for frame_id, path in discover_frames(frame_dir):
            src = imaging.decode_frame(path.read_bytes())
            out = imaging.decode_frame((tmp_path / "out" / f"{frame_id}.ppm").read_bytes())
            mask = np.ones((src.height, src.width), dtype=bool)
            for d in dets.for_frame(frame_id):
                region = clip(expand(d.box, cfg.margin), src.width, src.height)
                if region is None:
                    continue
                x0, y0, x1, y1 = imaging.pixel_extent(region, src.width, src.height)
                mask[y0:y1, x0:x1] = False
            assert np.array_equal(out.data[mask], src.data[mask])


class TestRunCommandMode:
    def test_echo_detector_matches_file_mode(self, frame_dir, tmp_path):
        dets_path = frame_detections(tmp_path)
        m_file = run(cfg_for(frame_dir, tmp_path, output_dir=tmp_path / "of"))
        m_cmd = run(
            cfg_for(
                frame_dir,
                tmp_path,
                output_dir=tmp_path / "oc",
                detections_file=None,
                detector_cmd=tuple(ECHO_CMD + [str(dets_path)]),
            )
        )
        for ff, fc in zip(m_file.frames, m_cmd.frames):
            assert ff.digest == fc.digest
            a = (tmp_path / "of" / f"{ff.frame_id}.ppm").read_bytes()
            b = (tmp_path / "oc" / f"{fc.frame_id}.ppm").read_bytes()
            assert a == b
        sf, sc = strip_latency(m_file.to_json()), strip_latency(m_cmd.to_json())
        assert sf["frames"] == sc["frames"]
        assert sf["totals"] == sc["totals"]

    def test_broken_detector_fails_fast(self, frame_dir, tmp_path):
        cfg = cfg_for(
            frame_dir,
            tmp_path,
            detections_file=None,
            detector_cmd=(sys.executable, "-c", "print('not json'); import sys; sys.stdout.flush(); sys.stdin.read()"),
        )
        with pytest.raises(PipelineError, match="frame"):
            run(cfg)

    def test_skip_failed_continues(self, frame_dir, tmp_path):
        cfg = cfg_for(
            frame_dir,
            tmp_path,
            skip_failed=True,
            detections_file=None,
            detector_cmd=(sys.executable, "-c", "import sys\nfor _ in sys.stdin: print('{}'); sys.stdout.flush()"),
        )
        manifest = run(cfg)
        assert manifest.totals["failed"] == 3
        assert all(f.error is not None for f in manifest.frames)


class TestDetectorProtocol:
    def test_missing_score_field_named(self, tmp_path, frame_dir):
        script = (
            "import sys, json\n"
            "for line in sys.stdin:\n"
            "    req = json.loads(line)\n"
            "    resp = {'frame_id': req['frame_id'], 'detections': [{'category': 'face', 'bbox': [1,1,2,2]}]}\n"
            "    print(json.dumps(resp)); sys.stdout.flush()\n"
        )
        with DetectorProcess([sys.executable, "-c", script]) as proc:
            with pytest.raises(DetectorProtocolError, match="missing field 'score'"):
                proc.detect("f", tmp_path, 10, 10)

    def test_wrong_frame_id_rejected(self, tmp_path):
        script = (
            "import sys, json\n"
            "for line in sys.stdin:\n"
            "    print(json.dumps({'frame_id': 'other', 'detections': []})); sys.stdout.flush()\n"
        )
        with DetectorProcess([sys.executable, "-c", script]) as proc:
            with pytest.raises(DetectorProtocolError, match="other"):
                proc.detect("f", tmp_path, 10, 10)

    def test_unknown_response_fields_ignored(self, tmp_path):
        script = (
            "import sys, json\n"
            "for line in sys.stdin:\n"
            "    req = json.loads(line)\n"
            "    print(json.dumps({'frame_id': req['frame_id'], 'detections': [], 'latency': 3})); sys.stdout.flush()\n"
        )
        with DetectorProcess([sys.executable, "-c", script]) as proc:
            assert proc.detect("f", tmp_path, 10, 10) == []

    def test_timeout(self, tmp_path):
        script = "import time, sys\nsys.stdin.readline()\ntime.sleep(60)\n"
        with DetectorProcess([sys.executable, "-c", script], timeout=0.5) as proc:
            with pytest.raises(DetectorProtocolError, match="timed out"):
                proc.detect("f", tmp_path, 10, 10)


def test_config_validation(tmp_path):
    with pytest.raises(ValueError, match="exactly one"):
        PipelineConfig(input_dir=tmp_path, output_dir=tmp_path)
    with pytest.raises(ValueError, match="margin"):
        PipelineConfig(input_dir=tmp_path, output_dir=tmp_path, detections_file=tmp_path / "d", margin=-1)

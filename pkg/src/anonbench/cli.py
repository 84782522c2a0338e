"""Command-line entry point: anonymize, evaluate, merge-annotations, report.

Exit codes: 0 success, 1 fatal error, 2 partial failure (with --skip-failed),
64 usage error. Standard output carries human summaries; machine-readable
results go to files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import dataset, pipeline, reporting
from .evaluation import BucketStat, EvaluationConfig, EvaluationReport, evaluate
from .reporting import SystemReport

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default_workers() -> int:
    return int(os.environ.get("ANONBENCH_WORKERS", "1"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="anonbench", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("anonymize", help="blur detected PII regions in a frame directory")
    p.add_argument("--input-dir", required=True, type=Path)
    p.add_argument("--output-dir", required=True, type=Path)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--detections", type=Path, help="detections JSON file")
    src.add_argument("--detector-cmd", nargs="+", help="external detector argv")
    p.add_argument("--margin", type=float, default=0.10)
    p.add_argument("--sigma-scale", type=float, default=0.125)
    p.add_argument("--score-threshold", type=float, default=0.1)
    p.add_argument("--classes", default="face,license_plate", help="comma-separated categories")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--skip-failed", action="store_true")

    p = sub.add_parser("evaluate", help="compute AP/AR and bucketed recall")
    p.add_argument("--ground-truth", required=True, type=Path)
    p.add_argument("--detections", required=True, type=Path)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--category", default="face", choices=dataset.CATEGORIES)
    p.add_argument("--buckets", default=None, help="comma-separated attribute keys")
    p.add_argument("--output", type=Path, default=None)

    p = sub.add_parser("merge-annotations", help="majority-vote merge of annotator reviews")
    p.add_argument("--ground-truth", required=True, type=Path)
    p.add_argument("--reviews", required=True, nargs="+", type=Path)
    p.add_argument("--output", required=True, type=Path)
    p.add_argument("--conflicts", required=True, type=Path)

    p = sub.add_parser("report", help="render comparison tables from evaluation reports")
    p.add_argument("--metrics", required=True, nargs="+", metavar="NAME=PATH")
    p.add_argument("--stream-suffixes", action="store_true",
                   help="split metric names of the form NAME/STREAM into system and stream")
    p.add_argument("--bucket-key", default=None)
    p.add_argument("--format", dest="fmt", default="markdown", choices=("csv", "markdown"))
    p.add_argument("--output", type=Path, default=None)
    return parser


def _cmd_anonymize(args) -> int:
    cfg = pipeline.PipelineConfig(
        input_dir=args.input_dir,
        output_dir=args.output_dir,
        detections_file=args.detections,
        detector_cmd=tuple(args.detector_cmd) if args.detector_cmd else None,
        margin=args.margin,
        sigma_scale=args.sigma_scale,
        score_threshold=args.score_threshold,
        categories=tuple(args.classes.split(",")),
        workers=args.workers if args.workers is not None else _default_workers(),
        skip_failed=args.skip_failed,
    )
    manifest = pipeline.run(cfg)
    failed = manifest.totals["failed"]
    print(f"anonymized {manifest.totals['frames'] - failed}/{manifest.totals['frames']} frames")
    return EXIT_PARTIAL if failed else EXIT_OK


def _cmd_evaluate(args) -> int:
    gts = dataset.load_ground_truth(args.ground_truth)
    dets = dataset.load_detections(args.detections)
    cfg = EvaluationConfig(iou_threshold=args.iou, category=args.category)
    keys = args.buckets.split(",") if args.buckets else []
    report = evaluate(gts, dets.detections, cfg, bucket_keys=keys)
    if args.output is not None:
        dataset.save_json(report.to_json(), args.output)
    print(f"AP={reporting.format_metric(report.ap)} AR={reporting.format_metric(report.ar)}")
    return EXIT_OK


def _cmd_merge(args) -> int:
    gts = dataset.load_ground_truth(args.ground_truth)
    combined: dict[str, list[dict[str, str]]] = {}
    for path in args.reviews:
        part = dataset.load_reviews(path, gts)
        for box_id, maps in part.reviews.items():
            combined.setdefault(box_id, []).extend(maps)
    merged, conflicts = dataset.merge_reviews(gts, dataset.ReviewSet(reviews=combined))
    dataset.save_json(merged.to_json(), args.output)
    dataset.save_json(conflicts.to_json(), args.conflicts)
    print(f"merged {len(merged.boxes)} boxes with {len(conflicts.conflicts)} conflicts")
    return EXIT_OK


def _load_system_report(name: str, path: Path, split_streams: bool) -> SystemReport:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    report = EvaluationReport(
        ap=float(doc["ap"]),
        ar=float(doc["ar"]),
        buckets=[
            BucketStat(
                key=b["key"],
                label=b["label"],
                gt_count=int(b["gt_count"]),
                matched_count=int(b["matched_count"]),
                recall=float(b["recall"]),
            )
            for b in doc.get("buckets", [])
        ],
    )
    stream = None
    if split_streams and "/" in name:
        name, stream = name.rsplit("/", 1)
    return SystemReport(system_name=name, report=report, stream=stream)


def _cmd_report(args) -> int:
    reports = []
    for entry in args.metrics:
        if "=" not in entry:
            raise ValueError(f"--metrics entries must be NAME=PATH, got {entry!r}")
        name, path = entry.split("=", 1)
        reports.append(_load_system_report(name, Path(path), args.stream_suffixes))
    chunks = [reporting.render(reporting.overall_table(reports), args.fmt)]
    if args.bucket_key is not None:
        chunks.append(reporting.render(reporting.bucket_table(reports, args.bucket_key), args.fmt))
    payload = b"\n".join(chunks)
    if args.output is not None:
        Path(args.output).write_bytes(payload)
        print(f"wrote {args.output}")
    else:
        sys.stdout.write(payload.decode("utf-8"))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "anonymize": _cmd_anonymize,
        "evaluate": _cmd_evaluate,
        "merge-annotations": _cmd_merge,
        "report": _cmd_report,
    }
    try:
        return handlers[args.subcommand](args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())

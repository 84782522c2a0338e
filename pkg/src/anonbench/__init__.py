"""Batch PII anonymization (Gaussian-blur obfuscation) and detection evaluation."""

from .geometry import BoundingBox, clip, expand, iou
from .imaging import GaussianKernel, ImageBuffer, blur_region, make_kernel, sigma_for_box
from .evaluation import EvaluationConfig, EvaluationReport, evaluate, greedy_match

__all__ = [
    "BoundingBox",
    "iou",
    "expand",
    "clip",
    "ImageBuffer",
    "GaussianKernel",
    "make_kernel",
    "blur_region",
    "sigma_for_box",
    "EvaluationConfig",
    "EvaluationReport",
    "evaluate",
    "greedy_match",
]

"""Pixel buffers, Gaussian kernels, and region blurring.

The blur operator is a separable Gaussian convolution applied only inside a
target rectangle. Source pixels are sampled from the whole image with
clamp-to-edge at image borders, so faces truncated by the frame edge are
blurred without darkening.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from io import BytesIO

import numpy as np

from .geometry import BoundingBox

SIGMA_MIN = 1.0


class FrameFormatError(ValueError):
    """Raised when frame bytes cannot be decoded or a buffer cannot be encoded."""


@dataclass(frozen=True)
class ImageBuffer:
    """Owned 8-bit raster; `data` has shape (height, width, channels), channels 1 or 3."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.dtype != np.uint8:
            raise ValueError("ImageBuffer requires uint8 samples")
        if self.data.ndim != 3 or self.data.shape[2] not in (1, 3):
            raise ValueError(f"ImageBuffer requires (H, W, 1|3) data, got shape {self.data.shape}")
        if self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ValueError("ImageBuffer requires width >= 1 and height >= 1")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class GaussianKernel:
    """Normalized 1-D Gaussian tap weights of length 2*radius + 1."""

    sigma: float
    radius: int
    weights: np.ndarray


def make_kernel(sigma: float) -> GaussianKernel:
    """Build a normalized Gaussian kernel with radius ceil(3*sigma)."""
    if sigma < SIGMA_MIN:
        raise ValueError(f"sigma must be >= {SIGMA_MIN}, got {sigma}")
    radius = math.ceil(3 * sigma)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    weights /= weights.sum()
    weights.setflags(write=False)
    return GaussianKernel(sigma=sigma, radius=radius, weights=weights)


def sigma_for_box(b: BoundingBox, sigma_scale: float) -> float:
    """Box-adaptive blur strength: sigma_scale * max(w, h), floored at SIGMA_MIN."""
    if sigma_scale <= 0:
        raise ValueError(f"sigma_scale must be > 0, got {sigma_scale}")
    return max(SIGMA_MIN, sigma_scale * max(b.w, b.h))


def pixel_extent(region: BoundingBox, width: int, height: int) -> tuple[int, int, int, int]:
    """Integer pixel window (x0, y0, x1, y1) covering every pixel the region touches."""
    x0 = max(0, math.floor(region.x))
    y0 = max(0, math.floor(region.y))
    x1 = min(width, math.ceil(region.x2))
    y1 = min(height, math.ceil(region.y2))
    return x0, y0, x1, y1


def blur_window_float(data: np.ndarray, x0: int, y0: int, x1: int, y1: int, kernel: GaussianKernel) -> np.ndarray:
    """Separable Gaussian convolution of the (y0:y1, x0:x1) window, in float64.

    Sampling clamps to the image edge; the returned array has the window's shape
    and is not quantized.
    """
    h, w = data.shape[0], data.shape[1]
    r = kernel.radius
    xs = np.clip(np.arange(x0 - r, x1 + r), 0, w - 1)
    ys = np.clip(np.arange(y0 - r, y1 + r), 0, h - 1)
    win = data[np.ix_(ys, xs)].astype(np.float64)

    ww = x1 - x0
    wh = y1 - y0
    hpass = np.zeros((win.shape[0], ww, win.shape[2]))
    for t, wt in enumerate(kernel.weights):
        hpass += wt * win[:, t : t + ww]
    out = np.zeros((wh, ww, win.shape[2]))
    for t, wt in enumerate(kernel.weights):
        out += wt * hpass[t : t + wh]
    return out


def quantize_u8(values: np.ndarray) -> np.ndarray:
    """Round nonnegative floats half-away-from-zero and clamp to [0, 255]."""
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def blur_region(img: ImageBuffer, region: BoundingBox, kernel: GaussianKernel) -> ImageBuffer:
    """Blur the pixels inside `region`; everything outside stays bit-identical.

    The region must already be clipped to image bounds and have positive area.
    """
    clipped_inside = (
        region.x >= 0 and region.y >= 0 and region.x2 <= img.width and region.y2 <= img.height
    )
    if not region.is_positive() or not clipped_inside:
        raise ValueError(f"region {region} must be positive-area and inside the {img.width}x{img.height} image")
    x0, y0, x1, y1 = pixel_extent(region, img.width, img.height)
    if x1 <= x0 or y1 <= y0:
        return ImageBuffer(data=img.data.copy())
    out = img.data.copy()
    out[y0:y1, x0:x1] = quantize_u8(blur_window_float(img.data, x0, y0, x1, y1, kernel))
    return ImageBuffer(data=out)


# --- frame codecs: binary PNM (P5/P6, maxval 255) and 8-bit PNG ---


def _pnm_token(buf: bytes, pos: int, what: str) -> tuple[bytes, int]:
    while pos < len(buf) and buf[pos : pos + 1].isspace():
        pos += 1
    start = pos
    while pos < len(buf) and not buf[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FrameFormatError(f"malformed header: missing {what} at byte offset {start}")
    return buf[start:pos], pos


def _decode_pnm(raw: bytes) -> ImageBuffer:
    magic = raw[:2]
    channels = 3 if magic == b"P6" else 1
    pos = 2
    fields = {}
    for what in ("width", "height", "maxval"):
        tok, pos = _pnm_token(raw, pos, what)
        if not tok.isdigit():
            raise FrameFormatError(f"malformed header: non-numeric {what} at byte offset {pos - len(tok)}")
        fields[what] = int(tok)
    if fields["maxval"] != 255:
        raise FrameFormatError(f"unsupported maxval {fields['maxval']} at byte offset {pos}")
    if fields["width"] < 1 or fields["height"] < 1:
        raise FrameFormatError(f"malformed header: empty raster at byte offset {pos}")
    pos += 1  # single whitespace byte after maxval
    expected = fields["width"] * fields["height"] * channels
    payload = raw[pos : pos + expected]
    if len(payload) < expected:
        raise FrameFormatError(
            f"truncated pixel payload at byte offset {pos + len(payload)}: expected {expected} samples"
        )
    data = np.frombuffer(payload, dtype=np.uint8).reshape(fields["height"], fields["width"], channels)
    return ImageBuffer(data=data.copy())


def _decode_png(raw: bytes) -> ImageBuffer:
    from PIL import Image

    try:
        pil = Image.open(BytesIO(raw))
        pil.load()
    except Exception as exc:
        raise FrameFormatError(f"malformed PNG payload: {exc}") from exc
    if pil.mode not in ("L", "RGB"):
        raise FrameFormatError(f"unsupported channel layout {pil.mode!r} (need 8-bit gray or RGB)")
    arr = np.asarray(pil, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return ImageBuffer(data=arr.copy())


def decode_frame(raw: bytes) -> ImageBuffer:
    """Decode PNM (P5/P6) or PNG bytes into an ImageBuffer."""
    if raw[:2] in (b"P5", b"P6"):
        return _decode_pnm(raw)
    if raw[:8] == b"\x89PNG\r\n\x1a\n":
        return _decode_png(raw)
    raise FrameFormatError("malformed header: unknown magic at byte offset 0")


def encode_frame(img: ImageBuffer, fmt: str = "pnm") -> bytes:
    """Encode an ImageBuffer as canonical binary PNM or PNG; lossless round-trip."""
    if fmt == "pnm":
        magic = b"P6" if img.channels == 3 else b"P5"
        header = magic + b"\n%d %d\n255\n" % (img.width, img.height)
        return header + img.data.tobytes()
    if fmt == "png":
        from PIL import Image

        arr = img.data[:, :, 0] if img.channels == 1 else img.data
        out = BytesIO()
        Image.fromarray(arr).save(out, format="PNG")
        return out.getvalue()
    raise FrameFormatError(f"unsupported output format {fmt!r}")

"""Deterministic image primitives: bicubic resampling, byte-budgeted JPEG, PSNR.

All operations are pure functions of their inputs and safe to call from
multiple threads. Images are 8-bit interleaved RGB throughout; the float
representation exists only for feeding the network.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

# Peak sample value for 8-bit PSNR and the cap returned for a zero-MSE pair.
PSNR_PEAK = 255.0
PSNR_CAP_DB = 100.0

JPEG_QUALITY_MIN = 1
JPEG_QUALITY_MAX = 95

# Cubic convolution parameter; -0.5 is the Catmull-Rom / common reference choice.
CUBIC_A = -0.5


class BudgetInfeasibleError(Exception):
    """No JPEG quality in [1, 95] fits the byte budget.

    Attributes:
        smallest_size: byte length of the encoding at the lowest quality.
    """

    def __init__(self, budget: int, smallest_size: int):
        super().__init__(
            f"budget of {budget} bytes infeasible; smallest achievable "
            f"encoding is {smallest_size} bytes"
        )
        self.budget = budget
        self.smallest_size = smallest_size


class JpegDecodeError(Exception):
    """Payload bytes do not decode to a well-formed JPEG image."""


@dataclass(frozen=True)
class ImageU8:
    """8-bit interleaved RGB raster, shape (height, width, 3), dtype uint8."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) array, got shape {self.data.shape}")
        if self.data.dtype != np.uint8:
            raise ValueError(f"expected uint8 samples, got {self.data.dtype}")
        if self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ValueError("image dimensions must be at least 1x1")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class ImageF:
    """Normalized float raster in [0, 1], shape (height, width, 3), dtype float32."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) array, got shape {self.data.shape}")
        if self.data.dtype != np.float32:
            raise ValueError(f"expected float32 samples, got {self.data.dtype}")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class EncodedPayload:
    """A JPEG byte stream plus the bookkeeping needed to audit it.

    The on-wire form is exactly ``data`` (a raw JFIF stream); ``budget`` records
    the byte budget the payload was encoded under.
    """

    data: bytes
    codec: str  # always "JPEG"
    quality: int
    source_dims: tuple[int, int]  # (width, height)
    budget: int


def _cubic_kernel(t: np.ndarray) -> np.ndarray:
    """Cubic convolution kernel with a = -0.5, support [-2, 2]."""
    a = CUBIC_A
    t = np.abs(t)
    t2 = t * t
    t3 = t2 * t
    out = np.where(t <= 1.0, (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0, 0.0)
    mid = (1.0 < t) & (t < 2.0)
    out = np.where(mid, a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a, out)
    return out


def _resize_weights(src_n: int, dst_n: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis resampling taps.

    Returns (indices, weights) of shape (dst_n, taps). When down-scaling the
    kernel support is widened by the scale factor (anti-aliasing); source
    indices outside the image are clamped to the border sample. Weights are
    normalized to sum to 1 per output position.
    """
    scale = src_n / dst_n
    fscale = max(scale, 1.0)
    support = 2.0 * fscale
    centers = (np.arange(dst_n) + 0.5) * scale - 0.5
    lo = np.ceil(centers - support).astype(np.int64)
    n_taps = int(np.floor(centers + support).max() - lo.min() + 1)
    # Uniform tap count across outputs keeps this vectorizable; extra taps
    # fall outside [-2, 2] in kernel units and get zero weight.
    taps = lo[:, None] + np.arange(n_taps)[None, :]
    weights = _cubic_kernel((taps - centers[:, None]) / fscale)
    weights /= weights.sum(axis=1, keepdims=True)
    indices = np.clip(taps, 0, src_n - 1)
    return indices, weights


def bicubic_resize(src: ImageU8, dst_w: int, dst_h: int) -> ImageU8:
    """Resample with the cubic convolution kernel (a = -0.5), anti-aliased.

    Down-scaling widens the kernel support by the scale factor; edges are
    handled by clamping source coordinates. Output samples are clamped to
    [0, 255] and rounded half away from zero.
    """
    if dst_w < 1 or dst_h < 1:
        raise ValueError(f"requested zero-size output {dst_w}x{dst_h}")
    arr = src.data.astype(np.float64)
    xi, xw = _resize_weights(src.width, dst_w)
    yi, yw = _resize_weights(src.height, dst_h)
    # Horizontal pass then vertical; float64 intermediates, no rounding between passes.
    gx = arr[:, xi, :]  # (h, dst_w, taps, c)
    horiz = (gx * xw[None, :, :, None]).sum(axis=2)  # (h, dst_w, c)
    gy = horiz[yi, :, :]  # (dst_h, taps, dst_w, c)
    vert = (gy * yw[:, :, None, None]).sum(axis=1)  # (dst_h, dst_w, c)
    clipped = np.clip(vert, 0.0, 255.0)
    return ImageU8(np.floor(clipped + 0.5).astype(np.uint8))


def to_float(src: ImageU8) -> ImageF:
    """8-bit samples to [0, 1] floats (divide by 255)."""
    return ImageF((src.data.astype(np.float64) / 255.0).astype(np.float32))


def to_u8(src: ImageF) -> ImageU8:
    """[0, 1] floats back to 8-bit: clamp, scale by 255, round half away from zero.

    Exact inverse of to_float for every 8-bit sample value.
    """
    v = np.clip(src.data.astype(np.float64), 0.0, 1.0) * 255.0
    return ImageU8(np.floor(v + 0.5).astype(np.uint8))


def _encode_at_quality(img: Image.Image, quality: int) -> bytes:
    buf = io.BytesIO()
    # subsampling=2 selects 4:2:0 chroma subsampling.
    img.save(buf, format="JPEG", quality=quality, subsampling=2)
    return buf.getvalue()


def encode_budget_jpeg(src: ImageU8, budget: int) -> EncodedPayload:
    """JPEG-encode at the highest quality in [1, 95] that fits the byte budget.

    Binary search over the quality setting; raises BudgetInfeasibleError
    (carrying the smallest achievable size) when even quality 1 is too large.
    Budgets below ~128 bytes are always infeasible: no JFIF stream fits.
    """
    if budget < 1:
        raise ValueError(f"budget must be positive, got {budget}")
    img = Image.fromarray(src.data)
    floor_bytes = _encode_at_quality(img, JPEG_QUALITY_MIN)
    if len(floor_bytes) > budget:
        raise BudgetInfeasibleError(budget, len(floor_bytes))

    best_q, best_bytes = JPEG_QUALITY_MIN, floor_bytes
    lo, hi = JPEG_QUALITY_MIN, JPEG_QUALITY_MAX
    while lo < hi:
        mid = (lo + hi + 1) // 2
        data = _encode_at_quality(img, mid)
        if len(data) <= budget:
            lo = mid
            best_q, best_bytes = mid, data
        else:
            hi = mid - 1
    return EncodedPayload(
        data=best_bytes,
        codec="JPEG",
        quality=best_q,
        source_dims=(src.width, src.height),
        budget=budget,
    )


def decode_jpeg(payload: EncodedPayload) -> ImageU8:
    """Decode a JPEG payload back to an 8-bit image. Dims equal source_dims."""
    if payload.codec != "JPEG":
        raise ValueError(f"unsupported codec {payload.codec!r}")
    try:
        with Image.open(io.BytesIO(payload.data)) as img:
            arr = np.asarray(img.convert("RGB"))
    except Exception as exc:
        raise JpegDecodeError(f"corrupt JPEG stream: {exc}") from exc
    out = ImageU8(np.ascontiguousarray(arr))
    if (out.width, out.height) != payload.source_dims:
        raise JpegDecodeError(
            f"decoded dims {(out.width, out.height)} do not match "
            f"declared source dims {payload.source_dims}"
        )
    return out


def psnr(a: ImageU8, b: ImageU8) -> float:
    """Peak signal-to-noise ratio over all RGB samples, in dB.

    10*log10(255^2 / MSE); returns the 100.0 dB sentinel cap when MSE is zero.
    """
    if a.data.shape != b.data.shape:
        raise ValueError(f"dimension mismatch: {a.data.shape} vs {b.data.shape}")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(PSNR_PEAK * PSNR_PEAK / mse))


def read_image(path: str | Path) -> ImageU8:
    """Read a PNG/JPEG file as 8-bit RGB."""
    with Image.open(path) as img:
        return ImageU8(np.ascontiguousarray(np.asarray(img.convert("RGB"))))


def write_png(img: ImageU8, path: str | Path) -> None:
    """Write losslessly as PNG."""
    Image.fromarray(img.data).save(path, format="PNG")


def write_payload(payload: EncodedPayload, path: str | Path) -> None:
    """Write the raw JPEG byte stream; interoperable with any JPEG decoder."""
    Path(path).write_bytes(payload.data)

"""Image planes, netpbm codecs and the per-pixel primitives shared by the pipeline."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Union

import numpy as np

EPS_FLOOR = 1.0 / 255.0
LOG_FLOOR = math.log(EPS_FLOOR)

# Printed weights sum to 0.9999; kept as-is unless normalisation is requested.
LUMA_WEIGHTS = (0.2989, 0.587, 0.114)

DOMAINS = ("linear", "log", "residual")

_RANGE_TOL = 1e-9


class CodecError(ValueError):
    """Malformed or unsupported netpbm data."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class ImagePlane:
    """Single-channel 2-D field of doubles, shape ``(height, width)``.

    ``domain`` is ``linear`` (values in [0, 1]), ``log`` (values in
    [ln(1/255), 0]) or ``residual`` (log-ratios of either sign).
    """

    pixels: np.ndarray
    domain: str = "linear"

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        object.__setattr__(self, "pixels", px)
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}")
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"plane must be a non-empty 2-D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("plane contains non-finite values")
        if self.domain == "linear":
            lo, hi = 0.0, 1.0
        elif self.domain == "log":
            lo, hi = LOG_FLOOR, 0.0
        else:
            return
        if px.min() < lo - _RANGE_TOL or px.max() > hi + _RANGE_TOL:
            raise ValueError(
                f"{self.domain} plane out of range [{lo}, {hi}]: [{px.min()}, {px.max()}]"
            )

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def with_pixels(self, pixels: np.ndarray, domain: str | None = None) -> "ImagePlane":
        return ImagePlane(pixels, self.domain if domain is None else domain)


@dataclass(frozen=True)
class RgbImage:
    """Linear RGB image stored as a ``(height, width, 3)`` array in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        object.__setattr__(self, "pixels", px)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] == 0 or px.shape[1] == 0:
            raise ValueError(f"RGB image must have shape (H, W, 3), got {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("image contains non-finite values")
        if px.min() < -_RANGE_TOL or px.max() > 1.0 + _RANGE_TOL:
            raise ValueError("RGB channels must lie in [0, 1]")

    @classmethod
    def from_planes(cls, r: ImagePlane, g: ImagePlane, b: ImagePlane) -> "RgbImage":
        if not (r.shape == g.shape == b.shape):
            raise ValueError("channel planes differ in size")
        return cls(np.stack([r.pixels, g.pixels, b.pixels], axis=-1))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def channel(self, index: int) -> ImagePlane:
        return ImagePlane(self.pixels[..., index], "linear")

    @property
    def r(self) -> ImagePlane:
        return self.channel(0)

    @property
    def g(self) -> ImagePlane:
        return self.channel(1)

    @property
    def b(self) -> ImagePlane:
        return self.channel(2)


Image = Union[ImagePlane, RgbImage]


# -- codecs -------------------------------------------------------------------


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    """Next whitespace-delimited header token, skipping ``#`` comments."""
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise CodecError("truncated header", start)
    return data[start:pos], pos


def decode_netpbm(data: bytes) -> Image:
    if len(data) < 2:
        raise CodecError("truncated header", len(data))
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise CodecError(f"unsupported magic number {magic!r}", 0)
    pos = 2
    fields = []
    for _ in range(3):
        token, pos = _read_token(data, pos)
        start = pos - len(token)
        if not token.isdigit():
            raise CodecError(f"bad header field {token!r}", start)
        fields.append((int(token), start))
    (width, _), (height, _), (maxval, maxval_pos) = fields
    if width <= 0 or height <= 0:
        raise CodecError("image dimensions must be positive", 2)
    if maxval != 255:
        raise CodecError(f"unsupported maxval {maxval}", maxval_pos)
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise CodecError("missing whitespace after maxval", pos)
    pos += 1
    channels = 1 if magic == b"P5" else 3
    need = width * height * channels
    payload = data[pos : pos + need]
    if len(payload) < need:
        raise CodecError(f"truncated payload: expected {need} bytes, found {len(payload)}", pos + len(payload))
    samples = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    if channels == 1:
        return ImagePlane(samples.reshape(height, width), "linear")
    return RgbImage(samples.reshape(height, width, 3))


def load_image(path: str | os.PathLike) -> Image:
    """Read a binary PGM (P5) or PPM (P6) file with maxval 255."""
    with open(path, "rb") as fh:
        data = fh.read()
    return decode_netpbm(data)


def quantize(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] reals to bytes with round-half-up."""
    return np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def encode_netpbm(image: Image) -> bytes:
    if isinstance(image, RgbImage):
        magic, body = b"P6", quantize(image.pixels)
    elif isinstance(image, ImagePlane):
        if image.domain != "linear":
            raise ValueError("only linear planes can be encoded")
        magic, body = b"P5", quantize(image.pixels)
    else:
        raise TypeError(f"cannot encode {type(image).__name__}")
    header = b"%s\n%d %d\n255\n" % (magic, image.width, image.height)
    return header + body.tobytes()


def save_image(image: Image, path: str | os.PathLike) -> None:
    """Write ``image`` as P5 (plane) or P6 (RGB)."""
    with open(path, "wb") as fh:
        fh.write(encode_netpbm(image))


# -- per-pixel operations -------------------------------------------------------


def luminance(img: RgbImage, normalize: bool = False) -> ImagePlane:
    w = np.array(LUMA_WEIGHTS)
    if normalize:
        w = w / w.sum()
    lum = img.pixels @ w
    return ImagePlane(np.clip(lum, 0.0, 1.0), "linear")


def to_log_domain(p: ImagePlane) -> ImagePlane:
    if p.domain != "linear":
        raise ValueError("to_log_domain expects a linear plane")
    return ImagePlane(np.log(np.maximum(p.pixels, EPS_FLOOR)), "log")


def from_log_domain(p: ImagePlane) -> ImagePlane:
    if p.domain not in ("log", "residual"):
        raise ValueError("from_log_domain expects a log plane")
    return ImagePlane(np.clip(np.exp(p.pixels), 0.0, 1.0), "linear")


def _tail_count(frac: float, n: int) -> int:
    # guard against 0.07 * 100 == 7.000000000000001
    return int(math.ceil(frac * n - 1e-9))


def truncation_bounds(values: np.ndarray, low_frac: float, high_frac: float) -> tuple[float, float]:
    """Clamp bounds after discarding ``ceil(frac * N)`` samples from each tail."""
    for name, frac in (("low_frac", low_frac), ("high_frac", high_frac)):
        if not 0.0 <= frac < 0.5:
            raise ValueError(f"{name} must lie in [0, 0.5), got {frac}")
    if low_frac + high_frac >= 1.0:
        raise ValueError("low_frac + high_frac must be < 1")
    flat = np.sort(values, axis=None, kind="stable")
    n = flat.size
    k_lo = min(_tail_count(low_frac, n), n - 1)
    k_hi = min(_tail_count(high_frac, n), n - 1 - k_lo)
    return float(flat[k_lo]), float(flat[n - 1 - k_hi])


def histogram_truncate(p: ImagePlane, low_frac: float, high_frac: float) -> ImagePlane:
    lo, hi = truncation_bounds(p.pixels, low_frac, high_frac)
    return p.with_pixels(np.clip(p.pixels, lo, hi))


def linear_stretch(p: ImagePlane, target_lo: float, target_hi: float) -> ImagePlane:
    """Affine map of ``[min(p), max(p)]`` onto ``[target_lo, target_hi]``.

    A constant plane maps to the midpoint of the target interval.
    """
    if not target_lo < target_hi:
        raise ValueError("target_lo must be < target_hi")
    px = p.pixels
    lo, hi = float(px.min()), float(px.max())
    if hi == lo:
        out = np.full_like(px, 0.5 * (target_lo + target_hi))
    else:
        out = target_lo + (px - lo) * ((target_hi - target_lo) / (hi - lo))
        # pin the extremes so min/max equal the targets exactly
        out[px == lo] = target_lo
        out[px == hi] = target_hi
    return p.with_pixels(out)

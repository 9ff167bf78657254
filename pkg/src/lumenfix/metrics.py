"""No-reference quality indicators: entropy, mean brightness, average gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image_core import ImagePlane, RgbImage, luminance

CSV_HEADER = ("path", "entropy_bits", "mean_value", "avg_gradient")


@dataclass(frozen=True)
class MetricsReport:
    entropy_bits: float
    mean_value: float
    avg_gradient: float

    def row(self, path: str) -> list[str]:
        return [path, repr(self.entropy_bits), repr(self.mean_value), repr(self.avg_gradient)]


def _plane(p: ImagePlane | RgbImage) -> np.ndarray:
    if isinstance(p, RgbImage):
        return luminance(p).pixels
    if p.domain != "linear":
        raise ValueError("metrics are defined on linear planes")
    return p.pixels


def entropy(p: ImagePlane | RgbImage) -> float:
    """Shannon entropy in bits of the 256-bin histogram."""
    levels = np.floor(_plane(p) * 255.0 + 0.5).astype(np.int64)
    counts = np.bincount(levels.ravel(), minlength=256)
    q = counts[counts > 0] / levels.size
    return float(max(0.0, -np.sum(q * np.log2(q))))


def mean_value(p: ImagePlane | RgbImage) -> float:
    return float(np.mean(_plane(p)))


def avg_gradient(p: ImagePlane | RgbImage) -> float:
    """Mean of ``sqrt((dx^2 + dy^2) / 2)`` with forward differences.

    Evaluated on the ``(H-1) x (W-1)`` grid where both differences exist.
    """
    px = _plane(p)
    if px.shape[0] < 2 or px.shape[1] < 2:
        raise ValueError(f"average gradient needs at least 2x2 pixels, got {px.shape}")
    dx = px[:-1, 1:] - px[:-1, :-1]
    dy = px[1:, :-1] - px[:-1, :-1]
    return float(np.mean(np.sqrt((dx * dx + dy * dy) / 2.0)))


def measure(p: ImagePlane | RgbImage) -> MetricsReport:
    return MetricsReport(entropy(p), mean_value(p), avg_gradient(p))

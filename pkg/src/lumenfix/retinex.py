"""Retinex-style low-light enhancement.

Luminance is split in the log domain into a smooth illumination layer
(bilateral estimate) and a reflection residual.  The illumination is
compressed with an adaptive power law, the residual is boosted with a
logistic curve, the two are recombined and the colour channels rescaled by
the luminance gain.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from .bilateral import BilateralParams, bilateral_direct, bilateral_fast
from .image_core import (
    EPS_FLOOR,
    LOG_FLOOR,
    ImagePlane,
    RgbImage,
    histogram_truncate,
    linear_stretch,
    luminance,
    to_log_domain,
)

REFLECTION_CURVES = ("sigmoid", "linear")


@dataclass(frozen=True)
class EnhanceConfig:
    sigma_s: float = 12.0
    sigma_r: float = 0.4
    gamma_d: float = 0.6
    gamma_a: float = 0.4
    gamma_min: float = 0.2
    gamma_max: float = 1.0
    sigmoid_gain: float = 5.0
    detail_gain: float = 1.5
    truncate_lo: float = 0.01
    truncate_hi: float = 0.01
    # "linear" skips the logistic boost so the residual passes straight to the rescale
    reflection_curve: str = "sigmoid"
    normalize_luminance: bool = False

    def __post_init__(self):
        if not (self.sigma_s > 0 and self.sigma_r > 0):
            raise ValueError("sigma_s and sigma_r must be positive")
        if not 0 < self.gamma_min <= self.gamma_max:
            raise ValueError("require 0 < gamma_min <= gamma_max")
        if not self.sigmoid_gain > 0:
            raise ValueError("sigmoid_gain must be positive")
        if not self.detail_gain > 0:
            raise ValueError("detail_gain must be positive")
        for name in ("truncate_lo", "truncate_hi"):
            if not 0 <= getattr(self, name) < 0.5:
                raise ValueError(f"{name} must lie in [0, 0.5)")
        if self.reflection_curve not in REFLECTION_CURVES:
            raise ValueError(f"reflection_curve must be one of {REFLECTION_CURVES}")

    @property
    def bilateral(self) -> BilateralParams:
        return BilateralParams(self.sigma_s, self.sigma_r)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "EnhanceConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValueError(f"unknown EnhanceConfig keys: {', '.join(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "EnhanceConfig":
        doc = json.loads(text)
        if not isinstance(doc, dict):
            raise ValueError("EnhanceConfig JSON must be an object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class Decomposition:
    log_luminance: ImagePlane
    illumination: ImagePlane
    reflection: ImagePlane


def estimate_illumination(log_lum: ImagePlane, cfg: EnhanceConfig, fast: bool = True) -> ImagePlane:
    if log_lum.domain != "log":
        raise ValueError("illumination is estimated on a log-domain plane")
    filt = bilateral_fast if fast else bilateral_direct
    return filt(log_lum, cfg.bilateral)


def decompose(img: RgbImage, cfg: EnhanceConfig, fast: bool = True) -> Decomposition:
    log_lum = to_log_domain(luminance(img, normalize=cfg.normalize_luminance))
    illum = estimate_illumination(log_lum, cfg, fast)
    refl = ImagePlane(log_lum.pixels - illum.pixels, "residual")
    return Decomposition(log_lum, illum, refl)


def gamma_exponent(illum: ImagePlane, cfg: EnhanceConfig) -> float:
    """Adaptive exponent ``d * (1 - m) + a``, clamped to ``[gamma_min, gamma_max]``.

    ``m`` is the mean illumination rescaled from ``[ln(1/255), 0]`` to [0, 1],
    so dark scenes get the smallest (most brightening) exponents.
    """
    m = float(np.mean(np.clip((illum.pixels - LOG_FLOOR) / -LOG_FLOOR, 0.0, 1.0)))
    return float(np.clip(cfg.gamma_d * (1.0 - m) + cfg.gamma_a, cfg.gamma_min, cfg.gamma_max))


def compress_illumination(illum: ImagePlane, gamma: float) -> ImagePlane:
    """Power law ``H ** gamma`` carried out as a log-domain scale."""
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    # gamma > 1 can push values below the log floor
    return ImagePlane(np.maximum(gamma * illum.pixels, LOG_FLOOR), "log")


def sigmoid_enhance(refl: ImagePlane, k: float) -> ImagePlane:
    """Odd logistic ``2 / (1 + exp(-k z)) - 1``, equal to ``tanh(k z / 2)``."""
    if not k > 0:
        raise ValueError(f"sigmoid gain must be positive, got {k}")
    # tanh form is exactly odd in floating point
    return ImagePlane(np.tanh(0.5 * k * refl.pixels), "residual")


def rescale_reflection(enhanced: ImagePlane, original_refl: ImagePlane, detail_gain: float) -> ImagePlane:
    if enhanced.shape != original_refl.shape:
        raise ValueError("plane sizes differ")
    lo, hi = float(original_refl.pixels.min()), float(original_refl.pixels.max())
    if lo == hi:
        stretched = np.full(enhanced.shape, lo)
    else:
        stretched = linear_stretch(ImagePlane(enhanced.pixels, "residual"), lo, hi).pixels
    return ImagePlane(detail_gain * stretched, "residual")


def fuse(illum_c: ImagePlane, refl_e: ImagePlane) -> ImagePlane:
    if illum_c.shape != refl_e.shape:
        raise ValueError("plane sizes differ")
    return ImagePlane(np.clip(np.exp(illum_c.pixels + refl_e.pixels), 0.0, 1.0), "linear")


@dataclass(frozen=True)
class EnhanceResult:
    image: RgbImage
    luminance: ImagePlane
    enhanced_luminance: ImagePlane
    gamma: float
    decomposition: Decomposition


def enhance_detailed(img: RgbImage, cfg: EnhanceConfig | None = None, fast: bool = True) -> EnhanceResult:
    cfg = cfg or EnhanceConfig()
    dec = decompose(img, cfg, fast)
    illum = histogram_truncate(dec.illumination, cfg.truncate_lo, cfg.truncate_hi)
    gamma = gamma_exponent(illum, cfg)
    illum_c = compress_illumination(illum, gamma)
    if cfg.reflection_curve == "sigmoid":
        boosted = sigmoid_enhance(dec.reflection, cfg.sigmoid_gain)
    else:
        boosted = dec.reflection
    refl_e = rescale_reflection(boosted, dec.reflection, cfg.detail_gain)
    new_lum = fuse(illum_c, refl_e)

    lum = np.exp(dec.log_luminance.pixels)  # luminance floored at EPS_FLOOR
    ratio = new_lum.pixels / np.maximum(lum, EPS_FLOOR)
    out = np.clip(img.pixels * ratio[..., None], 0.0, 1.0)
    return EnhanceResult(
        image=RgbImage(out),
        luminance=ImagePlane(np.clip(lum, 0.0, 1.0), "linear"),
        enhanced_luminance=new_lum,
        gamma=gamma,
        decomposition=dec,
    )


def enhance(img: RgbImage, cfg: EnhanceConfig | None = None, fast: bool = True) -> RgbImage:
    """Full enhancement chain; returns the colour-restored image."""
    return enhance_detailed(img, cfg, fast).image

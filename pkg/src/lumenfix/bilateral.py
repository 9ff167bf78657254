"""Edge-preserving smoothing: brute-force bilateral filter and the bilateral grid.

The grid path splats every pixel into a coarse (y, x, intensity) lattice of
homogeneous ``(value_sum, weight_sum)`` pairs, blurs the lattice with a small
3-D Gaussian and reads the result back by trilinear interpolation followed by
homogeneous division.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .image_core import ImagePlane

# below this interpolated weight the slice falls back to the input pixel
MIN_SLICE_WEIGHT = 1e-12


@dataclass(frozen=True)
class BilateralParams:
    sigma_s: float
    sigma_r: float

    def __post_init__(self):
        if not (self.sigma_s > 0 and self.sigma_r > 0):
            raise ValueError(f"bilateral sigmas must be positive, got {self.sigma_s}, {self.sigma_r}")


@dataclass
class BilateralGrid:
    """Homogeneous lattice indexed ``[y, x, t]``.

    Cell ``(iy, ix, it)`` is centred on pixel ``((iy - 1) * s_spatial,
    (ix - 1) * s_spatial)`` and intensity ``range_origin + (it - 1) * s_range``;
    index 0 and the last index along every axis are padding cells.
    """

    values: np.ndarray
    weights: np.ndarray
    s_spatial: float
    s_range: float
    range_origin: float

    @property
    def ny(self) -> int:
        return self.values.shape[0]

    @property
    def nx(self) -> int:
        return self.values.shape[1]

    @property
    def nt(self) -> int:
        return self.values.shape[2]

    def cells(self) -> np.ndarray:
        """``(ny * nx * nt, 2)`` view of the (value_sum, weight_sum) pairs."""
        return np.stack([self.values.ravel(), self.weights.ravel()], axis=1)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalised 1-D Gaussian taps over radius ``ceil(3 * sigma)``."""
    radius = int(math.ceil(3.0 * sigma))
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(k * k) / (2.0 * sigma * sigma))
    return taps / taps.sum()


def bilateral_direct(p: ImagePlane, params: BilateralParams) -> ImagePlane:
    """Brute-force bilateral filter over a square ``ceil(3 sigma_s)`` window.

    Out-of-image neighbours are read from the nearest border pixel.
    """
    px = p.pixels
    h, w = px.shape
    r = int(math.ceil(3.0 * params.sigma_s))
    padded = np.pad(px, r, mode="edge")
    num = np.zeros_like(px)
    den = np.zeros_like(px)
    inv_s = -0.5 / (params.sigma_s * params.sigma_s)
    inv_r = -0.5 / (params.sigma_r * params.sigma_r)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            g_s = math.exp((dx * dx + dy * dy) * inv_s)
            nb = padded[r + dy : r + dy + h, r + dx : r + dx + w]
            d = nb - px
            wgt = np.exp(d * d * inv_r)
            wgt *= g_s
            den += wgt
            wgt *= nb
            num += wgt
    return p.with_pixels(num / den)


def _cell_index(coord: np.ndarray, step: float) -> np.ndarray:
    # nearest cell, halves rounded up; +1 skips the padding cell
    return np.floor(coord / step + 0.5).astype(np.int64) + 1


def grid_build(p: ImagePlane, s_spatial: float, s_range: float) -> BilateralGrid:
    if not (s_spatial > 0 and s_range > 0):
        raise ValueError("grid sampling rates must be positive")
    px = p.pixels
    h, w = px.shape
    origin = float(px.min())
    ny = int(math.floor((h - 1) / s_spatial + 0.5)) + 3
    nx = int(math.floor((w - 1) / s_spatial + 0.5)) + 3
    nt = int(math.floor((float(px.max()) - origin) / s_range + 0.5)) + 3

    ys, xs = np.indices((h, w))
    iy = _cell_index(ys.ravel().astype(np.float64), s_spatial)
    ix = _cell_index(xs.ravel().astype(np.float64), s_spatial)
    it = _cell_index(px.ravel() - origin, s_range)
    flat = (iy * nx + ix) * nt + it

    size = ny * nx * nt
    values = np.bincount(flat, weights=px.ravel(), minlength=size).reshape(ny, nx, nt)
    weights = np.bincount(flat, minlength=size).astype(np.float64).reshape(ny, nx, nt)
    return BilateralGrid(values, weights, float(s_spatial), float(s_range), origin)


def _blur_axis(a: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    r = len(taps) // 2
    pad = [(0, 0)] * a.ndim
    pad[axis] = (r, r)
    padded = np.pad(a, pad, mode="edge")
    n = a.shape[axis]
    out = np.zeros_like(a)
    for i, tap in enumerate(taps):
        out += tap * np.take(padded, np.arange(i, i + n), axis=axis)
    return out


def grid_blur(g: BilateralGrid, sigma_cells: float) -> BilateralGrid:
    """Separable 3-D Gaussian over both homogeneous channels, clamped borders."""
    if not sigma_cells > 0:
        raise ValueError("sigma_cells must be positive")
    taps = gaussian_kernel(sigma_cells)
    values, weights = g.values, g.weights
    for axis in range(3):
        values = _blur_axis(values, taps, axis)
        weights = _blur_axis(weights, taps, axis)
    return BilateralGrid(values, weights, g.s_spatial, g.s_range, g.range_origin)


def _trilinear(field: np.ndarray, gy: np.ndarray, gx: np.ndarray, gt: np.ndarray) -> np.ndarray:
    ny, nx, nt = field.shape
    y0 = np.clip(np.floor(gy).astype(np.int64), 0, ny - 1)
    x0 = np.clip(np.floor(gx).astype(np.int64), 0, nx - 1)
    t0 = np.clip(np.floor(gt).astype(np.int64), 0, nt - 1)
    y1 = np.minimum(y0 + 1, ny - 1)
    x1 = np.minimum(x0 + 1, nx - 1)
    t1 = np.minimum(t0 + 1, nt - 1)
    fy = np.clip(gy - y0, 0.0, 1.0)
    fx = np.clip(gx - x0, 0.0, 1.0)
    ft = np.clip(gt - t0, 0.0, 1.0)

    def lerp_t(yi, xi):
        return field[yi, xi, t0] * (1.0 - ft) + field[yi, xi, t1] * ft

    c0 = lerp_t(y0, x0) * (1.0 - fx) + lerp_t(y0, x1) * fx
    c1 = lerp_t(y1, x0) * (1.0 - fx) + lerp_t(y1, x1) * fx
    return c0 * (1.0 - fy) + c1 * fy


def grid_slice(g: BilateralGrid, p: ImagePlane) -> ImagePlane:
    px = p.pixels
    h, w = px.shape
    ys, xs = np.indices((h, w), dtype=np.float64)
    gy = ys / g.s_spatial + 1.0
    gx = xs / g.s_spatial + 1.0
    gt = (px - g.range_origin) / g.s_range + 1.0
    val = _trilinear(g.values, gy, gx, gt)
    wgt = _trilinear(g.weights, gy, gx, gt)
    ok = wgt >= MIN_SLICE_WEIGHT
    out = np.where(ok, val / np.where(ok, wgt, 1.0), px)
    return p.with_pixels(out)


def bilateral_fast(p: ImagePlane, params: BilateralParams) -> ImagePlane:
    """Bilateral grid with one cell per sigma and a unit blur in cell units.

    The plane is edge-padded by the direct filter's window radius before
    splatting, so both paths see the same clamped border samples.
    """
    r = int(math.ceil(3.0 * params.sigma_s))
    padded = p.with_pixels(np.pad(p.pixels, r, mode="edge"))
    grid = grid_blur(grid_build(padded, params.sigma_s, params.sigma_r), 1.0)
    out = grid_slice(grid, padded).pixels[r:-r, r:-r]
    return p.with_pixels(out)

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lumenfix.bilateral import bilateral_direct, bilateral_fast
from lumenfix.image_core import LOG_FLOOR, ImagePlane, RgbImage, luminance, to_log_domain
from lumenfix.retinex import (
    EnhanceConfig,
    compress_illumination,
    decompose,
    enhance,
    enhance_detailed,
    estimate_illumination,
    fuse,
    gamma_exponent,
    rescale_reflection,
    sigmoid_enhance,
)

CFG = EnhanceConfig()


def gray(px):
    return RgbImage(np.repeat(np.asarray(px, float)[..., None], 3, axis=2))


def log_plane_at(m, shape=(4, 4)):
    """Log plane whose normalised mean illumination is ``m``."""
    return ImagePlane(np.full(shape, LOG_FLOOR * (1 - m)), "log")


# -- config ---------------------------------------------------------------------------------


def test_defaults():
    assert CFG.to_dict() == {
        "sigma_s": 12.0,
        "sigma_r": 0.4,
        "gamma_d": 0.6,
        "gamma_a": 0.4,
        "gamma_min": 0.2,
        "gamma_max": 1.0,
        "sigmoid_gain": 5.0,
        "detail_gain": 1.5,
        "truncate_lo": 0.01,
        "truncate_hi": 0.01,
        "reflection_curve": "sigmoid",
        "normalize_luminance": False,
    }


def test_json_round_trip_and_unknown_keys():
    cfg = EnhanceConfig.from_json(json.dumps({"sigma_s": 4.0, "detail_gain": 1.0}))
    assert cfg.sigma_s == 4.0 and cfg.detail_gain == 1.0
    assert EnhanceConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="sigma"):
        EnhanceConfig.from_json('{"sigma": 3}')
    with pytest.raises(ValueError):
        EnhanceConfig.from_json("[1, 2]")


@pytest.mark.parametrize(
    "bad",
    [
        {"sigma_s": 0},
        {"gamma_min": 0},
        {"gamma_min": 0.8, "gamma_max": 0.5},
        {"sigmoid_gain": -1},
        {"detail_gain": 0},
        {"truncate_lo": 0.5},
        {"reflection_curve": "cubic"},
    ],
)
def test_invalid_config_rejected(bad):
    with pytest.raises(ValueError):
        EnhanceConfig(**bad)


# -- illumination and decomposition ---------------------------------------------------------------


@pytest.mark.parametrize("fast", [True, False])
def test_constant_log_plane_is_its_own_illumination(fast):
    p = ImagePlane(np.full((10, 10), -2.0), "log")
    assert np.allclose(estimate_illumination(p, CFG, fast).pixels, -2.0, atol=1e-12)


def test_illumination_uses_chosen_path():
    p = to_log_domain(ImagePlane(np.random.default_rng(0).random((30, 30)) * 0.5 + 0.1))
    cfg = EnhanceConfig(sigma_s=3, sigma_r=0.3)
    assert np.array_equal(estimate_illumination(p, cfg, False).pixels, bilateral_direct(p, cfg.bilateral).pixels)
    assert np.array_equal(estimate_illumination(p, cfg, True).pixels, bilateral_fast(p, cfg.bilateral).pixels)


def test_illumination_rejects_linear_plane():
    with pytest.raises(ValueError):
        estimate_illumination(ImagePlane(np.zeros((2, 2))), CFG)


def test_smooth_gradient_has_small_reflection():
    ramp = np.tile(np.linspace(0.2, 0.6, 48), (48, 1))
    dec = decompose(gray(ramp), EnhanceConfig(sigma_s=3, sigma_r=0.4), fast=False)
    # a linear ramp is reproduced by a symmetric filter away from the borders
    assert np.max(np.abs(dec.reflection.pixels[:, 10:-10])) < 1e-2


def test_gray_constant_has_zero_reflection():
    dec = decompose(gray(np.full((16, 16), 0.3)), CFG)
    assert np.allclose(dec.reflection.pixels, 0, atol=1e-12)


def test_checkerboard_reflection_carries_pattern():
    yy, xx = np.indices((32, 32))
    board = np.where((yy // 2 + xx // 2) % 2 == 0, 0.3, 0.5)
    dec = decompose(gray(board), EnhanceConfig(sigma_s=4, sigma_r=2.0), fast=False)
    log_l = dec.log_luminance.pixels
    mean = log_l.mean()
    # wide range sigma: illumination close to the mean, reflection carries the squares
    assert np.max(np.abs(dec.illumination.pixels[4:-4, 4:-4] - mean)) < 0.05
    assert np.all(np.sign(dec.reflection.pixels[4:-4, 4:-4]) == np.sign(log_l[4:-4, 4:-4] - mean))


@settings(max_examples=20, deadline=None)
@given(arrays(np.float64, (10, 12, 3), elements=st.floats(0, 1)), st.booleans())
def test_decomposition_is_exact(px, fast):
    dec = decompose(RgbImage(px), EnhanceConfig(sigma_s=2, sigma_r=0.3), fast)
    total = dec.illumination.pixels + dec.reflection.pixels
    assert np.max(np.abs(total - dec.log_luminance.pixels)) <= 1e-12


# -- gamma and compression -------------------------------------------------------------------------


def test_gamma_examples():
    assert gamma_exponent(log_plane_at(1.0), CFG) == pytest.approx(0.4)
    assert gamma_exponent(log_plane_at(0.0), CFG) == pytest.approx(1.0)
    assert gamma_exponent(log_plane_at(0.5), CFG) == pytest.approx(0.7)


def test_gamma_clamps():
    cfg = EnhanceConfig(gamma_d=2.0, gamma_a=0.0, gamma_min=0.3, gamma_max=0.9)
    assert gamma_exponent(log_plane_at(1.0), cfg) == 0.3
    assert gamma_exponent(log_plane_at(0.0), cfg) == 0.9


def test_compress_examples():
    h = ImagePlane(np.array([[math.log(0.25)]]), "log")
    assert np.array_equal(compress_illumination(h, 1.0).pixels, h.pixels)
    assert math.exp(compress_illumination(h, 0.5).pixels[0, 0]) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        compress_illumination(h, 0.0)


@given(
    arrays(np.float64, (6,), elements=st.floats(LOG_FLOOR, 0)),
    st.floats(0.05, 0.999),
)
def test_compress_brightens_and_keeps_order(px, gamma):
    out = compress_illumination(ImagePlane(px[None, :], "log"), gamma).pixels[0]
    assert np.all(np.exp(out) >= np.exp(px) - 1e-15)
    order = np.argsort(px, kind="stable")
    assert np.all(np.diff(out[order]) >= 0)


# -- reflection ------------------------------------------------------------------------------------


def test_sigmoid_examples():
    z = ImagePlane(np.array([[0.0, 50.0, math.log(3)]]), "residual")
    out = sigmoid_enhance(z, 1.0).pixels[0]
    assert out[0] == 0.0
    assert out[1] == pytest.approx(1.0, abs=1e-15)
    assert out[2] == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ValueError):
        sigmoid_enhance(z, 0)


@given(arrays(np.float64, (8,), elements=st.floats(-20, 20)), st.floats(0.1, 10))
def test_sigmoid_odd_bounded_monotone(z, k):
    f = lambda v: sigmoid_enhance(ImagePlane(v[None, :], "residual"), k).pixels[0]
    out = f(z)
    assert np.max(np.abs(f(-z) + out)) <= 1e-12
    assert np.all(np.abs(out) <= 1)
    order = np.argsort(z)
    assert np.all(np.diff(out[order]) >= 0)
    # logistic form agrees with the tanh implementation
    assert np.allclose(out, 2 / (1 + np.exp(-k * z)) - 1, atol=1e-12)


def test_rescale_examples():
    zero = ImagePlane(np.zeros((3, 3)), "residual")
    const = ImagePlane(np.full((3, 3), -0.4), "residual")
    assert np.allclose(rescale_reflection(zero, const, 1.5).pixels, -0.4 * 1.5)

    orig = ImagePlane(np.array([[-1.0, 0.0, 2.0]]), "residual")
    same = rescale_reflection(orig, orig, 1.0).pixels
    assert np.allclose(same, orig.pixels)

    enh = ImagePlane(np.array([[-0.3, 0.1, 0.5]]), "residual")
    out = rescale_reflection(enh, orig, 1.5).pixels
    assert np.ptp(out) == pytest.approx(1.5 * 3.0)
    assert out.min() == pytest.approx(-1.5) and out.max() == pytest.approx(3.0)


def test_fuse_examples():
    h = ImagePlane(np.array([[math.log(0.3), -0.1]]), "log")
    zero = ImagePlane(np.zeros((1, 2)), "residual")
    assert np.allclose(fuse(h, zero).pixels, np.exp(h.pixels))
    big = ImagePlane(np.array([[0.0, 1.0]]), "residual")
    assert fuse(h, big).pixels[0, 1] == 1.0


# -- full pipeline --------------------------------------------------------------------------------


def test_black_stays_black():
    out = enhance(RgbImage(np.zeros((12, 12, 3))))
    assert np.array_equal(out.pixels, np.zeros((12, 12, 3)))


def test_low_light_scene_gets_brighter():
    rng = np.random.default_rng(2)
    px = np.clip(0.05 + rng.normal(0, 0.01, (48, 48)), 0, 1)
    px[10:30, 12:34] = 0.18
    assert enhance(gray(px)).pixels.mean() > px.mean()


@settings(max_examples=10, deadline=None)
@given(arrays(np.float64, (14, 14), elements=st.floats(0, 1)))
def test_gray_stays_gray(px):
    out = enhance(gray(px), EnhanceConfig(sigma_s=3)).pixels
    assert np.max(np.abs(out[..., 0] - out[..., 1])) <= 1e-12
    assert np.max(np.abs(out[..., 0] - out[..., 2])) <= 1e-12


@settings(max_examples=10, deadline=None)
@given(arrays(np.float64, (10, 9, 3), elements=st.floats(0, 1)), st.booleans())
def test_enhance_bounded_and_deterministic(px, fast):
    cfg = EnhanceConfig(sigma_s=2)
    a = enhance(RgbImage(px), cfg, fast).pixels
    b = enhance(RgbImage(px), cfg, fast).pixels
    assert a.min() >= 0 and a.max() <= 1
    assert np.array_equal(a, b)


IDENTITY = EnhanceConfig(
    gamma_min=1.0,
    gamma_max=1.0,
    truncate_lo=0.0,
    truncate_hi=0.0,
    detail_gain=1.0,
    reflection_curve="linear",
)


def test_identity_config_reconstructs_luminance():
    px = np.random.default_rng(8).random((24, 20, 3)) * 0.8 + 0.05
    img = RgbImage(px)
    res = enhance_detailed(img, IDENTITY)
    lum = np.maximum(luminance(img).pixels, 1 / 255)
    assert res.gamma == 1.0
    assert np.max(np.abs(res.enhanced_luminance.pixels - lum)) < 1e-6
    assert np.max(np.abs(res.image.pixels - px)) < 1e-6

import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import entropy as scipy_entropy

from lumenfix.image_core import ImagePlane, RgbImage, luminance
from lumenfix.metrics import CSV_HEADER, avg_gradient, entropy, mean_value, measure

planes = arrays(np.float64, st.tuples(st.integers(2, 9), st.integers(2, 9)), elements=st.floats(0, 1))


def plane(px):
    return ImagePlane(np.asarray(px, float))


def test_entropy_examples():
    assert entropy(plane(np.full((4, 4), 0.3))) == 0.0
    two = np.zeros((4, 4))
    two[:, 2:] = 1.0
    assert entropy(plane(two)) == 1.0
    levels = np.arange(256).reshape(16, 16) / 255
    assert entropy(plane(levels)) == pytest.approx(8.0, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(planes)
def test_entropy_matches_histogram_oracle(px):
    counts = Counter(math.floor(v * 255 + 0.5) for v in px.ravel())
    ref = scipy_entropy(list(counts.values()), base=2)
    got = entropy(plane(px))
    assert got == pytest.approx(ref, abs=1e-12)
    assert 0 <= got <= 8


@settings(max_examples=30, deadline=None)
@given(planes, st.randoms(use_true_random=False))
def test_entropy_permutation_invariant(px, rnd):
    flat = list(px.ravel())
    rnd.shuffle(flat)
    shuffled = np.array(flat).reshape(px.shape)
    assert entropy(plane(shuffled)) == pytest.approx(entropy(plane(px)), abs=1e-12)


def test_mean_examples():
    assert mean_value(plane(np.zeros((3, 3)))) == 0.0
    assert mean_value(plane(np.ones((3, 3)))) == 1.0
    half = np.zeros((2, 4))
    half[1] = 1
    assert mean_value(plane(half)) == 0.5


@given(planes, st.floats(0, 0.5), st.floats(0, 0.5))
def test_mean_commutes_with_affine_maps(px, a, b):
    assert mean_value(plane(a * px + b)) == pytest.approx(a * mean_value(plane(px)) + b, abs=1e-12)


def test_avg_gradient_examples():
    assert avg_gradient(plane(np.full((5, 5), 0.7))) == 0.0
    c = 0.05
    ramp = np.tile(np.arange(8) * c, (6, 1))
    assert avg_gradient(plane(ramp)) == pytest.approx(c / math.sqrt(2), abs=1e-15)


def test_avg_gradient_needs_two_by_two():
    with pytest.raises(ValueError):
        avg_gradient(plane(np.zeros((1, 5))))


def test_avg_gradient_loop_oracle():
    px = np.random.default_rng(0).random((5, 7))
    h, w = px.shape
    total = 0.0
    for y in range(h - 1):
        for x in range(w - 1):
            dx = px[y, x + 1] - px[y, x]
            dy = px[y + 1, x] - px[y, x]
            total += math.sqrt((dx * dx + dy * dy) / 2)
    assert avg_gradient(plane(px)) == pytest.approx(total / ((h - 1) * (w - 1)), abs=1e-15)


def test_avg_gradient_translation_invariant():
    px = np.random.default_rng(1).random((6, 6)) * 0.5
    assert avg_gradient(plane(px + 0.3)) == pytest.approx(avg_gradient(plane(px)), abs=1e-12)


@given(planes, st.floats(0, 1))
def test_avg_gradient_scales_linearly(px, a):
    assert avg_gradient(plane(a * px)) == pytest.approx(a * avg_gradient(plane(px)), abs=1e-12)


def test_colour_images_use_luminance():
    px = np.random.default_rng(2).random((6, 6, 3))
    img = RgbImage(px)
    assert measure(img) == measure(luminance(img))


def test_csv_row():
    report = measure(plane(np.full((2, 2), 0.5)))
    assert CSV_HEADER == ("path", "entropy_bits", "mean_value", "avg_gradient")
    assert report.row("a.ppm") == ["a.ppm", "0.0", "0.5", "0.0"]


def test_log_plane_rejected():
    with pytest.raises(ValueError):
        mean_value(ImagePlane(np.zeros((2, 2)), "log"))

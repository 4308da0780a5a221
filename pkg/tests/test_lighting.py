"""Tests for the scene lighting presets."""

import numpy as np
import pytest

from nearfield.lighting import LIGHTING_MODES, apply_lighting, lighting_field


@pytest.fixture
def image():
    rng = np.random.default_rng(11)
    return rng.integers(0, 256, size=(48, 64, 3), dtype=np.uint8)


def fit_gradient_angle(gain):
    """Least-squares plane fit; returns the gradient direction in degrees."""
    h, w = gain.shape
    ys, xs = np.mgrid[0:h, 0:w]
    a = np.stack([xs.ravel(), ys.ravel(), np.ones(gain.size)], axis=1)
    coef, *_ = np.linalg.lstsq(a, gain.ravel(), rcond=None)
    return np.degrees(np.arctan2(coef[1], coef[0])) % 360.0


class TestLightingField:
    def test_regular_is_identity(self):
        gain, offset = lighting_field((10, 20), "regular")
        assert gain == 1.0
        assert offset == 0.0

    def test_reduced_gain(self):
        gain, offset = lighting_field((10, 20), "reduced")
        assert gain == pytest.approx(0.45)
        assert offset == 0.0

    @pytest.mark.parametrize("mode,angle", [("angle_45", 45.0), ("angle_225", 225.0)])
    @pytest.mark.parametrize("shape", [(64, 64), (48, 96)])
    def test_oblique_gradient_direction(self, mode, angle, shape):
        gain, offset = lighting_field(shape, mode)
        assert offset == 0.0
        assert gain.shape == shape
        got = fit_gradient_angle(gain)
        delta = (got - angle + 180.0) % 360.0 - 180.0
        assert abs(delta) < 1.0

    def test_oblique_range(self):
        gain, _ = lighting_field((64, 64), "angle_45")
        assert gain.min() >= 0.55 - 1e-6
        assert gain.max() <= 1.15 + 1e-6
        assert gain.max() - gain.min() > 0.3

    def test_harsh_has_offset(self):
        gain, offset = lighting_field((10, 20), "harsh")
        assert gain == pytest.approx(1.4)
        assert offset == pytest.approx(25.0)

    def test_unknown_mode(self):
        with pytest.raises(ValueError, match="lighting mode"):
            lighting_field((10, 20), "neon")


class TestApplyLighting:
    def test_regular_returns_equal_copy(self, image):
        out = apply_lighting(image, "regular")
        assert np.array_equal(out, image)
        assert out is not image
        out[0, 0, 0] ^= 0xFF
        assert not np.array_equal(out, image)

    def test_reduced_lowers_every_nonzero_pixel(self, image):
        image[0, 0] = (1, 0, 255)
        out = apply_lighting(image, "reduced")
        nz = image > 0
        assert (out[nz] < image[nz]).all()
        assert (out[~nz] == 0).all()
        assert out[0, 0, 0] == 0

    def test_harsh_brightens_and_clips(self, image):
        image[0, 0] = (250, 0, 128)
        out = apply_lighting(image, "harsh")
        assert out[0, 0, 0] == 255
        assert out[0, 0, 1] == 25
        assert out.max() <= 255

    def test_oblique_dims_one_corner_brightens_other(self):
        flat = np.full((64, 64, 3), 128, dtype=np.uint8)
        out = apply_lighting(flat, "angle_45")
        assert out[1, 1].mean() < 128 * 0.75
        assert out[-2, -2].mean() > 128 * 1.05

    def test_output_dtype_and_shape(self, image):
        for mode in LIGHTING_MODES:
            out = apply_lighting(image, mode)
            assert out.dtype == np.uint8
            assert out.shape == image.shape

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            apply_lighting(np.zeros((4, 4), dtype=np.uint8), "regular")
        with pytest.raises(ValueError):
            apply_lighting(np.zeros((4, 4, 3), dtype=np.float32), "regular")

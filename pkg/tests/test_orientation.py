import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from strandkit.errors import (BadKernelParams, BadMagic, DimensionMismatch,
                              TruncatedFile)
from strandkit.orientation import (GaborParams, OrientationMap, delta_theta,
                                   gabor_kernel, mask_loss, orient_map,
                                   orientation_loss)


def stripes(angle, size=64, wavelength=4.0):
    """Sinusoidal stripe image whose lines run along `angle`."""
    y, x = np.mgrid[0:size, 0:size].astype(float)
    normal = np.array([-np.sin(angle), np.cos(angle)])
    return 0.5 + 0.5 * np.cos(2 * np.pi * (x * normal[0] + y * normal[1]) / wavelength)


class TestGaborKernel:
    def test_pi_periodic(self):
        a = gabor_kernel(0.7)
        b = gabor_kernel(0.7 + np.pi)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_zero_mean(self):
        for theta in np.linspace(0, np.pi, 9):
            assert abs(gabor_kernel(theta).sum()) < 1e-6

    def test_vertical_stripes_dominate_horizontal(self):
        k = gabor_kernel(0.0)
        y, x = np.mgrid[0:64, 0:64].astype(float)
        vertical = 0.5 + 0.5 * np.cos(2 * np.pi * x / 4.0)
        horizontal = 0.5 + 0.5 * np.cos(2 * np.pi * y / 4.0)
        rv = np.abs(ndimage.convolve(vertical, k, mode="reflect")).max()
        rh = np.abs(ndimage.convolve(horizontal, k, mode="reflect")).max()
        assert rv >= 10.0 * rh

    def test_bad_params(self):
        with pytest.raises(BadKernelParams):
            gabor_kernel(0.0, size=8)
        with pytest.raises(BadKernelParams):
            gabor_kernel(0.0, sigma=0.0)
        with pytest.raises(BadKernelParams):
            gabor_kernel(0.0, wavelength=-1.0)


class TestDeltaTheta:
    def test_identical(self):
        assert delta_theta(0.3, 0.3) == 0.0

    def test_pi_identified(self):
        assert delta_theta(0.0, np.pi) == pytest.approx(0.0)

    def test_example_value(self):
        assert delta_theta(0.2, 1.9) == pytest.approx(np.pi - 1.7)

    @given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10))
    @settings(max_examples=200)
    def test_pseudometric(self, a, b, c):
        dab, dba = delta_theta(a, b), delta_theta(b, a)
        assert dab == dba
        assert 0.0 <= dab <= np.pi / 2 + 1e-12
        assert delta_theta(a, a) == 0.0
        assert delta_theta(a, c) <= dab + delta_theta(b, c) + 1e-12


class TestOrientMap:
    def test_45_degree_stripes(self):
        m = orient_map(stripes(np.pi / 4))
        sel = m.confidence > 0.5
        assert sel.sum() > 100
        err = delta_theta(m.theta[sel], np.pi / 4)
        assert np.degrees(err.mean()) < 2.0

    def test_constant_image_zero_confidence(self):
        m = orient_map(np.full((32, 32), 0.7))
        np.testing.assert_allclose(m.confidence, 0.0)

    def test_rotation_by_90(self):
        img = stripes(np.pi / 4)
        m = orient_map(img)
        m2 = orient_map(np.rot90(img))
        sel = m2.confidence > 0.5
        err = delta_theta(m2.theta[sel], np.pi / 4 + np.pi / 2)
        assert np.degrees(err.mean()) < 3.0

    def test_brightness_scale_invariant_confidence(self):
        img = stripes(np.deg2rad(30.0))
        base = orient_map(img)
        for scale in (0.25, 0.7, 4.0):
            m = orient_map(img * scale)
            np.testing.assert_allclose(m.confidence, base.confidence, atol=1e-6)

    def test_too_few_angles(self):
        with pytest.raises(BadKernelParams):
            orient_map(stripes(0.0), num_angles=3)


class TestOrientationLoss:
    def test_identity_zero(self):
        m = orient_map(stripes(np.pi / 3))
        assert orientation_loss(m, m) == 0.0

    def test_quarter_turn_offset(self):
        theta = np.full((16, 16), 0.4)
        gt = OrientationMap(theta, np.ones_like(theta))
        pred = OrientationMap(theta + np.pi / 2, np.ones_like(theta))
        assert orientation_loss(pred, gt) == pytest.approx(np.pi / 2)

    def test_zero_confidence_annihilates(self):
        rng = np.random.default_rng(0)
        gt = OrientationMap(rng.uniform(0, np.pi, (16, 16)), np.zeros((16, 16)))
        pred = OrientationMap(rng.uniform(0, np.pi, (16, 16)), np.ones((16, 16)))
        assert orientation_loss(pred, gt) == 0.0

    def test_dimension_mismatch(self):
        a = OrientationMap(np.zeros((8, 8)), np.ones((8, 8)))
        b = OrientationMap(np.zeros((8, 9)), np.ones((8, 9)))
        with pytest.raises(DimensionMismatch):
            orientation_loss(a, b)


class TestMaskLoss:
    def test_half_everywhere_is_ln2(self):
        m = np.full((20, 20), 0.5)
        assert mask_loss(m, m) == pytest.approx(np.log(2.0), abs=1e-12)

    def test_perfect_binary_is_epsilon_level(self):
        rng = np.random.default_rng(1)
        gt = (rng.random((16, 16)) > 0.5).astype(float)
        assert mask_loss(gt, gt) < 1e-6

    def test_inverted_binary_is_huge(self):
        rng = np.random.default_rng(1)
        gt = (rng.random((16, 16)) > 0.5).astype(float)
        assert mask_loss(1.0 - gt, gt) == pytest.approx(-np.log(1e-7), rel=1e-6)

    def test_minimized_at_gt(self):
        rng = np.random.default_rng(2)
        gt = (rng.random((12, 12)) > 0.5).astype(float)
        base = mask_loss(gt, gt)
        for _ in range(10):
            perturbed = np.clip(gt + rng.normal(0, 0.1, gt.shape), 0, 1)
            assert mask_loss(perturbed, gt) >= base

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            mask_loss(np.zeros((4, 4)), np.zeros((5, 4)))


class TestOri1Format:
    def test_round_trip(self):
        m = orient_map(stripes(np.pi / 6, size=24))
        data = m.to_bytes()
        back = OrientationMap.from_bytes(data)
        assert back.width == 24 and back.height == 24
        np.testing.assert_allclose(back.theta, m.theta.astype(np.float32), atol=0)
        np.testing.assert_allclose(back.confidence,
                                   m.confidence.astype(np.float32), atol=0)

    def test_bad_magic(self):
        with pytest.raises(BadMagic):
            OrientationMap.from_bytes(b"NOPE" + b"\0" * 100)

    def test_truncations(self):
        data = orient_map(stripes(0.0, size=16)).to_bytes()
        for cut in (0, 2, 4, 11, 12, 100, len(data) - 1):
            with pytest.raises(TruncatedFile) as err:
                OrientationMap.from_bytes(data[:cut])
            assert err.value.position is not None

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sclc import augment as A


def images(h=st.integers(2, 12), w=st.integers(2, 12)):
    return st.tuples(h, w).flatmap(lambda s: arrays(np.float64, (3, *s), elements=st.floats(0, 1)))


class TestResize:
    def test_two_by_two_upsample(self):
        # source coordinates -0.25, 0.25, 0.75, 1.25 clamp to 0, .25, .75, 1
        out = A.resize_bilinear(np.array([[0.0, 1.0], [0.0, 1.0]]), 4, 4)
        np.testing.assert_allclose(out, np.tile([0.0, 0.25, 0.75, 1.0], (4, 1)), atol=1e-15)

    def test_constant(self):
        out = A.resize_bilinear(np.full((3, 7, 5), 0.4), 13, 9)
        np.testing.assert_allclose(out, 0.4, atol=1e-12)

    def test_224_resolution(self):
        img = np.random.default_rng(0).random((3, 40, 31))
        assert A.resize_bilinear(img, 224, 224).shape == (3, 224, 224)
        pol = A.AugmentPolicy(target=(224, 224))
        assert A.augment(img, pol, np.random.default_rng(0)).shape == (3, 224, 224)

    def test_same_size_identity(self):
        img = np.random.default_rng(1).random((3, 6, 6))
        np.testing.assert_array_equal(A.resize_bilinear(img, 6, 6), img)

    def test_downsample_by_two_averages(self):
        img = np.random.default_rng(2).random((1, 4, 4))
        ref = img.reshape(1, 2, 2, 2, 2).mean(axis=(2, 4))
        np.testing.assert_allclose(A.resize_bilinear(img, 2, 2), ref, atol=1e-15)

    def test_zero_target(self):
        with pytest.raises(ValueError):
            A.resize_bilinear(np.zeros((3, 4, 4)), 0, 4)

    @given(images())
    def test_range(self, img):
        out = A.resize_bilinear(img, 9, 5)
        assert out.min() >= img.min() - 1e-12 and out.max() <= img.max() + 1e-12


class TestAugment:
    def test_identity_policy(self):
        img = np.random.default_rng(0).random((3, 8, 8))
        out = A.augment(img, A.AugmentPolicy.identity((8, 8)), np.random.default_rng(5))
        np.testing.assert_array_equal(out, img)

    def test_color_drop(self):
        img = np.random.default_rng(0).random((3, 8, 8))
        pol = A.AugmentPolicy((1.0, 1.0), 0.0, 0.0, 1.0, 0.0, target=(8, 8))
        out = A.augment(img, pol, np.random.default_rng(0))
        np.testing.assert_array_equal(out[0], out[1])
        np.testing.assert_array_equal(out[1], out[2])
        np.testing.assert_allclose(out[0], 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2], atol=1e-15)

    def test_same_seed_same_output(self):
        img = np.random.default_rng(0).random((3, 16, 16))
        a = A.augment(img, A.AugmentPolicy(), np.random.default_rng(42))
        b = A.augment(img, A.AugmentPolicy(), np.random.default_rng(42))
        assert a.tobytes() == b.tobytes()

    def test_rng_advance_independent_of_branches(self):
        img = np.random.default_rng(0).random((3, 8, 8))
        r1, r2 = np.random.default_rng(3), np.random.default_rng(3)
        A.augment(img, A.AugmentPolicy(), r1)
        A.augment(img, A.AugmentPolicy.identity((8, 8)), r2)
        assert r1.random() == r2.random()

    def test_too_small(self):
        with pytest.raises(ValueError, match="too small"):
            A.augment(np.zeros((3, 1, 5)), A.AugmentPolicy(), np.random.default_rng(0))

    @settings(max_examples=40, deadline=None)
    @given(images(), st.integers(0, 2**32 - 1))
    def test_range_and_shape(self, img, seed):
        out = A.augment(img, A.AugmentPolicy(target=(10, 7)), np.random.default_rng(seed))
        assert out.shape == (3, 10, 7)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_batch_samples_differ(self):
        img = np.random.default_rng(0).random((3, 16, 16))
        out = A.augment_batch(np.stack([img, img]), A.AugmentPolicy(target=(16, 16)), 0, [(0, 0), (0, 1)])
        assert not np.array_equal(out[0], out[1])
        again = A.augment_batch(np.stack([img, img]), A.AugmentPolicy(target=(16, 16)), 0, [(0, 0), (0, 1)])
        assert out.tobytes() == again.tobytes()

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            A.AugmentPolicy(hflip_prob=1.5)
        with pytest.raises(ValueError):
            A.AugmentPolicy(crop_range=(0.0, 1.0))


@given(images())
def test_flips_are_involutions(img):
    np.testing.assert_array_equal(A.hflip(A.hflip(img)), img)
    np.testing.assert_array_equal(A.vflip(A.vflip(img)), img)
    np.testing.assert_array_equal(A.hflip(img)[:, :, 0], img[:, :, -1])

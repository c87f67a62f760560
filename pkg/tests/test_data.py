import numpy as np
import pytest

import saliencybench as sb
from saliencybench.data import read_pgm, write_pgm
from saliencybench.errors import (BadMagicError, DecodeError,
                                  TruncatedFileError)


class TestSceneGeneration:
    def test_paired_labels_differ_only_inside_mask(self):
        params = sb.SceneParams(noise_sigma=0.0, contrast_delta=0.35, seed=2)
        a = sb.generate_sample(params, 17, 0)
        b = sb.generate_sample(params, 17, 1)
        diff = b.image - a.image
        assert np.array_equal(a.mask, b.mask)
        assert np.allclose(diff[a.mask], 0.35)
        assert np.all(diff[~a.mask] == 0.0)

    def test_paired_noise_is_shared(self):
        # same scene seed, flipped label: geometry and noise coincide, so
        # the images still differ only inside the mask
        params = sb.SceneParams(seed=2)
        a = sb.generate_sample(params, 4, 0)
        b = sb.generate_sample(params, 4, 1)
        assert np.all(a.image[~a.mask] == b.image[~b.mask])

    def test_same_seed_bit_identical(self):
        params = sb.SceneParams(seed=9)
        d1 = sb.generate_dataset(params, 30)
        d2 = sb.generate_dataset(params, 30)
        for s1, s2 in zip(d1.samples, d2.samples):
            assert np.array_equal(s1.image, s2.image)
            assert np.array_equal(s1.mask, s2.mask)
            assert s1.label == s2.label

    def test_mask_coverage_band(self):
        ds = sb.generate_dataset(sb.SceneParams(seed=0), 400)
        coverages = np.array([s.mask.mean() for s in ds.samples])
        assert np.all(coverages >= 0.01) and np.all(coverages <= 0.11)
        assert 0.02 <= coverages.mean() <= 0.06

    def test_splits_disjoint_and_sized(self):
        ds = sb.generate_dataset(sb.SceneParams(seed=1), 250, n_test=50, n_eval=20)
        assert len(ds.indices("train")) == 200
        assert len(ds.indices("eval")) == 20
        assert len(ds.indices("test")) == 30
        assert not set(ds.indices("train")) & set(ds.indices("eval"))

    def test_label_iff_contrast_applied(self):
        params = sb.SceneParams(noise_sigma=0.0, seed=3)
        for label in (0, 1):
            s = sb.generate_sample(params, 5, label)
            base = sb.generate_sample(params, 5, 0)
            assert (not np.array_equal(s.image, base.image)) == bool(label)

    def test_class_separable_by_mask_mean_intensity(self):
        # dataset sanity oracle: thresholding the mean intensity inside the
        # mask separates the classes nearly perfectly
        ds = sb.generate_dataset(sb.SceneParams(seed=4), 300)
        means = np.array([s.image[s.mask].mean() for s in ds.samples])
        labels = np.array([s.label for s in ds.samples])
        threshold = 0.55 + 0.35 / 2
        preds = (means > threshold).astype(int)
        assert np.mean(preds == labels) >= 0.99

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            sb.SceneParams(contrast_delta=0.01, noise_sigma=0.02)
        with pytest.raises(ValueError):
            sb.generate_dataset(sb.SceneParams(), 0)
        with pytest.raises(ValueError):
            sb.generate_dataset(sb.SceneParams(), 10, balance=1.0)


class TestPgm:
    def test_all_zero_round_trip(self, tmp_path):
        path = tmp_path / "z.pgm"
        write_pgm(np.zeros((4, 4)), path)
        assert np.array_equal(read_pgm(path), np.zeros((4, 4)))

    def test_endpoints_exact(self, tmp_path):
        path = tmp_path / "e.pgm"
        write_pgm(np.array([[0.0, 1.0]]), path)
        assert read_pgm(path).tolist() == [[0.0, 1.0]]

    def test_random_round_trip_error_bound(self, tmp_path, rng):
        worst = 0.0
        for i in range(1000):
            img = rng.uniform(size=(6, 5))
            path = tmp_path / "r.pgm"
            write_pgm(img, path)
            worst = max(worst, np.abs(read_pgm(path) - img).max())
        assert worst <= 1.0 / 65535

    def test_mask_round_trip(self, tmp_path, rng):
        mask = rng.uniform(size=(8, 8)) > 0.5
        path = tmp_path / "m.pgm"
        write_pgm(mask, path)
        out = read_pgm(path)
        assert out.dtype == bool and np.array_equal(out, mask)

    def test_non_p5_rejected(self, tmp_path):
        path = tmp_path / "p2.pgm"
        path.write_bytes(b"P2\n2 2\n255\n0 1 2 3\n")
        with pytest.raises(BadMagicError):
            read_pgm(path)

    def test_maxval_mismatch(self, tmp_path):
        path = tmp_path / "m8.pgm"
        path.write_bytes(b"P5\n2 2\n255\n" + bytes(4))
        with pytest.raises(DecodeError, match="maxval"):
            read_pgm(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n4 4\n65535\n" + bytes(10))
        with pytest.raises(TruncatedFileError):
            read_pgm(path)

    def test_out_of_range_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_pgm(np.array([[1.5]]), tmp_path / "x.pgm")


class TestManifest:
    def test_write_load_round_trip(self, tmp_path):
        params = sb.SceneParams(side=16, vessel_count_range=(1, 2),
                                vessel_radius_range=(1.0, 2.2), seed=6)
        ds = sb.generate_dataset(params, 12, n_test=4)
        manifest = sb.write_dataset(ds, tmp_path / "data")
        loaded = sb.load_dataset(manifest)
        assert loaded.split == ds.split
        for s1, s2 in zip(ds.samples, loaded.samples):
            assert s1.label == s2.label
            assert np.array_equal(s1.mask, s2.mask)
            assert np.abs(s1.image - s2.image).max() <= 1.0 / 65535

    def test_bad_columns_rejected(self, tmp_path):
        path = tmp_path / "manifest.csv"
        path.write_text("foo,bar\n1,2\n")
        with pytest.raises(DecodeError):
            sb.load_dataset(path)

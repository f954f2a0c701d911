import struct

import numpy as np
import pytest

from embedlab.data import (IdxCountMismatchError, IdxMagicError,
                           IdxTruncatedError, ImbalanceSpec, LabeledDataset,
                           apply_imbalance, gen_gaussian_mixture, load_idx,
                           sample_batches, save_csv, write_idx)
from embedlab.numerics import RandomStream


class TestGaussianMixture:
    def test_zero_noise_two_point_clusters(self):
        ds = gen_gaussian_mixture(2, [3, 3], 2, radius=1.0, sigma=0.0,
                                  stream=RandomStream(0))
        np.testing.assert_allclose(ds.features[:3], [[1.0, 0.0]] * 3, atol=1e-15)
        np.testing.assert_allclose(ds.features[3:], [[-1.0, 0.0]] * 3, atol=1e-12)

    def test_fixed_seed_identical(self):
        a = gen_gaussian_mixture(3, [100, 100, 100], 2, 2.0, 0.5, RandomStream(9))
        b = gen_gaussian_mixture(3, [100, 100, 100], 2, 2.0, 0.5, RandomStream(9))
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_empirical_means_close_to_configured(self):
        n = 100_000
        sigma = 0.7
        ds = gen_gaussian_mixture(2, [n, n], 3, radius=2.0, sigma=sigma,
                                  stream=RandomStream(1))
        tol = 3 * sigma / np.sqrt(n)
        m0 = ds.features[ds.labels == 0].mean(axis=0)
        np.testing.assert_allclose(m0, [2.0, 0.0, 0.0], atol=tol)

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            gen_gaussian_mixture(1, [5], 2, 1.0, 0.1, RandomStream(0))
        with pytest.raises(ValueError):
            gen_gaussian_mixture(2, [5, 0], 2, 1.0, 0.1, RandomStream(0))
        with pytest.raises(ValueError):
            gen_gaussian_mixture(2, [5, 5], 1, 1.0, 0.1, RandomStream(0))


class TestIdx:
    def test_hand_built_single_pixel_image(self, tmp_path):
        img = tmp_path / "img"
        lab = tmp_path / "lab"
        img.write_bytes(struct.pack(">IIII", 0x00000803, 1, 1, 1) + bytes([0xFF]))
        lab.write_bytes(struct.pack(">II", 0x00000801, 1) + bytes([7]))
        ds = load_idx(img, lab)
        assert ds.features.shape == (1, 1)
        assert ds.features[0, 0] == 1.0
        assert list(ds.labels) == [7]

    def test_wrong_magic(self, tmp_path):
        img = tmp_path / "img"
        lab = tmp_path / "lab"
        img.write_bytes(struct.pack(">IIII", 0x00000804, 1, 1, 1) + bytes([0]))
        lab.write_bytes(struct.pack(">II", 0x00000801, 1) + bytes([0]))
        with pytest.raises(IdxMagicError):
            load_idx(img, lab)
        img.write_bytes(struct.pack(">IIII", 0x00000803, 1, 1, 1) + bytes([0]))
        lab.write_bytes(struct.pack(">II", 0x00000802, 1) + bytes([0]))
        with pytest.raises(IdxMagicError):
            load_idx(img, lab)

    def test_truncated(self, tmp_path):
        img = tmp_path / "img"
        lab = tmp_path / "lab"
        img.write_bytes(struct.pack(">IIII", 0x00000803, 2, 2, 2) + bytes(5))
        lab.write_bytes(struct.pack(">II", 0x00000801, 2) + bytes([0, 1]))
        with pytest.raises(IdxTruncatedError):
            load_idx(img, lab)

    def test_count_mismatch(self, tmp_path):
        img = tmp_path / "img"
        lab = tmp_path / "lab"
        img.write_bytes(struct.pack(">IIII", 0x00000803, 2, 1, 1) + bytes([1, 2]))
        lab.write_bytes(struct.pack(">II", 0x00000801, 3) + bytes([0, 1, 2]))
        with pytest.raises(IdxCountMismatchError):
            load_idx(img, lab)

    def test_roundtrip_write_then_read(self, tmp_path):
        rng = np.random.default_rng(2)
        feats = rng.integers(0, 256, size=(10, 6)).astype(np.float64) / 255.0
        ds = LabeledDataset(feats, rng.integers(0, 4, 10), 4)
        write_idx(ds, tmp_path / "i", tmp_path / "l", rows=2, cols=3)
        back = load_idx(tmp_path / "i", tmp_path / "l")
        np.testing.assert_array_equal(back.features, ds.features)
        np.testing.assert_array_equal(back.labels, ds.labels)


class TestApplyImbalance:
    def make_ds(self):
        rng = np.random.default_rng(3)
        return LabeledDataset(rng.standard_normal((60, 2)),
                              np.repeat(np.arange(3), 20), 3)

    def test_keep_counts(self):
        ds = self.make_ds()
        out = apply_imbalance(ds, ImbalanceSpec.from_pairs([(1, 5)]), RandomStream(0))
        assert list(out.per_class_counts()) == [20, 5, 20]

    def test_features_unchanged_only_membership(self):
        ds = self.make_ds()
        out = apply_imbalance(ds, ImbalanceSpec.from_pairs([(0, 7)]), RandomStream(1))
        # every surviving row is bit-identical to a row of the source class
        for x, lab in zip(out.features, out.labels):
            src = ds.features[ds.labels == lab]
            assert any(np.array_equal(x, row) for row in src)

    def test_empty_spec_identity(self):
        ds = self.make_ds()
        out = apply_imbalance(ds, ImbalanceSpec(), RandomStream(2))
        np.testing.assert_array_equal(out.features, ds.features)

    def test_keep_all_is_class_unchanged_up_to_order(self):
        ds = self.make_ds()
        out = apply_imbalance(ds, ImbalanceSpec.from_pairs([(2, 20)]), RandomStream(3))
        np.testing.assert_array_equal(np.sort(out.features[out.labels == 2], axis=0),
                                      np.sort(ds.features[ds.labels == 2], axis=0))

    def test_deterministic(self):
        ds = self.make_ds()
        a = apply_imbalance(ds, ImbalanceSpec.from_pairs([(1, 3)]), RandomStream(4))
        b = apply_imbalance(ds, ImbalanceSpec.from_pairs([(1, 3)]), RandomStream(4))
        np.testing.assert_array_equal(a.features, b.features)

    def test_bad_keep_counts(self):
        ds = self.make_ds()
        with pytest.raises(ValueError):
            apply_imbalance(ds, ImbalanceSpec.from_pairs([(1, 0)]), RandomStream(5))
        with pytest.raises(ValueError):
            apply_imbalance(ds, ImbalanceSpec.from_pairs([(1, 21)]), RandomStream(5))


class TestSampleBatches:
    def test_partition_sizes_and_coverage(self):
        ds = LabeledDataset(np.arange(20).reshape(10, 2).astype(float),
                            np.zeros(10, dtype=int), 1)
        batches = list(sample_batches(ds, 3, RandomStream(0)))
        assert [len(b.indices) for b in batches] == [3, 3, 3, 1]
        seen = np.concatenate([b.indices for b in batches])
        assert sorted(seen.tolist()) == list(range(10))

    def test_fixed_seed_identical_sequence(self):
        ds = LabeledDataset(np.random.default_rng(0).standard_normal((12, 2)),
                            np.zeros(12, dtype=int), 1)
        a = [b.indices for b in sample_batches(ds, 5, RandomStream(8))]
        b = [b.indices for b in sample_batches(ds, 5, RandomStream(8))]
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_batch_contents_match_indices(self):
        rng = np.random.default_rng(1)
        ds = LabeledDataset(rng.standard_normal((9, 3)), rng.integers(0, 2, 9), 2)
        for b in sample_batches(ds, 4, RandomStream(9)):
            np.testing.assert_array_equal(b.features, ds.features[b.indices])
            np.testing.assert_array_equal(b.labels, ds.labels[b.indices])

    def test_bad_batch_size(self):
        ds = LabeledDataset(np.ones((2, 2)), [0, 0], 1)
        with pytest.raises(ValueError):
            list(sample_batches(ds, 0, RandomStream(0)))


class TestCsvExport:
    def test_header_and_label_last(self, tmp_path):
        ds = LabeledDataset(np.array([[1.5, -2.0], [0.25, 3.0]]), [1, 0], 2)
        path = tmp_path / "ds.csv"
        save_csv(ds, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "f0,f1,label"
        assert lines[1] == "1.5,-2.0,1"
        assert lines[2] == "0.25,3.0,0"

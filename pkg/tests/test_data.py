import gzip

import numpy as np
import pytest

from specguard.data import (Dataset, IdxFormatError, load_dataset,
                            load_mnist_idx, render_digit_corpus, save_dataset,
                            subset_sample, write_idx, xor_dataset)
from specguard.numerics import Rng


class TestXor:
    def test_clean_corners_and_labels(self):
        ds = xor_dataset()
        assert len(ds) == 4
        assert ds.labels.tolist() == [0, 1, 1, 0]
        for row, lab in zip(ds.inputs, ds.labels):
            assert lab == (0 if row[0] * row[1] > 0 else 1)
            assert set(np.abs(row)) == {1.0}

    def test_zero_noise_collapses_to_corners(self, rng):
        ds = xor_dataset(noisy=True, points_per_cluster=10, noise_std=0.0,
                         rng=rng)
        corners = {(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)}
        assert {tuple(r) for r in ds.inputs} == corners

    def test_cluster_means_near_corners(self, rng):
        ds = xor_dataset(noisy=True, points_per_cluster=50, noise_std=0.2,
                         rng=rng)
        assert len(ds) == 200
        for i, corner in enumerate([(1, 1), (1, -1), (-1, 1), (-1, -1)]):
            block = ds.inputs[50 * i: 50 * (i + 1)]
            assert np.max(np.abs(block.mean(axis=0) - corner)) < 0.1

    def test_negative_noise_rejected(self):
        with pytest.raises(ValueError):
            xor_dataset(noisy=True, noise_std=-0.1)


class TestIdx:
    def _write_pair(self, tmp_path, images, labels, gz=False):
        ip = tmp_path / ("im.gz" if gz else "im")
        lp = tmp_path / ("lb.gz" if gz else "lb")
        write_idx(tmp_path / "im_", tmp_path / "lb_", images, labels)
        if gz:
            for src, dst in ((tmp_path / "im_", ip), (tmp_path / "lb_", lp)):
                with open(src, "rb") as f:
                    data = f.read()
                with gzip.open(dst, "wb") as f:
                    f.write(data)
        else:
            (tmp_path / "im_").rename(ip)
            (tmp_path / "lb_").rename(lp)
        return ip, lp

    def test_roundtrip(self, tmp_path, rng):
        images = (rng.uniform((12, 28, 28)) * 255).astype(np.uint8)
        labels = rng.integers(0, 10, size=12).astype(np.uint8)
        ip, lp = self._write_pair(tmp_path, images, labels)
        ds = load_mnist_idx(ip, lp)
        assert ds.inputs.shape == (12, 784)
        assert np.array_equal(ds.labels, labels)
        assert np.allclose(ds.inputs, images.reshape(12, -1) / 255.0)
        assert ds.normalization["scale"] == 255.0

    def test_gzip_transparent(self, tmp_path, rng):
        images = (rng.uniform((3, 4, 4)) * 255).astype(np.uint8)
        labels = np.array([1, 2, 3], dtype=np.uint8)
        ip, lp = self._write_pair(tmp_path, images, labels, gz=True)
        ds = load_mnist_idx(ip, lp)
        assert np.array_equal(ds.labels, labels)

    def test_all_zero_images(self, tmp_path):
        ip, lp = self._write_pair(tmp_path, np.zeros((2, 3, 3), dtype=np.uint8),
                                  np.zeros(2, dtype=np.uint8))
        ds = load_mnist_idx(ip, lp)
        assert np.all(ds.inputs == 0.0)

    def test_bad_magic_reports_offset(self, tmp_path):
        p = tmp_path / "bad"
        p.write_bytes(b"\x00\x00\x12\x34" + b"\x00" * 12)
        lp = tmp_path / "lb"
        write_idx(tmp_path / "im2", lp, np.zeros((1, 2, 2), dtype=np.uint8),
                  np.zeros(1, dtype=np.uint8))
        with pytest.raises(IdxFormatError, match="offset 0"):
            load_mnist_idx(p, lp)

    def test_truncated_rejected(self, tmp_path):
        write_idx(tmp_path / "im", tmp_path / "lb",
                  np.zeros((4, 5, 5), dtype=np.uint8),
                  np.zeros(4, dtype=np.uint8))
        data = (tmp_path / "im").read_bytes()
        (tmp_path / "im").write_bytes(data[:-10])
        with pytest.raises(IdxFormatError, match="truncated"):
            load_mnist_idx(tmp_path / "im", tmp_path / "lb")

    def test_count_mismatch_rejected(self, tmp_path):
        write_idx(tmp_path / "im", tmp_path / "lb",
                  np.zeros((3, 2, 2), dtype=np.uint8),
                  np.zeros(3, dtype=np.uint8))
        write_idx(tmp_path / "im2", tmp_path / "lb2",
                  np.zeros((2, 2, 2), dtype=np.uint8),
                  np.zeros(2, dtype=np.uint8))
        with pytest.raises(IdxFormatError, match="count"):
            load_mnist_idx(tmp_path / "im", tmp_path / "lb2")

    def test_centering_records_mean(self, tmp_path, rng):
        images = (rng.uniform((6, 3, 3)) * 255).astype(np.uint8)
        labels = np.zeros(6, dtype=np.uint8)
        write_idx(tmp_path / "im", tmp_path / "lb", images, labels)
        ds = load_mnist_idx(tmp_path / "im", tmp_path / "lb", center=True)
        assert np.allclose(ds.inputs.mean(axis=0), 0.0, atol=1e-12)
        assert "pixel_mean" in ds.normalization


class TestSubsetSample:
    def test_full_size_is_permutation(self, rng):
        ds = xor_dataset(noisy=True, points_per_cluster=5, rng=rng)
        sub = subset_sample(ds, len(ds), rng=rng)
        assert sorted(map(tuple, sub.inputs)) == sorted(map(tuple, ds.inputs))

    def test_stratified_balanced(self, rng):
        inputs = rng.gaussian((100, 3))
        labels = np.repeat(np.arange(10), 10)
        ds = Dataset(inputs=inputs, labels=labels, n_classes=10)
        sub = subset_sample(ds, 50, stratified=True, rng=rng)
        counts = np.bincount(sub.labels, minlength=10)
        assert np.all(counts == 5)

    def test_stratified_within_one_of_exact(self, rng):
        labels = np.array([0] * 30 + [1] * 70)
        ds = Dataset(inputs=rng.gaussian((100, 2)), labels=labels, n_classes=2)
        sub = subset_sample(ds, 10, stratified=True, rng=rng)
        counts = np.bincount(sub.labels, minlength=2)
        assert abs(counts[0] - 3) <= 1 and abs(counts[1] - 7) <= 1

    def test_deterministic(self):
        ds = xor_dataset(noisy=True, points_per_cluster=20, rng=Rng(4))
        a = subset_sample(ds, 11, rng=Rng(9))
        b = subset_sample(ds, 11, rng=Rng(9))
        assert np.array_equal(a.inputs, b.inputs)

    def test_oversample_rejected(self, rng):
        with pytest.raises(ValueError):
            subset_sample(xor_dataset(), 5, rng=rng)


class TestCache:
    def test_bit_exact_roundtrip(self, tmp_path, rng):
        ds = xor_dataset(noisy=True, points_per_cluster=7, rng=rng)
        p = tmp_path / "cache.npz"
        save_dataset(p, ds)
        back = load_dataset(p)
        assert np.array_equal(back.inputs, ds.inputs)
        assert np.array_equal(back.labels, ds.labels)
        assert back.normalization == ds.normalization


class TestSyntheticDigits:
    def test_deterministic_and_in_range(self):
        a = render_digit_corpus(3, Rng(5))
        b = render_digit_corpus(3, Rng(5))
        assert np.array_equal(a.inputs, b.inputs)
        assert a.inputs.min() >= 0.0 and a.inputs.max() <= 1.0
        assert a.inputs.shape == (30, 784)
        assert np.bincount(a.labels).tolist() == [3] * 10

    def test_classes_are_separable_by_template_matching(self):
        # nearest-class-mean on raw pixels is a weak classifier under the
        # jitter, but must still beat 10-class chance by a wide margin
        tr = render_digit_corpus(30, Rng(0))
        te = render_digit_corpus(10, Rng(1))
        means = np.stack([tr.inputs[tr.labels == k].mean(axis=0)
                          for k in range(10)])
        pred = np.argmin(((te.inputs[:, None] - means[None]) ** 2).sum(-1),
                         axis=1)
        assert np.mean(pred == te.labels) > 0.25

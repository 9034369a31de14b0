"""Dataset generation, IDX parsing, the native file format, and stream building."""

import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualmem import (
    FeatureDataset,
    MixtureComponent,
    MixtureSpec,
    StreamSpec,
    build_stream,
    four_blob_mixture,
    generate_mixture,
    imbalanced_counts,
    load_dataset,
    permuted_stream,
    read_idx,
    rotated_stream,
    save_dataset,
)


def write_idx_pair(tmp_path, images, labels, gz=False, truncate_images=0,
                   image_magic=0x803, label_magic=0x801):
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    img_payload = struct.pack(">IIII", image_magic, n, rows, cols) + images.tobytes()
    if truncate_images:
        img_payload = img_payload[:-truncate_images]
    lbl_payload = struct.pack(">II", label_magic, len(labels)) + labels.tobytes()
    img_path = tmp_path / ("imgs.idx.gz" if gz else "imgs.idx")
    lbl_path = tmp_path / ("lbls.idx.gz" if gz else "lbls.idx")
    if gz:
        img_path.write_bytes(gzip.compress(img_payload))
        lbl_path.write_bytes(gzip.compress(lbl_payload))
    else:
        img_path.write_bytes(img_payload)
        lbl_path.write_bytes(lbl_payload)
    return img_path, lbl_path


class TestFeatureDataset:
    def test_validation(self):
        with pytest.raises(ValueError):
            FeatureDataset(np.zeros((0, 2)), np.zeros(0, dtype=int))
        with pytest.raises(ValueError):
            FeatureDataset(np.zeros((3, 2)), np.zeros(4, dtype=int))
        with pytest.raises(ValueError):
            FeatureDataset(np.zeros((3, 2)), np.array([0.5, 1.0, 2.0]))
        with pytest.raises(ValueError):
            FeatureDataset(np.zeros((3, 2)), np.array([0, -1, 2]))

    def test_subset_and_class_indices(self):
        ds = FeatureDataset(np.arange(8).reshape(4, 2), np.array([0, 1, 0, 1]))
        sub = ds.subset([0, 2])
        assert np.array_equal(sub.labels, [0, 0])
        byc = ds.class_indices()
        assert np.array_equal(byc[1], [1, 3])


class TestMixture:
    def test_counts_and_labels(self):
        ds = generate_mixture(four_blob_mixture(n_per_class=250, seed=0))
        assert ds.n == 1000 and ds.d == 2
        assert np.array_equal(np.unique(ds.labels), [0, 1, 2, 3])
        assert all(np.sum(ds.labels == c) == 250 for c in range(4))

    def test_zero_std_collapses_to_means(self):
        spec = MixtureSpec(
            components=(MixtureComponent(mean=(0.3, 0.7), std=0.0, class_id=0, count=5),),
            seed=1,
        )
        ds = generate_mixture(spec)
        assert np.allclose(ds.features, [0.3, 0.7])

    def test_component_means_statistically_close(self):
        spec = MixtureSpec(
            components=(
                MixtureComponent(mean=(1.0, -2.0), std=0.5, class_id=0, count=4000),
                MixtureComponent(mean=(-3.0, 4.0), std=0.25, class_id=1, count=4000),
            ),
            seed=9,
        )
        ds = generate_mixture(spec)
        for comp in spec.components:
            got = ds.features[ds.labels == comp.class_id].mean(axis=0)
            band = 3 * comp.std / np.sqrt(comp.count)
            assert np.all(np.abs(got - np.asarray(comp.mean)) < band + 1e-9)

    def test_reproducible(self):
        a = generate_mixture(four_blob_mixture(seed=4))
        b = generate_mixture(four_blob_mixture(seed=4))
        assert np.array_equal(a.features, b.features)


class TestIdx:
    def test_reads_pixels_and_labels(self, tmp_path):
        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, size=(7, 4, 3), dtype=np.uint8)
        labels = rng.integers(0, 10, size=7, dtype=np.uint8)
        img, lbl = write_idx_pair(tmp_path, images, labels)
        ds = read_idx(img, lbl)
        assert ds.n == 7 and ds.d == 12
        assert ds.features.min() >= 0.0 and ds.features.max() <= 1.0
        assert np.array_equal(ds.labels, labels)
        # row-major flattening, scaled by 255
        assert ds.features[2, 5] == pytest.approx(images[2].reshape(-1)[5] / 255.0)

    def test_reads_gzip(self, tmp_path):
        images = np.zeros((2, 2, 2), dtype=np.uint8)
        img, lbl = write_idx_pair(tmp_path, images, [3, 1], gz=True)
        ds = read_idx(img, lbl)
        assert np.array_equal(ds.labels, [3, 1])

    def test_bad_magic_names_file(self, tmp_path):
        img, lbl = write_idx_pair(tmp_path, np.zeros((1, 2, 2), dtype=np.uint8), [0],
                                  image_magic=0x999)
        with pytest.raises(ValueError, match="imgs.idx"):
            read_idx(img, lbl)

    def test_truncated_file_is_rejected(self, tmp_path):
        img, lbl = write_idx_pair(tmp_path, np.zeros((3, 2, 2), dtype=np.uint8),
                                  [0, 1, 2], truncate_images=5)
        with pytest.raises(ValueError, match="imgs.idx"):
            read_idx(img, lbl)

    def test_count_mismatch_rejected(self, tmp_path):
        img, _ = write_idx_pair(tmp_path, np.zeros((3, 2, 2), dtype=np.uint8), [0, 1, 2])
        _, lbl = write_idx_pair(tmp_path, np.zeros((2, 2, 2), dtype=np.uint8), [0, 1])
        with pytest.raises(ValueError, match="labels"):
            read_idx(img, lbl)


class TestNativeFormat:
    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), use_f32=st.booleans())
    def test_roundtrip_bit_identical(self, tmp_path_factory, seed, use_f32):
        tmp = tmp_path_factory.mktemp("fmt")
        rng = np.random.default_rng(seed)
        feats = rng.standard_normal((int(rng.integers(1, 20)), int(rng.integers(1, 6))))
        if use_f32:
            feats = feats.astype(np.float32)
        ds = FeatureDataset(feats, rng.integers(0, 5, size=feats.shape[0]))
        path = tmp / "ds.bin"
        save_dataset(path, ds)
        back = load_dataset(path)
        assert back.features.dtype == ds.features.dtype
        assert np.array_equal(
            back.features.view(np.uint8), ds.features.astype(back.features.dtype).view(np.uint8)
        )
        assert np.array_equal(back.labels, ds.labels)

    def test_truncation_rejected(self, tmp_path):
        ds = FeatureDataset(np.ones((4, 3)), np.zeros(4, dtype=int))
        path = tmp_path / "ds.bin"
        save_dataset(path, ds)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError, match="truncated"):
            load_dataset(path)


class TestStreamBuilder:
    def make_ten_class_data(self, per_class=60, seed=0):
        comps = tuple(
            MixtureComponent(mean=(float(c), float(-c)), std=0.2, class_id=c, count=per_class)
            for c in range(10)
        )
        return generate_mixture(MixtureSpec(components=comps, seed=seed))

    def test_consecutive_pair_split(self):
        data = self.make_ten_class_data()
        spec = StreamSpec(n_tasks=5, classes_per_task=2, seed=3)
        stream = build_stream(data, spec)
        assert stream.n_tasks == 5
        assert [t.label_space for t in stream.tasks] == [
            (0, 1), (2, 3), (4, 5), (6, 7), (8, 9)
        ]

    def test_imbalanced_counts_profile(self):
        assert imbalanced_counts(5, 4000) == (4000, 400, 400, 400, 400)
        data = self.make_ten_class_data(per_class=120)
        spec = StreamSpec(
            n_tasks=5, classes_per_task=2, train_counts=imbalanced_counts(5, 160, 10), seed=3
        )
        stream = build_stream(data, spec)
        assert [t.train.n for t in stream.tasks] == [160, 16, 16, 16, 16]

    def test_single_task_takes_everything(self):
        data = generate_mixture(four_blob_mixture(n_per_class=50))
        spec = StreamSpec(
            n_tasks=1, labels_per_task=((0, 1, 2, 3),), test_fraction=0.0, seed=0
        )
        stream = build_stream(data, spec)
        assert stream.tasks[0].train.n == 200

    def test_insufficient_samples_error(self):
        data = self.make_ten_class_data(per_class=10)
        spec = StreamSpec(n_tasks=5, classes_per_task=2, train_counts=(100, 4, 4, 4, 4))
        with pytest.raises(ValueError, match="task 0"):
            build_stream(data, spec)

    def test_normalization_contract(self):
        data = self.make_ten_class_data()
        spec = StreamSpec(n_tasks=5, classes_per_task=2, seed=1)
        stream = build_stream(data, spec)
        train_all = np.vstack([t.train.features for t in stream.tasks])
        assert train_all.min(axis=0) == pytest.approx(np.zeros(2), abs=1e-12)
        assert train_all.max(axis=0) == pytest.approx(np.ones(2), abs=1e-12)
        # test split reuses the train scale, so it may poke slightly outside
        test_all = np.vstack([t.test.features for t in stream.tasks])
        assert test_all.min() > -0.5 and test_all.max() < 1.5

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_no_sample_leaks_between_tasks(self, seed):
        data = self.make_ten_class_data(per_class=30, seed=seed % 100)
        spec = StreamSpec(n_tasks=5, classes_per_task=2, seed=seed, normalize=False)
        stream = build_stream(data, spec)
        rows = set()
        for task in stream.tasks:
            for row in np.vstack([task.train.features, task.test.features]):
                key = row.tobytes()
                assert key not in rows
                rows.add(key)

    def test_deterministic_per_seed(self):
        data = self.make_ten_class_data()
        spec = StreamSpec(n_tasks=5, classes_per_task=2, seed=11)
        a = build_stream(data, spec)
        b = build_stream(data, spec)
        assert np.array_equal(a.tasks[2].train.features, b.tasks[2].train.features)

    def test_separate_test_data(self):
        data = self.make_ten_class_data(per_class=30, seed=1)
        test_data = self.make_ten_class_data(per_class=10, seed=2)
        spec = StreamSpec(n_tasks=5, classes_per_task=2, seed=0)
        stream = build_stream(data, spec, test_data=test_data)
        assert stream.tasks[0].test.n == 20
        assert stream.tasks[0].train.n == 48  # no held-out fraction taken


class TestDomainStreams:
    def test_permuted_stream_is_seeded_and_identity_first(self):
        rng = np.random.default_rng(0)
        train = FeatureDataset(rng.uniform(size=(20, 9)), rng.integers(0, 3, size=20))
        test = FeatureDataset(rng.uniform(size=(10, 9)), rng.integers(0, 3, size=10))
        s1 = permuted_stream(train, test, n_tasks=3, seed=5)
        s2 = permuted_stream(train, test, n_tasks=3, seed=5)
        assert np.array_equal(s1.tasks[0].train.features, train.features)
        assert np.array_equal(s1.tasks[2].train.features, s2.tasks[2].train.features)
        assert s1.scenario == "domain-il"
        # permutation preserves the multiset of values per row
        assert np.allclose(
            np.sort(s1.tasks[1].train.features, axis=1), np.sort(train.features, axis=1)
        )

    def test_rotated_stream_2d(self):
        rng = np.random.default_rng(0)
        train = FeatureDataset(rng.uniform(size=(30, 2)), rng.integers(0, 2, size=30))
        test = FeatureDataset(rng.uniform(size=(10, 2)), rng.integers(0, 2, size=10))
        stream = rotated_stream(train, test, n_tasks=4, seed=2)
        # rotation about the centre preserves distances to the centre
        r0 = np.linalg.norm(train.features - 0.5, axis=1)
        r2 = np.linalg.norm(stream.tasks[2].train.features - 0.5, axis=1)
        assert np.allclose(r0, r2)

    def test_rotated_stream_images(self):
        rng = np.random.default_rng(1)
        train = FeatureDataset(rng.uniform(size=(6, 25)), rng.integers(0, 2, size=6))
        test = FeatureDataset(rng.uniform(size=(4, 25)), rng.integers(0, 2, size=4))
        stream = rotated_stream(train, test, n_tasks=2, seed=0, image_side=5)
        feats = stream.tasks[1].train.features
        assert feats.shape == (6, 25)
        assert feats.min() >= 0.0 and feats.max() <= 1.0

    def test_rotation_rejects_odd_dims(self):
        train = FeatureDataset(np.ones((3, 7)), np.zeros(3, dtype=int))
        with pytest.raises(ValueError, match="rotation"):
            rotated_stream(train, train, n_tasks=2, seed=0)

"""Data pipeline: binary format fidelity, normalisation, augmentation
statistics, synthetic fixtures, and the batch iterator."""

import os

import numpy as np
import pytest

from semnet.data import (
    CIFAR10_RECORD_BYTES,
    CIFAR100_RECORD_BYTES,
    AugmentConfig,
    DatasetRecord,
    augment,
    batch_iterator,
    compute_channel_stats,
    decode_records,
    encode_record,
    load_cifar,
    normalize,
    synthetic_dataset,
)
from semnet.errors import IngestionError
from semnet.rng import RngState

import oracles
from conftest import write_cifar10_style


class TestBinaryFormat:
    def test_record_strides(self):
        assert CIFAR10_RECORD_BYTES == 3073
        assert CIFAR100_RECORD_BYTES == 3074

    def test_decode_encode_roundtrip_cifar10(self):
        gen = np.random.default_rng(0)
        raw = gen.integers(0, 256, size=(5, 3073), dtype=np.uint8)
        raw[:, 0] = [0, 3, 9, 5, 1]
        buf = raw.tobytes()
        records = decode_records(buf, 10)
        assert [r.label for r in records] == [0, 3, 9, 5, 1]
        assert all(r.image.shape == (3, 32, 32) for r in records)
        assert all(0.0 <= r.image.min() and r.image.max() <= 1.0 for r in records)
        again = b"".join(encode_record(r, 10) for r in records)
        assert again == buf

    def test_decode_encode_roundtrip_cifar100(self):
        gen = np.random.default_rng(1)
        raw = gen.integers(0, 256, size=(4, 3074), dtype=np.uint8)
        raw[:, 0] = [0, 19, 7, 2]
        raw[:, 1] = [0, 99, 42, 17]
        buf = raw.tobytes()
        records = decode_records(buf, 100)
        assert [r.coarse_label for r in records] == [0, 19, 7, 2]
        assert [r.label for r in records] == [0, 99, 42, 17]
        again = b"".join(encode_record(r, 100) for r in records)
        assert again == buf

    def test_truncated_buffer_names_offset(self):
        with pytest.raises(IngestionError, match="byte offset 3073"):
            decode_records(bytes(3073 + 100), 10, source="x.bin")

    def test_label_out_of_range_names_offset(self):
        raw = bytearray(3073 * 2)
        raw[3073] = 10  # second record's label byte
        with pytest.raises(IngestionError, match="byte offset 3073"):
            decode_records(bytes(raw), 10, source="x.bin")

    def test_coarse_label_out_of_range(self):
        raw = bytearray(3074)
        raw[0] = 20
        with pytest.raises(IngestionError, match="coarse label"):
            decode_records(bytes(raw), 100, source="y.bin")

    def test_cifar100_file_fed_to_cifar10_loader(self, tmp_path):
        # 100 records in the 3,074-byte layout are not a multiple of 3,073.
        root = str(tmp_path)
        gen = np.random.default_rng(2)
        block = gen.integers(0, 256, size=(100, 3074), dtype=np.uint8)
        for name in [f"data_batch_{i}.bin" for i in range(1, 6)] + ["test_batch.bin"]:
            open(os.path.join(root, name), "wb").write(block.tobytes())
        with pytest.raises(IngestionError):
            load_cifar(root, 10)


class TestLoader:
    def test_cifar10_counts_and_file_sizes(self, cifar10_dir):
        for i in range(1, 6):
            size = os.path.getsize(os.path.join(cifar10_dir, f"data_batch_{i}.bin"))
            assert size == 30_730_000  # 10,000 records x 3,073 bytes
        train, test = load_cifar(cifar10_dir, 10)
        assert len(train) == 50_000 and len(test) == 10_000
        assert all(0 <= r.label < 10 for r in test[:100])

    def test_cifar100_counts(self, cifar100_dir):
        train, test = load_cifar(cifar100_dir, 100)
        assert len(train) == 50_000 and len(test) == 10_000
        assert train[0].coarse_label is not None

    def test_loader_roundtrip_bit_identical(self, cifar10_dir):
        path = os.path.join(cifar10_dir, "data_batch_1.bin")
        buf = open(path, "rb").read()
        head = decode_records(buf[: 3073 * 64], 10, source=path)
        assert b"".join(encode_record(r, 10) for r in head) == buf[: 3073 * 64]

    def test_count_mismatch_rejected(self, tmp_path):
        root = write_cifar10_style(str(tmp_path), train_records=49_995,
                                   test_records=10_000)
        with pytest.raises(IngestionError, match="expected 50000"):
            load_cifar(root, 10)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(IngestionError, match="missing"):
            load_cifar(str(tmp_path), 10)


class TestNormalize:
    def test_identity_and_constant(self):
        rec = DatasetRecord(np.full((3, 32, 32), 0.25, dtype=np.float32), 1)
        out = normalize(rec, np.zeros(3), np.ones(3))
        assert np.array_equal(out.image, rec.image)
        zeroed = normalize(rec, np.full(3, 0.25), np.ones(3))
        assert not zeroed.image.any()

    def test_zero_std_rejected(self):
        rec = DatasetRecord(np.zeros((3, 32, 32), dtype=np.float32), 0)
        with pytest.raises(ValueError):
            normalize(rec, np.zeros(3), np.array([1.0, 0.0, 1.0]))

    def test_recomputed_statistics_standardised(self):
        records = synthetic_dataset(400, 10, seed=5)
        mean, std = compute_channel_stats(records)
        normed = [normalize(r, mean, std) for r in records]
        mean2, std2 = compute_channel_stats(normed)
        assert np.max(np.abs(mean2)) <= 1e-3
        assert np.max(np.abs(std2 - 1.0)) <= 1e-3


class TestAugment:
    def test_disabled_is_identity(self):
        rec = synthetic_dataset(2, 2, seed=0)[0]
        out = augment(rec, AugmentConfig(enabled=False), RngState(0).generator())
        assert out is rec

    def test_forced_flip_is_involution(self):
        rec = synthetic_dataset(2, 2, seed=1)[0]
        cfg = AugmentConfig(crop_pad=0, flip_prob=1.0)
        gen = RngState(1).generator()
        once = augment(rec, cfg, gen)
        twice = augment(once, cfg, gen)
        assert np.array_equal(twice.image, rec.image)
        assert not np.array_equal(once.image, rec.image)

    def test_shape_and_label_preserved(self):
        rec = synthetic_dataset(2, 2, seed=2)[0]
        gen = RngState(2).generator()
        for _ in range(20):
            out = augment(rec, AugmentConfig(), gen)
            assert out.image.shape == rec.image.shape
            assert out.label == rec.label

    def test_crop_offsets_uniform_chi_square(self):
        # Encode the crop offset in the pixel the crop maps to (4, 4):
        # out[c, 4, 4] == image[c, dy, dx] for pad 4.
        pad = 4
        img = np.zeros((3, 32, 32), dtype=np.float32)
        img[:] = (np.arange(32)[:, None] * 32 + np.arange(32)[None, :] + 1.0) / 2048.0
        rec = DatasetRecord(img, 0)
        cfg = AugmentConfig(crop_pad=pad, flip_prob=0.0)
        gen = RngState(77).generator()
        counts = np.zeros((2 * pad + 1, 2 * pad + 1))
        n = 10_000
        for _ in range(n):
            out = augment(rec, cfg, gen)
            code = round(float(out.image[0, pad, pad]) * 2048.0) - 1
            dy, dx = divmod(code, 32)
            counts[dy, dx] += 1
        stat = oracles.chi_square_stat(counts.reshape(-1),
                                       np.full(81, n / 81.0))
        assert stat < oracles.CHI2_CRIT_DF80, stat

    def test_flip_probability(self):
        rec = synthetic_dataset(2, 2, seed=3)[0]
        cfg = AugmentConfig(crop_pad=0, flip_prob=0.5)
        gen = RngState(78).generator()
        n = 10_000
        flips = sum(
            not np.array_equal(augment(rec, cfg, gen).image, rec.image)
            for _ in range(n))
        assert abs(flips / n - 0.5) < 0.02

    def test_flip_prob_validation(self):
        with pytest.raises(ValueError):
            AugmentConfig(flip_prob=1.5)


class TestSynthetic:
    def test_deterministic_bytes(self):
        a = synthetic_dataset(32, 5, seed=9)
        b = synthetic_dataset(32, 5, seed=9)
        assert all(x.image.tobytes() == y.image.tobytes() for x, y in zip(a, b))

    def test_balanced_round_robin(self):
        records = synthetic_dataset(33, 5, seed=10)
        counts = np.bincount([r.label for r in records], minlength=5)
        assert counts.max() - counts.min() <= 1

    def test_linear_probe_reaches_full_accuracy(self):
        records = synthetic_dataset(200, 10, seed=11)
        acc = oracles.least_squares_probe_accuracy(
            [r.image for r in records], [r.label for r in records], 10)
        assert acc == 1.0

    def test_pixel_range(self):
        records = synthetic_dataset(16, 4, seed=12)
        for r in records:
            assert r.image.min() >= 0.0 and r.image.max() <= 1.0

    def test_validation(self):
        with pytest.raises(ValueError):
            synthetic_dataset(3, 5, seed=0)
        with pytest.raises(ValueError):
            synthetic_dataset(300, 200, seed=0)


class TestBatchIterator:
    def test_single_batch_contains_everything(self):
        records = synthetic_dataset(24, 4, seed=13)
        batches = list(batch_iterator(records, 24, shuffle_seed=1, epoch=0))
        assert len(batches) == 1
        assert sorted(batches[0][1].tolist()) == sorted(r.label for r in records)

    def test_same_seed_epoch_identical(self):
        records = synthetic_dataset(30, 3, seed=14)
        a = [x.data.tobytes() for x, _ in batch_iterator(records, 8, 5, 2)]
        b = [x.data.tobytes() for x, _ in batch_iterator(records, 8, 5, 2)]
        assert a == b

    def test_epochs_reshuffle(self):
        records = synthetic_dataset(30, 3, seed=15)
        a = [l.tolist() for _, l in batch_iterator(records, 30, 5, 0)]
        b = [l.tolist() for _, l in batch_iterator(records, 30, 5, 1)]
        assert a != b

    def test_multiset_coverage_with_partial_batch(self):
        records = synthetic_dataset(25, 5, seed=16)
        sizes, labels = [], []
        for x, l in batch_iterator(records, 8, 6, 0):
            sizes.append(x.shape[0])
            labels.extend(l.tolist())
        assert sizes == [8, 8, 8, 1]
        assert sorted(labels) == sorted(r.label for r in records)

    def test_augmented_iteration_deterministic(self):
        records = synthetic_dataset(20, 4, seed=17)
        cfg = AugmentConfig()
        a = [x.data.tobytes() for x, _ in batch_iterator(
            records, 10, 7, 3, augment_cfg=cfg)]
        b = [x.data.tobytes() for x, _ in batch_iterator(
            records, 10, 7, 3, augment_cfg=cfg)]
        assert a == b

    def test_batch_size_validation(self):
        with pytest.raises(ValueError):
            next(batch_iterator([], 0, 0, 0))

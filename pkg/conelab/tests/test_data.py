import gzip
import struct
import tempfile
import unittest
from collections import Counter
from pathlib import Path
from unittest import mock

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from conelab.config import TrainConfig
from conelab.data import (
    CENTER_RETRY_CAP,
    DataGenerationError,
    Dataset,
    DatasetFormatError,
    augment_jitter,
    build_datasets,
    gen_multimode,
    load_csv,
    load_idx,
    split,
    write_csv,
)
from conelab.numeric import SeededRng


def idx_bytes(dims, payload):
    return bytes([0, 0, 0x08, len(dims)]) + struct.pack(f">{len(dims)}I", *dims) + bytes(payload)


class GenMultimodeTests(unittest.TestCase):
    def test_counts_and_balance(self):
        dataset = gen_multimode(4, 2, 2, 250, 1.0, 0.1, SeededRng(0))
        self.assertEqual(len(dataset), 2000)
        assert_array_equal(dataset.class_counts(), [500] * 4)
        self.assertEqual(Counter(dataset.modes.tolist()), {m: 250 for m in range(8)})
        assert_array_equal(dataset.labels, dataset.modes // 2)

    def test_degenerate_single_center(self):
        dataset = gen_multimode(1, 1, 3, 10, 1.0, 0.0, SeededRng(1))
        assert_array_equal(dataset.samples, np.tile(dataset.samples[0], (10, 1)))

    def test_mode_means_near_their_centers(self):
        std, n = 0.1, 500
        dataset = gen_multimode(3, 2, 2, n, 1.0, std, SeededRng(2))
        noiseless = gen_multimode(3, 2, 2, n, 1.0, 0.0, SeededRng(2))
        center_of = dict(zip(noiseless.modes.tolist(), noiseless.samples))
        for mode in range(6):
            mean = dataset.samples[dataset.modes == mode].mean(axis=0)
            self.assertTrue(np.all(np.abs(mean - center_of[mode]) <= 4 * std / np.sqrt(n)))

    def test_centers_are_separated(self):
        flat = gen_multimode(3, 3, 2, 1, 2.0, 0.0, SeededRng(4)).samples
        dists = np.linalg.norm(flat[:, None, :] - flat[None, :, :], axis=2)
        self.assertGreaterEqual(dists[~np.eye(len(flat), dtype=bool)].min(), 2.0)

    def test_within_class_distances_are_bimodal(self):
        std = 0.1
        dataset = gen_multimode(2, 2, 2, 60, 10 * std, std, SeededRng(5))
        for label in range(2):
            rows = dataset.samples[dataset.labels == label]
            modes = dataset.modes[dataset.labels == label]
            dists = np.linalg.norm(rows[:, None, :] - rows[None, :, :], axis=2)
            same = modes[:, None] == modes[None, :]
            off_diag = ~np.eye(len(rows), dtype=bool)
            self.assertLess(np.percentile(dists[same & off_diag], 95), np.percentile(dists[~same], 5))

    def test_deterministic(self):
        a = gen_multimode(2, 2, 3, 5, 1.0, 0.2, SeededRng(6))
        b = gen_multimode(2, 2, 3, 5, 1.0, 0.2, SeededRng(6))
        assert_array_equal(a.samples, b.samples)
        assert_array_equal(a.labels, b.labels)

    def test_retry_cap(self):
        stuck = mock.Mock(spec=SeededRng)
        stuck.uniform.return_value = np.zeros(2)
        with self.assertRaises(DataGenerationError) as ctx:
            gen_multimode(2, 1, 2, 5, 1.0, 0.1, stuck)
        self.assertEqual(stuck.uniform.call_count, 1 + CENTER_RETRY_CAP)
        self.assertIn("smaller separation", str(ctx.exception))

    def test_rejects_bad_arguments(self):
        with self.assertRaises(ValueError):
            gen_multimode(0, 1, 2, 5, 1.0, 0.1, SeededRng(0))
        with self.assertRaises(ValueError):
            gen_multimode(1, 1, 2, 5, 0.0, 0.1, SeededRng(0))


class CsvTests(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, text):
        path = self.dir / "data.csv"
        path.write_text(text, encoding="utf-8")
        return str(path)

    def test_well_formed_file(self):
        dataset = load_csv(self.write("0,1.0,2.0\n1,3.0,4.5\n0,-1,0\n"))
        self.assertEqual(len(dataset), 3)
        self.assertEqual(dataset.num_classes, 2)
        assert_array_equal(dataset.samples[1], [3.0, 4.5])

    def test_header_detection_and_flag(self):
        self.assertEqual(len(load_csv(self.write("label,f_0\n0,1.5\n1,2.5\n"))), 2)
        self.assertEqual(len(load_csv(self.write("x,y\n0,1.5\n"), has_header=True)), 1)

    def test_errors_name_the_line(self):
        cases = {
            "0,1.0,2.0\n1,3.0\n": ":2:",
            "0,1.0,2.0\n1,3.0,\n": ":2:",
            "0,1.0\n1,abc\n": ":2:",
            "0,1.0\nx,2.0\n": ":2:",
            "0,1.0\n1,2.0\n5,1.0\n": ":3:",
        }
        for text, marker in cases.items():
            with self.assertRaises(DatasetFormatError) as ctx:
                load_csv(self.write(text), num_classes=2)
            self.assertIn(marker, str(ctx.exception), text)

    def test_empty_file(self):
        with self.assertRaises(DatasetFormatError):
            load_csv(self.write(""))

    def test_round_trip(self):
        original = gen_multimode(3, 2, 4, 7, 1.0, 0.3, SeededRng(8))
        path = str(self.dir / "out" / "rt.csv")
        write_csv(original, path, header=True)
        loaded = load_csv(path, num_classes=3)
        assert_allclose(loaded.samples, original.samples, rtol=0, atol=1e-12)
        assert_array_equal(loaded.labels, original.labels)


class IdxTests(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def files(self, images, labels, gz=False):
        suffix = ".gz" if gz else ""
        img_path, lbl_path = self.dir / f"images{suffix}", self.dir / f"labels{suffix}"
        writer = gzip.compress if gz else (lambda b: b)
        img_path.write_bytes(writer(images))
        lbl_path.write_bytes(writer(labels))
        return str(img_path), str(lbl_path)

    def test_hand_built_fixture(self):
        images = idx_bytes([2, 2, 2], [0, 255, 51, 102, 255, 0, 0, 255])
        labels = idx_bytes([2], [1, 0])
        for gz in (False, True):
            dataset = load_idx(*self.files(images, labels, gz=gz))
            assert_allclose(dataset.samples, [[0.0, 1.0, 0.2, 0.4], [1.0, 0.0, 0.0, 1.0]], atol=1e-15)
            assert_array_equal(dataset.labels, [1, 0])
            self.assertEqual(dataset.num_classes, 2)

    def test_all_zero_payload(self):
        dataset = load_idx(*self.files(idx_bytes([3, 2, 2], [0] * 12), idx_bytes([3], [0, 0, 0])))
        assert_array_equal(dataset.samples, np.zeros((3, 4)))

    def test_errors(self):
        good_labels = idx_bytes([2], [0, 1])
        with self.assertRaises(DatasetFormatError):
            load_idx(*self.files(idx_bytes([3, 1, 1], [0, 0, 0]), good_labels))
        with self.assertRaises(DatasetFormatError):
            load_idx(*self.files(b"\x01\x00\x08\x01" + struct.pack(">I", 2) + b"\x00\x00", good_labels))
        with self.assertRaises(DatasetFormatError):
            load_idx(*self.files(idx_bytes([2, 2], [0, 0, 0]), good_labels))


class JitterTests(unittest.TestCase):
    def test_zero_noise_is_identity(self):
        x = np.array([[1.0, -2.0]])
        out = augment_jitter(x, 0.0, SeededRng(0))
        assert_array_equal(out, x)
        self.assertIsNot(out, x)

    def test_seeded_and_calibrated(self):
        x = np.zeros(10_000)
        a = augment_jitter(x, 0.3, SeededRng(1))
        assert_array_equal(a, augment_jitter(x, 0.3, SeededRng(1)))
        self.assertLess(abs(np.std(a - x) - 0.3), 0.05 * 0.3)

    def test_negative_std(self):
        with self.assertRaises(ValueError):
            augment_jitter(np.zeros(2), -0.1, SeededRng(0))


class SplitTests(unittest.TestCase):
    def test_sizes_and_multiset(self):
        dataset = gen_multimode(4, 2, 2, 250, 1.0, 0.1, SeededRng(0))
        train, test = split(dataset, 0.25, SeededRng(1))
        self.assertEqual((len(train), len(test)), (1500, 500))
        union = np.concatenate([train.samples, test.samples])
        key = lambda rows: sorted(map(tuple, rows))
        self.assertEqual(key(union), key(dataset.samples))
        assert_array_equal(np.sort(np.concatenate([train.labels, test.labels])), np.sort(dataset.labels))

    def test_same_seed_same_split(self):
        dataset = gen_multimode(2, 1, 2, 30, 1.0, 0.1, SeededRng(0))
        a, _ = split(dataset, 0.3, SeededRng(2))
        b, _ = split(dataset, 0.3, SeededRng(2))
        assert_array_equal(a.samples, b.samples)

    def test_class_missing_from_a_side(self):
        dataset = Dataset(samples=np.arange(8.0).reshape(4, 2), labels=[0, 0, 0, 1], num_classes=2)
        with self.assertRaises(ValueError):
            split(dataset, 0.5, SeededRng(0))

    def test_bad_fraction(self):
        dataset = gen_multimode(2, 1, 2, 10, 1.0, 0.1, SeededRng(0))
        with self.assertRaises(ValueError):
            split(dataset, 1.0, SeededRng(0))


class BuildDatasetsTests(unittest.TestCase):
    def test_synthetic_default_shape(self):
        train, test = build_datasets(TrainConfig())
        self.assertEqual((len(train), len(test)), (1600, 400))
        self.assertEqual(train.num_classes, 4)

    def test_loads_data_path(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = str(Path(tmp) / "d.csv")
            write_csv(gen_multimode(2, 1, 3, 20, 1.0, 0.1, SeededRng(3)), path)
            train, test = build_datasets(TrainConfig(data_path=path))
        self.assertEqual(train.dim, 3)
        self.assertEqual(len(train) + len(test), 40)


if __name__ == "__main__":
    unittest.main()

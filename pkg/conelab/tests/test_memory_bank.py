import unittest

import numpy as np
from numpy.testing import assert_array_equal

from conelab.memory_bank import BankSnapshot, MemoryBank
from conelab.models import BankEntry
from conelab.numeric import SeededRng, ShapeError, l2_normalize


def entry(angle, label, num_classes=2):
    dist = np.full(num_classes, 1.0 / num_classes)
    return BankEntry(feature=np.array([np.cos(angle), np.sin(angle)]), class_dist=dist, label=label)


class PushTests(unittest.TestCase):
    def test_fifo_eviction(self):
        bank = MemoryBank(3, 2, 2)
        a, b, c, d = (entry(t, 0) for t in (0.1, 0.2, 0.3, 0.4))
        bank.push_batch([a, b])
        bank.push_batch([c, d])
        stored = [e.feature for e in bank.entries()]
        self.assertEqual(len(stored), 3)
        for got, want in zip(stored, (b, c, d)):
            assert_array_equal(got, want.feature)
        self.assertTrue(bank.is_full)
        self.assertEqual(bank.write_cursor, 1)

    def test_empty_bank_and_empty_push(self):
        bank = MemoryBank(4, 2, 2)
        bank.push_batch([])
        self.assertEqual(len(bank), 0)
        self.assertEqual(bank.snapshot().count, 0)
        nbrs = bank.query_neighbors(np.array([1.0, 0.0]), 0, 5)
        self.assertEqual(nbrs.num_positives, 0)
        self.assertEqual(nbrs.num_negatives, 0)

    def test_push_larger_than_capacity_keeps_newest(self):
        bank = MemoryBank(2, 2, 2)
        bank.push_batch([entry(t, i % 2) for i, t in enumerate((0.1, 0.2, 0.3, 0.4, 0.5))])
        snap = bank.snapshot()
        assert_array_equal(snap.labels, [1, 0])
        assert_array_equal(snap.features[1], entry(0.5, 0).feature)

    def test_validation(self):
        bank = MemoryBank(4, 2, 2)
        with self.assertRaises(ValueError):
            bank.push_arrays(np.array([[2.0, 0.0]]), np.array([[0.5, 0.5]]), np.array([0]))
        with self.assertRaises(ValueError):
            bank.push_arrays(np.array([[1.0, 0.0]]), np.array([[0.5, 0.6]]), np.array([0]))
        with self.assertRaises(ValueError):
            bank.push_arrays(np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]]), np.array([2]))
        with self.assertRaises(ShapeError):
            bank.push_arrays(np.array([[1.0, 0.0, 0.0]]), np.array([[0.5, 0.5]]), np.array([0]))
        self.assertEqual(len(bank), 0)

    def test_rejects_bad_capacity(self):
        with self.assertRaises(ValueError):
            MemoryBank(0, 2, 2)

    def test_matches_list_oracle(self):
        rng = SeededRng(21)
        capacity = 17
        bank = MemoryBank(capacity, 3, 4)
        oracle = []
        for op in range(10_000):
            n = int(rng.integers(0, 6))
            feats = rng.unit_vectors(n, 3) if n else np.empty((0, 3))
            dists = np.full((n, 4), 0.25)
            labels = np.asarray(rng.integers(0, 4, n))
            bank.push_arrays(feats, dists, labels)
            oracle.extend(zip(feats, labels))
            oracle = oracle[-capacity:]
            if op % 97 == 0 or op == 9_999:
                snap = bank.snapshot()
                self.assertEqual(snap.count, len(oracle))
                for i, (feat, label) in enumerate(oracle):
                    assert_array_equal(snap.features[i], feat)
                    self.assertEqual(snap.labels[i], label)
            if oracle and op % 7 == 0:
                query = rng.unit_vectors(1, 3)[0]
                label = int(rng.integers(0, 4))
                top_n = int(rng.integers(1, 6))
                nbrs = bank.query_neighbors(query, label, top_n)
                pos = [i for i, (_, l) in enumerate(oracle) if l == label]
                pos.sort(key=lambda i: (-float(oracle[i][0] @ query), -i))
                self.assertEqual(nbrs.positive_ids, pos[:top_n])
                self.assertEqual(nbrs.negative_ids, [i for i, (_, l) in enumerate(oracle) if l != label])


class SnapshotTests(unittest.TestCase):
    def test_snapshot_is_a_copy(self):
        bank = MemoryBank(2, 2, 2)
        bank.push_batch([entry(0.1, 0), entry(0.2, 1)])
        snap = bank.snapshot()
        bank.push_batch([entry(0.3, 0), entry(0.4, 0)])
        assert_array_equal(snap.labels, [0, 1])
        assert_array_equal(snap.features[0], entry(0.1, 0).feature)

    def test_snapshot_is_frozen(self):
        snap = MemoryBank(2, 2, 2).snapshot()
        with self.assertRaises(Exception):
            snap.labels = np.array([1])

    def test_from_snapshot_round_trip(self):
        bank = MemoryBank(3, 2, 2)
        bank.push_batch([entry(t, i % 2) for i, t in enumerate((0.1, 0.2, 0.3, 0.4))])
        rebuilt = MemoryBank.from_snapshot(3, bank.snapshot())
        assert_array_equal(rebuilt.snapshot().features, bank.snapshot().features)
        assert_array_equal(rebuilt.snapshot().labels, bank.snapshot().labels)


class QueryTests(unittest.TestCase):
    def make_bank(self):
        bank = MemoryBank(8, 2, 3)
        angles = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5)
        labels = (0, 1, 0, 2, 0, 1)
        bank.push_batch([entry(a, l, 3) for a, l in zip(angles, labels)])
        return bank

    def test_positives_by_similarity_negatives_chronological(self):
        nbrs = self.make_bank().query_neighbors(np.array([1.0, 0.0]), 0, 10)
        self.assertEqual(nbrs.positive_ids, [0, 2, 4])
        self.assertEqual(nbrs.negative_ids, [1, 3, 5])
        sims = nbrs.positives @ np.array([1.0, 0.0])
        self.assertTrue(np.all(np.diff(sims) <= 0))

    def test_top_n_limits_positives_only(self):
        nbrs = self.make_bank().query_neighbors(l2_normalize([np.cos(2.0), np.sin(2.0)]), 0, 1)
        self.assertEqual(nbrs.positive_ids, [4])
        self.assertEqual(nbrs.num_negatives, 3)

    def test_no_same_label_entries(self):
        bank = MemoryBank(4, 2, 2)
        bank.push_batch([entry(0.1, 1), entry(0.2, 1)])
        nbrs = bank.query_neighbors(np.array([1.0, 0.0]), 0, 4)
        self.assertEqual(nbrs.num_positives, 0)
        self.assertEqual(nbrs.negative_ids, [0, 1])

    def test_ties_prefer_newer_entry(self):
        bank = MemoryBank(4, 2, 2)
        bank.push_batch([entry(0.3, 0), entry(-0.3, 0), entry(1.0, 1)])
        nbrs = bank.query_neighbors(np.array([1.0, 0.0]), 0, 1)
        self.assertEqual(nbrs.positive_ids, [1])

    def test_invalid_queries(self):
        bank = self.make_bank()
        with self.assertRaises(ValueError):
            bank.query_neighbors(np.array([1.0, 0.0]), 0, 0)
        with self.assertRaises(ShapeError):
            bank.query_neighbors(np.array([1.0, 0.0, 0.0]), 0, 2)

    def test_snapshot_query_matches_bank_query(self):
        bank = self.make_bank()
        snap: BankSnapshot = bank.snapshot()
        a = snap.query_neighbors(np.array([0.0, 1.0]), 1, 2)
        b = bank.query_neighbors(np.array([0.0, 1.0]), 1, 2)
        self.assertEqual(a.positive_ids, b.positive_ids)
        self.assertEqual(a.negative_ids, b.negative_ids)


if __name__ == "__main__":
    unittest.main()

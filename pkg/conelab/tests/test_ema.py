import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from pydantic import ValidationError

from conelab.ema import EmaState, ema_update, momentum_at
from conelab.network import init_params
from conelab.numeric import SeededRng, ShapeError


def pair(seed_a=0, seed_b=1):
    return (
        init_params([3, 4], [4, 2], 2, SeededRng(seed_a)),
        init_params([3, 4], [4, 2], 2, SeededRng(seed_b)),
    )


class MomentumScheduleTests(unittest.TestCase):
    def test_endpoints_and_midpoint(self):
        state = EmaState(base_momentum=0.996, total_steps=1000)
        self.assertEqual(momentum_at(state, 0), 0.996)
        self.assertEqual(momentum_at(state, 1000), 1.0)
        self.assertAlmostEqual(momentum_at(state, 500), 0.998, places=12)

    def test_monotone_non_decreasing(self):
        state = EmaState(base_momentum=0.9, total_steps=257)
        values = [momentum_at(state, t) for t in range(258)]
        self.assertTrue(all(b >= a for a, b in zip(values, values[1:])))

    def test_step_out_of_range(self):
        state = EmaState(total_steps=10)
        with self.assertRaises(ValueError):
            momentum_at(state, 11)
        with self.assertRaises(ValueError):
            momentum_at(state, -1)

    def test_state_validation(self):
        with self.assertRaises(ValidationError):
            EmaState(total_steps=0)
        with self.assertRaises(ValidationError):
            EmaState(base_momentum=1.5, total_steps=3)


class EmaUpdateTests(unittest.TestCase):
    def test_unit_momentum_is_a_no_op(self):
        target, source = pair()
        before = target.clone()
        ema_update(target, source, 1.0)
        for (_, a), (_, b) in zip(target.named_tensors(), before.named_tensors()):
            assert_array_equal(a, b)

    def test_zero_momentum_copies(self):
        target, source = pair()
        ema_update(target, source, 0.0)
        for (_, a), (_, b) in zip(target.named_tensors(), source.named_tensors()):
            assert_array_equal(a, b)

    def test_midpoint(self):
        target, source = pair()
        expected = [(a + b) / 2 for (_, a), (_, b) in zip(target.named_tensors(), source.named_tensors())]
        ema_update(target, source, 0.5)
        for (_, got), want in zip(target.named_tensors(), expected):
            assert_allclose(got, want, atol=1e-15)

    def test_source_untouched(self):
        target, source = pair()
        before = source.clone()
        ema_update(target, source, 0.3)
        for (_, a), (_, b) in zip(source.named_tensors(), before.named_tensors()):
            assert_array_equal(a, b)

    def test_rejects_bad_momentum_and_shapes(self):
        target, source = pair()
        with self.assertRaises(ValueError):
            ema_update(target, source, 1.2)
        other = init_params([3, 5], [4, 2], 2, SeededRng(2))
        with self.assertRaises(ShapeError):
            ema_update(target, other, 0.5)

    def test_repeated_updates_converge_to_source(self):
        target, source = pair()
        for _ in range(200):
            ema_update(target, source, 0.9)
        for (_, a), (_, b) in zip(target.named_tensors(), source.named_tensors()):
            assert_allclose(a, b, atol=1e-8)
            self.assertTrue(np.all(np.isfinite(a)))


if __name__ == "__main__":
    unittest.main()

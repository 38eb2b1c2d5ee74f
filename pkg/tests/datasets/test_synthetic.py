import math
import unittest

import numpy as np
from seplab.datasets import SpiralParams, gen_blobs, gen_spiral, spiral_point, unscale_spiral
from seplab.datasets.synthetic import NEGATIVE, POSITIVE
from seplab.errors import RejectedInputError
from seplab.metrics import pairwise


class Spiral_TestCase(unittest.TestCase):
    ## Unit test

    def test_spiral_point(self):
        self.assertTrue(np.allclose(spiral_point(math.pi, positive=False), [math.pi, 0.0], atol=1e-12))
        self.assertTrue(np.allclose(spiral_point(math.pi, positive=True), [math.pi, 0.0], atol=1e-12))
        self.assertTrue(np.array_equal(spiral_point(0.0, positive=True), [0.0, 0.0]))
        self.assertTrue(np.array_equal(spiral_point(0.0, positive=False), [0.0, 0.0]))

    def test_gen_spiral(self):
        ds = gen_spiral(SpiralParams(n_per_class=50, seed=3))

        self.assertEqual((ds.n, ds.dim, ds.class_count), (100, 2, 2))
        self.assertEqual(int((ds.labels == POSITIVE).sum()), 50)
        self.assertEqual(int((ds.labels == NEGATIVE).sum()), 50)
        self.assertGreaterEqual(ds.features.min(), 0.0)
        self.assertLessEqual(ds.features.max(), 1.0)

    def test_deterministic(self):
        a = gen_spiral(SpiralParams(n_per_class=20, seed=1))
        b = gen_spiral(SpiralParams(n_per_class=20, seed=1))
        c = gen_spiral(SpiralParams(n_per_class=20, seed=2))
        self.assertTrue(np.array_equal(a.features, b.features))
        self.assertFalse(np.array_equal(a.features, c.features))

    def test_noiseless_points_lie_on_the_arms(self):
        p = SpiralParams(n_per_class=30, noise=0.0, seed=0)
        ds = gen_spiral(p)
        raw = unscale_spiral(ds)
        for point, label in zip(raw, ds.labels):
            # the arms are x -> (-x cos x, -+x sin x); radius equals x
            x = float(np.hypot(*point))
            self.assertLessEqual(x, p.x_range_max + 1e-9)
            expected = spiral_point(x, label == POSITIVE)
            self.assertTrue(np.allclose(point, expected, atol=1e-8))

    def test_rejects(self):
        with self.assertRaises(RejectedInputError):
            SpiralParams(n_per_class=0)
        with self.assertRaises(RejectedInputError):
            SpiralParams(noise=-1.0)


class Blobs_TestCase(unittest.TestCase):
    ## Unit test

    def test_zero_spread(self):
        ds = gen_blobs([[0.2, 0.3], [0.7, 0.9]], 0.0, 5)
        self.assertTrue(np.array_equal(ds.features[:5], np.tile([0.2, 0.3], (5, 1))))
        self.assertTrue(np.array_equal(ds.features[5:], np.tile([0.7, 0.9], (5, 1))))

    def test_separation(self):
        ds = gen_blobs([[0.2], [0.8]], 0.1, 50, seed=4)
        a = ds.features[ds.labels == 1]
        b = ds.features[ds.labels == 2]
        self.assertGreaterEqual(pairwise("linf", a, b).min(), 0.4 - 1e-12)

    def test_labels(self):
        ds = gen_blobs([[0.1], [0.5], [0.9]], 0.05, 4)
        self.assertEqual(ds.class_count, 3)
        self.assertEqual(set(ds.labels.tolist()), {1, 2, 3})

    def test_rejects(self):
        with self.assertRaises(RejectedInputError):
            gen_blobs([[0.5]], 0.1, 3)
        with self.assertRaises(RejectedInputError):
            gen_blobs([[0.1], [0.9]], -0.1, 3)

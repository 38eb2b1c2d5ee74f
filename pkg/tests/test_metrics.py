import unittest

import numpy as np
from seplab.errors import RejectedInputError
from seplab.metrics import (
    EXCEEDED,
    Metric,
    clip_domain,
    dist,
    dist_early_exit,
    dist_early_exit_batch,
    pairwise,
    project_ball,
)


class Metrics_TestCase(unittest.TestCase):
    ## Initialization

    def setUp(self):
        self.rng = np.random.default_rng(7)

    ## Unit test

    ## DISTANCES

    def test_dist(self):
        self.assertEqual(dist("linf", [0.0, 0.0], [0.0, 0.0]), 0.0)
        self.assertAlmostEqual(dist("linf", [0.1, 0.9], [0.4, 0.5]), 0.4, places=12)
        self.assertAlmostEqual(dist(Metric.L2, [3.0, 0.0], [0.0, 4.0]), 5.0, places=12)

    def test_dist_integer_units(self):
        # 8-bit pixels stay exact in units of 1/255
        a = np.array([0, 255, 17], dtype=np.uint8)
        b = np.array([255, 0, 18], dtype=np.uint8)
        self.assertEqual(dist("linf", a, b), 255.0)
        self.assertEqual(dist("l2", np.array([3], dtype=np.uint8), np.array([0], dtype=np.uint8)), 3.0)

    def test_dist_mismatch(self):
        with self.assertRaises(RejectedInputError):
            dist("linf", [0.0, 1.0], [0.0])
        with self.assertRaises(RejectedInputError):
            dist("l1", [0.0], [1.0])

    def test_triangle_inequality(self):
        for metric in Metric:
            for _ in range(200):
                a, b, c = self.rng.random((3, 5))
                self.assertLessEqual(dist(metric, a, c), dist(metric, a, b) + dist(metric, b, c) + 1e-12)
                self.assertEqual(dist(metric, a, b), dist(metric, b, a))

    ## EARLY EXIT

    def test_dist_early_exit(self):
        self.assertIs(dist_early_exit([0.0, 1.0], [1.0, 0.0], 0.5), EXCEEDED)
        self.assertAlmostEqual(dist_early_exit([0.1, 0.2], [0.15, 0.25], 1.0), 0.05, places=12)
        self.assertIs(dist_early_exit([0.1], [0.2], 0.0), EXCEEDED)
        self.assertFalse(EXCEEDED)

    def test_dist_early_exit_agrees(self):
        for metric in Metric:
            for _ in range(200):
                a, b = self.rng.random((2, 70))
                bound = self.rng.uniform(0.0, 1.5)
                exact = dist(metric, a, b)
                result = dist_early_exit(a, b, bound, metric, chunk=8)
                if result is EXCEEDED:
                    self.assertGreaterEqual(exact + 1e-12, bound)
                else:
                    self.assertAlmostEqual(result, exact, places=12)
                    self.assertLess(result, bound)

    def test_dist_early_exit_batch(self):
        query = self.rng.integers(0, 256, 40).astype(np.uint8)
        references = self.rng.integers(0, 256, (30, 40)).astype(np.uint8)
        exact = pairwise("linf", query[None, :], references)[0]
        bound = float(np.median(exact))
        order = self.rng.permutation(40)

        strict = dist_early_exit_batch(query, references, bound, order=order, chunk=7)
        self.assertTrue(np.array_equal(strict[exact < bound], exact[exact < bound]))
        self.assertTrue(np.isinf(strict[exact >= bound]).all())

        inclusive = dist_early_exit_batch(query, references, bound, inclusive=True)
        self.assertTrue(np.array_equal(inclusive[exact <= bound], exact[exact <= bound]))

    def test_pairwise(self):
        q = self.rng.random((4, 3))
        r = self.rng.random((5, 3))
        matrix = pairwise("l2", q, r)
        self.assertEqual(matrix.shape, (4, 5))
        self.assertAlmostEqual(matrix[2, 3], dist("l2", q[2], r[3]), places=12)

    ## PROJECTION AND CLIPPING

    def test_project_ball(self):
        self.assertTrue(np.array_equal(project_ball([0.3, 0.4], [0.3, 0.4], 0.1), [0.3, 0.4]))
        self.assertTrue(np.allclose(project_ball([1.0], [0.0], 0.3), [0.3]))
        self.assertTrue(np.allclose(project_ball([0.2, -0.5], [0.0, 0.0], 0.25), [0.2, -0.25]))
        self.assertTrue(np.allclose(project_ball([3.0, 4.0], [0.0, 0.0], 1.0, "l2"), [0.6, 0.8]))

    def test_project_ball_stays_inside(self):
        for metric in Metric:
            x = self.rng.normal(size=(50, 6))
            center = self.rng.normal(size=(50, 6))
            out = project_ball(x, center, 0.2, metric)
            for row, c in zip(out, center):
                self.assertLessEqual(dist(metric, row, c), 0.2 + 1e-12)

    def test_project_ball_rejects(self):
        with self.assertRaises(RejectedInputError):
            project_ball([0.0], [0.0], -1.0)
        with self.assertRaises(RejectedInputError):
            project_ball([0.0, 1.0], [0.0], 1.0)

    def test_clip_domain(self):
        self.assertTrue(np.array_equal(clip_domain([0.5]), [0.5]))
        self.assertTrue(np.array_equal(clip_domain([1.2, -0.1]), [1.0, 0.0]))
        x = self.rng.normal(size=20)
        self.assertTrue(np.array_equal(clip_domain(clip_domain(x)), clip_domain(x)))
        with self.assertRaises(RejectedInputError):
            clip_domain([0.5], 1.0, 0.0)

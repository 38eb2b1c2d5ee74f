import unittest

import numpy as np
from seplab.datasets import Dataset, concat, random_relabel, split, subsample
from seplab.errors import RejectedInputError


class Transforms_TestCase(unittest.TestCase):
    ## Initialization

    def setUp(self):
        rng = np.random.default_rng(0)
        self.ds = Dataset(rng.random((40, 3)), np.repeat([1, 2], 20), 2, name="toy")

    ## Unit test

    ## SUBSAMPLE

    def test_subsample_full(self):
        sub = subsample(self.ds, self.ds.n, seed=1)
        self.assertEqual(sub.n, self.ds.n)
        self.assertCountEqual(map(tuple, sub.features), map(tuple, self.ds.features))

    def test_subsample_stratified(self):
        sub = subsample(self.ds, 10, seed=2, stratified=True)
        self.assertTrue(np.array_equal(sub.class_counts(), [5, 5]))

    def test_subsample_deterministic(self):
        a = subsample(self.ds, 7, seed=3)
        b = subsample(self.ds, 7, seed=3)
        self.assertTrue(np.array_equal(a.features, b.features))

    def test_subsample_rejects(self):
        with self.assertRaises(RejectedInputError):
            subsample(self.ds, self.ds.n + 1)

    ## RELABEL

    def test_random_relabel(self):
        a = random_relabel(self.ds, seed=5)
        b = random_relabel(self.ds, seed=5)
        self.assertTrue(np.array_equal(a.labels, b.labels))
        self.assertTrue(np.array_equal(a.features, self.ds.features))
        self.assertTrue(set(a.labels.tolist()) <= {1, 2})

    def test_random_relabel_single_class(self):
        single = Dataset(np.zeros((5, 2)), np.ones(5), 1)
        self.assertTrue(np.array_equal(random_relabel(single, 9).labels, single.labels))

    ## CONCAT AND SPLIT

    def test_concat(self):
        both = concat(self.ds, self.ds.take([0, 1]))
        self.assertEqual(both.n, 42)
        self.assertTrue(np.array_equal(both.features[40:], self.ds.features[:2]))
        with self.assertRaises(RejectedInputError):
            concat(self.ds, Dataset(np.zeros((1, 2)), [1], 2))
        with self.assertRaises(RejectedInputError):
            concat(self.ds, Dataset(np.zeros((1, 3)), [1], 3))

    def test_split(self):
        first, second = split(self.ds, 0.75, seed=1)
        self.assertEqual((first.n, second.n), (30, 10))
        self.assertTrue(np.array_equal(first.class_counts(), [15, 15]))
        rows = {tuple(r) for r in first.features} | {tuple(r) for r in second.features}
        self.assertEqual(len(rows), 40)

    def test_split_rejects(self):
        with self.assertRaises(RejectedInputError):
            split(self.ds, 1.0)
        with self.assertRaises(RejectedInputError):
            split(self.ds, 0.001)

import unittest

import numpy as np
from seplab.attacks import AttackConfig
from seplab.errors import RejectedInputError
from seplab.objectives import TradesStrategy, kl_divergence, loss_natural, loss_trades
from seplab.rng import RandomStream

from . import gradient_report, random_net


class Trades_TestCase(unittest.TestCase):
    ## Initialization

    def setUp(self):
        self.rng = np.random.default_rng(3)
        self.x = self.rng.uniform(0.2, 0.8, (6, 4))
        self.y = self.rng.integers(1, 4, 6)
        self.inner = AttackConfig(0.1, steps=5)
        self.strategy = TradesStrategy(beta=6.0, inner=self.inner)

    ## Unit test

    ## KL DIVERGENCE

    def test_kl_divergence(self):
        clean = self.rng.normal(size=(4, 3))
        kl, _, _ = kl_divergence(clean, clean)
        self.assertTrue(np.allclose(kl, 0.0, atol=1e-15))
        kl, _, _ = kl_divergence(clean, self.rng.normal(size=(4, 3)))
        self.assertTrue((kl > 0).all())

    def test_kl_gradients(self):
        clean = self.rng.normal(size=(2, 3))
        perturbed = self.rng.normal(size=(2, 3))
        _, d_clean, d_perturbed = kl_divergence(clean, perturbed)
        h = 1e-6
        for array, analytic in ((clean, d_clean), (perturbed, d_perturbed)):
            for idx in np.ndindex(array.shape):
                array[idx] += h
                up = kl_divergence(clean, perturbed)[0].sum()
                array[idx] -= 2 * h
                down = kl_divergence(clean, perturbed)[0].sum()
                array[idx] += h
                self.assertAlmostEqual(analytic[idx], (up - down) / (2 * h), places=6)

    ## TRADES

    def test_inner_points(self):
        net = random_net(0)
        points = self.strategy.find_inner(net, self.x, self.y, RandomStream(2))
        self.assertLessEqual(np.abs(points - self.x).max(), 0.1 + 1e-12)
        kl, _, _ = kl_divergence(net.logits(self.x), net.logits(points))
        self.assertTrue((kl >= 0).all())
        self.assertGreater(kl.sum(), 0.0)

    def test_clean_inner_point_is_natural(self):
        net = random_net(1)
        trades, _ = self.strategy.loss_at_inner(net, self.x, self.y, self.x.copy())
        natural, _ = loss_natural(net, (self.x, self.y))
        self.assertAlmostEqual(trades, natural, places=12)

    def test_zero_beta_is_natural(self):
        net = random_net(2)
        trades, trades_grads = loss_trades(net, (self.x, self.y), 0.0, self.inner)
        natural, natural_grads = loss_natural(net, (self.x, self.y))
        self.assertEqual(trades, natural)
        for (a, b), (c, d) in zip(trades_grads, natural_grads):
            self.assertTrue(np.array_equal(a, c) and np.array_equal(b, d))

    def test_gradients(self):
        for seed in range(3):
            net = random_net(seed)
            points = self.strategy.find_inner(net, self.x, self.y, RandomStream(seed))
            report = gradient_report(self.strategy, net, self.x, self.y, points, [self.x, points])
            self.assertTrue(report.passed(1e-4), report)

    def test_document(self):
        document = self.strategy.to_dict()
        self.assertEqual((document["kind"], document["beta"]), ("trades", 6.0))
        self.assertIn("inner", document)
        with self.assertRaises(RejectedInputError):
            TradesStrategy(beta=-1.0)

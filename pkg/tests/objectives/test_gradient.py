import unittest

import numpy as np
from seplab.errors import RejectedInputError
from seplab.network import Activation, Layer, Network
from seplab.objectives import GradientNormStrategy, loss_gr, loss_natural
from seplab.objectives.base import per_example_input_grads

from . import gradient_report, random_net


class GradientNorm_TestCase(unittest.TestCase):
    ## Initialization

    def setUp(self):
        self.rng = np.random.default_rng(4)
        self.x = self.rng.uniform(0.2, 0.8, (6, 4))
        self.y = self.rng.integers(1, 4, 6)

    ## Unit test

    def test_directions(self):
        net = random_net(0)
        directions = GradientNormStrategy().find_inner(net, self.x, self.y)
        self.assertTrue(np.allclose(np.linalg.norm(directions, axis=1), 1.0))

        constant = Network([Layer(np.zeros((3, 4)), np.zeros(3), Activation.IDENTITY)], input_dim=4)
        directions = GradientNormStrategy().find_inner(constant, self.x, self.y)
        self.assertFalse(directions.any())
        loss, _ = loss_gr(constant, (self.x, self.y), 1.0, 1e-2)
        self.assertAlmostEqual(loss, np.log(3.0), places=12)

    def test_slope_matches_gradient_norm(self):
        # cross-entropy of a linear model is smooth, so the slope converges
        weight = self.rng.normal(size=(3, 4))
        net = Network([Layer(weight, self.rng.normal(size=3), Activation.IDENTITY)], input_dim=4)
        strategy = GradientNormStrategy(fd_step=1e-6)
        directions = strategy.find_inner(net, self.x, self.y)
        _, grads = per_example_input_grads(net, self.x, self.y)
        slopes = strategy.slopes(net, self.x, self.y, directions)
        self.assertTrue(np.allclose(slopes, np.linalg.norm(grads, axis=1), rtol=1e-4))

    def test_penalty(self):
        net = random_net(1)
        strategy = GradientNormStrategy(beta=0.5)
        directions = strategy.find_inner(net, self.x, self.y)
        slopes = strategy.slopes(net, self.x, self.y, directions)
        loss, _ = strategy.loss_at_inner(net, self.x, self.y, directions)
        natural, _ = loss_natural(net, (self.x, self.y))
        self.assertAlmostEqual(loss, natural + 0.5 * float(np.mean(slopes**2)), places=10)

    def test_zero_beta_is_natural(self):
        net = random_net(2)
        gr, _ = loss_gr(net, (self.x, self.y), 0.0, 1e-2)
        natural, _ = loss_natural(net, (self.x, self.y))
        self.assertEqual(gr, natural)

    def test_gradients(self):
        strategy = GradientNormStrategy(beta=0.5)
        for seed in range(3):
            net = random_net(seed)
            directions = strategy.find_inner(net, self.x, self.y)
            shifted = self.x + strategy.fd_step * directions
            report = gradient_report(strategy, net, self.x, self.y, directions, [self.x, shifted])
            self.assertTrue(report.passed(1e-4), report)

    def test_rejects(self):
        with self.assertRaises(RejectedInputError):
            GradientNormStrategy(beta=-1.0)
        with self.assertRaises(RejectedInputError):
            GradientNormStrategy(fd_step=0.0)
        self.assertEqual(GradientNormStrategy().to_dict(), {"kind": "gr", "beta": 1e-4, "fd_step": 1e-2})

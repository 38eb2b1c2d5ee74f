import math
import os
import unittest
from dataclasses import replace
from unittest import mock

import numpy as np
from seplab.attacks import AttackConfig, AttackKind, adv_accuracy
from seplab.datasets import Dataset, SpiralParams, gen_spiral, split
from seplab.errors import DivergenceError, RejectedInputError
from seplab.lipschitz import LipschitzConfig
from seplab.network import Activation, Layer, Network
from seplab.objectives import NaturalStrategy
from seplab.separation import cross_class_nn
from seplab.training import (
    REPORT_COLUMNS,
    TABLE_COLUMNS,
    ExperimentReport,
    MomentumSGD,
    TrainConfig,
    TrainMethod,
    evaluate,
    recipe,
    recipe_names,
    train,
    training_pool,
)

SLOW = os.environ.get("SEPLAB_SLOW_TESTS") == "1"


class Training_TestCase(unittest.TestCase):
    ## Initialization

    def setUp(self):
        self.spiral = gen_spiral(SpiralParams(n_per_class=20, seed=1))
        self.small = TrainConfig(hidden=(8,), epochs=3, batch_size=16, decay_epochs=())

    ## Unit test

    ## CONFIGURATION

    def test_lr_schedule(self):
        cfg = TrainConfig(lr=0.1, decay_epochs=(2, 4), decay_factor=0.5)
        self.assertEqual([cfg.lr_at(e) for e in (0, 1, 2, 3, 4, 9)], [0.1, 0.1, 0.05, 0.05, 0.025, 0.025])

    def test_config_rejects(self):
        for kwargs in (
            {"epochs": -1},
            {"batch_size": 0},
            {"lr": 0.0},
            {"momentum": 1.0},
            {"decay_epochs": (5, 5)},
            {"dropout_rate": 1.0},
            {"hidden": (4, 0)},
        ):
            with self.assertRaises(RejectedInputError, msg=kwargs):
                TrainConfig(**kwargs)

    def test_train_method(self):
        method = TrainMethod("TRADES", {"beta": 3.0}, AttackConfig(0.05))
        self.assertEqual(method.kind, "trades")
        document = method.to_dict()
        self.assertEqual((document["kind"], document["beta"]), ("trades", 3.0))
        self.assertEqual(document["inner"]["epsilon"], 0.05)

        with self.assertRaises(RejectedInputError):
            TrainMethod("natural", {"beta": 1.0})
        with self.assertRaises(RejectedInputError):
            TrainMethod("mixup")
        with self.assertRaises(RejectedInputError):
            TrainMethod("trades", {"beta": -1.0})

    def test_config_document(self):
        document = self.small.to_dict()
        self.assertEqual(document["hidden"], [8])
        self.assertEqual(document["method"], {"kind": "natural"})

    ## OPTIMIZER

    def test_momentum_sgd(self):
        net = Network([Layer(np.zeros((1, 2)), np.zeros(1), Activation.IDENTITY)], input_dim=2)
        optimizer = MomentumSGD(net, momentum=0.5)
        grads = [(np.ones((1, 2)), np.ones(1))]
        optimizer.step(grads, 0.1)
        self.assertTrue(np.allclose(net.layers[0].weight, -0.1))
        optimizer.step(grads, 0.1)
        self.assertTrue(np.allclose(net.layers[0].weight, -0.25))
        self.assertTrue(np.allclose(net.layers[0].bias, -0.25))

    ## TRAINING

    def test_training_is_deterministic(self):
        for method in (TrainMethod("natural"), TrainMethod("at", inner=AttackConfig(0.02, random_start=True))):
            cfg = replace(self.small, method=method, dropout_rate=0.2)
            first, history = train(cfg, self.spiral)
            second, again = train(cfg, self.spiral)
            for p, q in zip(first.parameters(), second.parameters()):
                self.assertTrue(np.array_equal(p, q))
            self.assertEqual(history, again)
            self.assertEqual([row.epoch for row in history], [0, 1, 2])

    def test_seed_changes_parameters(self):
        first, _ = train(self.small, self.spiral)
        second, _ = train(replace(self.small, seed=1), self.spiral)
        self.assertFalse(np.array_equal(first.layers[0].weight, second.layers[0].weight))

    def test_natural_training_lowers_loss(self):
        cfg = replace(self.small, hidden=(16, 16), epochs=30, lr=0.05)
        _, history = train(cfg, self.spiral)
        self.assertLess(history[-1].loss, history[0].loss)

    def test_divergence(self):
        with mock.patch.object(NaturalStrategy, "loss", return_value=(math.nan, [])):
            with self.assertRaises(DivergenceError) as ctx:
                train(self.small, self.spiral)
        self.assertEqual((ctx.exception.epoch, ctx.exception.batch), (0, 0))

    def test_overflowing_update(self):
        grads = [(np.full((2, 2), 1e308), np.zeros(2))]
        with mock.patch.object(NaturalStrategy, "loss", return_value=(1.0, grads)):
            with self.assertRaises(DivergenceError):
                train(replace(self.small, hidden=()), self.spiral)

    def test_zero_epochs(self):
        net, history = train(replace(self.small, epochs=0), self.spiral)
        self.assertEqual(history, [])
        self.assertEqual(net.class_count, 2)

    def test_training_pool(self):
        train_ds, test_ds = split(self.spiral, 0.5, seed=0)
        self.assertIs(training_pool(self.small, train_ds, test_ds), train_ds)
        with_test = replace(self.small, include_test_in_train=True)
        self.assertEqual(training_pool(with_test, train_ds, test_ds).n, self.spiral.n)
        with self.assertRaises(RejectedInputError):
            training_pool(with_test, train_ds, None)
        with self.assertRaises(RejectedInputError):
            training_pool(self.small, train_ds, Dataset(np.zeros((2, 3)), [1, 2], 2))

    ## EVALUATION

    def test_report(self):
        report = ExperimentReport("at", 1.0, 0.75, 0.5, 0.25, 3.0, 2.0)
        self.assertEqual(report.gap, 0.25)
        self.assertEqual(report.adv_gap, 0.25)
        row = report.row()
        self.assertEqual(tuple(row), REPORT_COLUMNS)
        self.assertEqual(REPORT_COLUMNS[: len(TABLE_COLUMNS)], TABLE_COLUMNS)
        self.assertEqual(ExperimentReport.from_row(row), report)

    def test_evaluate(self):
        train_ds, test_ds = split(self.spiral, 0.5, seed=0)
        net, _ = train(self.small, train_ds)
        report = evaluate(net, train_ds, test_ds, AttackConfig(0.0), LipschitzConfig(0.01), method="natural")
        self.assertEqual(report.method, "natural")
        self.assertEqual(report.adv_train_acc, report.train_acc)
        self.assertEqual(report.adv_test_acc, report.test_acc)
        self.assertGreaterEqual(report.test_lipschitz, 0.0)

    ## RECIPES

    def test_recipes(self):
        for name in recipe_names():
            cfg = recipe(name, seed=3)
            self.assertEqual(cfg.seed, 3)
        self.assertEqual(recipe("spiral-trades").method.params, {"beta": 6.0})
        self.assertTrue(recipe("spiral-rst-with-test").include_test_in_train)
        self.assertTrue(recipe("spiral-at").method.inner.random_start)
        with self.assertRaises(RejectedInputError):
            recipe("mnist-at")

    ## DESK-SCALE PROPERTIES

    @unittest.skipUnless(SLOW, "SEPLAB_SLOW_TESTS not set")
    def test_robust_methods_beat_natural(self):
        totals = {name: np.zeros(3) for name in ("spiral-natural", "spiral-at", "spiral-trades")}
        for seed in range(5):
            train_ds, test_ds, eps = self._spiralFixture(seed)
            for name in totals:
                net, _ = train(recipe(name, epsilon=eps, seed=seed), train_ds)
                report = evaluate(net, train_ds, test_ds, AttackConfig(eps), LipschitzConfig(eps, seed=seed))
                totals[name] += [report.test_acc, report.adv_test_acc, report.test_lipschitz]
                self.assertLessEqual(
                    adv_accuracy(net, test_ds, AttackConfig(eps), AttackKind.MT), report.adv_test_acc
                )

        natural = totals["spiral-natural"] / 5
        for name in ("spiral-at", "spiral-trades"):
            robust = totals[name] / 5
            self.assertGreaterEqual(robust[1] - natural[1], 0.20, name)
            self.assertLess(robust[2], natural[2], name)
            self.assertGreaterEqual(natural[0], robust[0] - 0.01, name)

    @unittest.skipUnless(SLOW, "SEPLAB_SLOW_TESTS not set")
    def test_dropout_narrows_the_gap(self):
        gaps = np.zeros(2)
        for seed in range(5):
            train_ds, test_ds, eps = self._spiralFixture(seed)
            cfg = recipe("spiral-trades", epsilon=eps, seed=seed)
            for k, rate in enumerate((0.0, 0.2)):
                net, _ = train(replace(cfg, dropout_rate=rate), train_ds)
                report = evaluate(net, train_ds, test_ds, AttackConfig(eps), LipschitzConfig(eps))
                gaps[k] += report.gap
        self.assertLess(gaps[1], gaps[0])

    @unittest.skipUnless(SLOW, "SEPLAB_SLOW_TESTS not set")
    def test_training_with_test_set(self):
        train_ds, test_ds, eps = self._spiralFixture(0)
        r = 2.0 * eps
        net, _ = train(recipe("spiral-rst-with-test", epsilon=r), train_ds, test_ds)
        self.assertGreaterEqual(adv_accuracy(net, test_ds, AttackConfig(r)), 0.99)

    ## Utils

    def _spiralFixture(self, seed):
        ds = gen_spiral(SpiralParams(seed=seed))
        train_ds, test_ds = split(ds, 0.5, seed=seed)
        r = cross_class_nn(ds, ds, "linf", True, progress=False).radius
        return train_ds, test_ds, 0.5 * r

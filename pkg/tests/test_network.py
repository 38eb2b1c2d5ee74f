import io
import struct
import unittest

import numpy as np
from seplab.errors import DataFormatError, NumericStateError, RejectedInputError
from seplab.network import (
    Activation,
    Layer,
    LayerSpec,
    Mode,
    Network,
    check_gradients,
    cross_entropy,
    decision_grid,
    grad_check,
    init_network,
    load_model,
    mlp_specs,
    relu_pattern,
    save_model,
)
from seplab.rng import RandomStream


class Network_TestCase(unittest.TestCase):
    ## Initialization

    def setUp(self):
        self.rng = np.random.default_rng(3)
        self.linear = Network(
            [Layer(np.array([[1.0, -2.0]]), np.array([0.5]), Activation.IDENTITY)], input_dim=2
        )

    ## Unit test

    ## CONSTRUCTION

    def test_init_network(self):
        a = init_network(mlp_specs([8, 6], 3), 4, seed=1)
        b = init_network(mlp_specs([8, 6], 3), 4, seed=1)
        for p, q in zip(a.parameters(), b.parameters()):
            self.assertTrue(np.array_equal(p, q))
        for layer in a.layers:
            self.assertFalse(layer.bias.any())
        limit = np.sqrt(6.0 / (4 + 8))
        self.assertLessEqual(np.abs(a.layers[0].weight).max(), limit)
        self.assertEqual(a.class_count, 3)

    def test_rejects_bad_architecture(self):
        with self.assertRaises(RejectedInputError):
            init_network([], 2)
        with self.assertRaises(RejectedInputError):
            LayerSpec(0)
        with self.assertRaises(RejectedInputError):
            init_network([LayerSpec(3, Activation.RELU)], 2)
        with self.assertRaises(RejectedInputError):
            Network([Layer(np.zeros((2, 3)), np.zeros(2), Activation.IDENTITY)], input_dim=2)

    ## FORWARD

    def test_forward(self):
        logits, trace = self.linear.forward([1.0, 1.0])
        self.assertEqual(logits.tolist(), [-0.5])
        self.assertFalse(trace.batched)
        self.assertEqual(self.linear.logits([[1.0, 1.0], [0.0, 0.0]]).tolist(), [[-0.5], [0.5]])

        zero = Network([Layer(np.zeros((3, 2)), np.zeros(3), Activation.IDENTITY)], input_dim=2)
        self.assertEqual(zero.logits([0.3, 0.7]).tolist(), [0.0, 0.0, 0.0])
        self.assertEqual(zero.predict([0.3, 0.7]), 1)

    def test_dropout_zero_is_eval(self):
        net = init_network(mlp_specs([5], 2), 3, seed=2)
        x = self.rng.random((4, 3))
        train, _ = net.forward(x, Mode.TRAIN, RandomStream(0))
        self.assertTrue(np.array_equal(train, net.logits(x)))

    def test_inverted_dropout_expectation(self):
        net = init_network(mlp_specs([6, 4], 2), 3, seed=4, dropout_rate=0.2)
        x = np.tile(self.rng.random(3), (10_000, 1))
        _, train = net.forward(x, Mode.TRAIN, RandomStream(1))
        _, evaluation = net.forward(x[:1], Mode.EVAL)
        self.assertTrue(np.allclose(train.post[0].mean(axis=0), evaluation.post[0][0], rtol=0.02, atol=1e-12))
        self.assertIsNone(evaluation.masks[0])
        with self.assertRaises(RejectedInputError):
            net.forward(x, Mode.TRAIN)

    def test_reused_masks(self):
        net = init_network(mlp_specs([6], 2), 3, seed=4, dropout_rate=0.5)
        x = self.rng.random((5, 3))
        first, trace = net.forward(x, Mode.TRAIN, RandomStream(2))
        again, _ = net.forward(x, Mode.TRAIN, masks=trace.masks)
        self.assertTrue(np.array_equal(first, again))

    def test_non_finite_parameters(self):
        net = init_network(mlp_specs([3], 2), 2, seed=0)
        net.layers[0].weight[0, 0] = np.nan
        with self.assertRaises(NumericStateError):
            net.logits([0.1, 0.2])

    ## BACKWARD

    def test_backward(self):
        logits, trace = self.linear.forward([1.0, 1.0])
        grads, input_grad = self.linear.backward(trace, [0.0])
        self.assertFalse(input_grad.any())
        self.assertFalse(any(g.any() for pair in grads for g in pair))

        grads, input_grad = self.linear.backward(trace, [2.0])
        self.assertEqual(input_grad.tolist(), [2.0, -4.0])
        self.assertEqual(grads[0][0].tolist(), [[2.0, 2.0]])
        self.assertEqual(grads[0][1].tolist(), [2.0])

    def test_stale_trace(self):
        net = init_network(mlp_specs([3], 2), 2, seed=0)
        _, trace = net.forward([0.1, 0.2])
        net.apply_update([(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in net.layers])
        with self.assertRaises(RejectedInputError):
            net.backward(trace, [1.0, 0.0])
        with self.assertRaises(RejectedInputError):
            self.linear.backward(trace, [1.0, 0.0])

    def test_grad_check_random_nets(self):
        for seed in range(5):
            net = init_network(mlp_specs([7, 5], 3), 4, seed=seed)
            for layer in net.layers:
                layer.bias[:] = RandomStream(seed).spawn(9).normal(0.1, layer.bias.shape)
            net.touch()
            x = self.rng.random((6, 4))
            y = self.rng.integers(1, 4, 6)
            report = grad_check(net, (x, y))
            self.assertTrue(report.passed(1e-4), report)
            self.assertGreater(report.checked, 0)

    def test_grad_check_linear(self):
        report = grad_check(self.linear, (np.array([[0.2, 0.9]]), np.array([1])))
        self.assertTrue(report.passed(1e-4))
        self.assertEqual(report.skipped, 0)

    def test_corrupted_gradient_fails(self):
        net = init_network(mlp_specs([4], 2), 3, seed=8)
        x = self.rng.random((3, 3))
        y = np.array([1, 2, 1])

        def loss():
            return float(np.mean(cross_entropy(net.logits(x), y)[0]))

        logits, trace = net.forward(x)
        _, dlogits = cross_entropy(logits, y)
        grads, _ = net.backward(trace, dlogits / 3)
        weight = net.layers[-1].weight
        report = check_gradients(loss, {"W": (weight, grads[-1][0] * 1.5)}, on_change=net.touch)
        self.assertFalse(report.passed(1e-4))
        self.assertTrue(report.worst.startswith("W"))

    def test_cross_entropy(self):
        losses, grad = cross_entropy(np.zeros((1, 10)), [4])
        self.assertAlmostEqual(losses[0], np.log(10.0), places=12)
        self.assertAlmostEqual(grad.sum(), 0.0, places=12)
        self.assertAlmostEqual(grad[0, 3], 0.1 - 1.0, places=12)

    ## TANGENTS

    def test_jvp_matches_finite_differences(self):
        net = init_network(mlp_specs([6, 5], 3), 4, seed=5)
        x = self.rng.random((3, 4))
        direction = self.rng.normal(size=(3, 4))
        _, trace = net.forward(x)
        tangent = net.jvp(trace, direction)[-1]

        h = 1e-6
        numeric = (net.logits(x + h * direction) - net.logits(x - h * direction)) / (2 * h)
        self.assertTrue(np.allclose(tangent, numeric, atol=1e-6))

    def test_jvp_backward(self):
        # S = sum(c * logit_tangent) is linear in each weight matrix
        net = init_network(mlp_specs([5], 2), 3, seed=6)
        x = self.rng.random((2, 3))
        direction = self.rng.normal(size=(2, 3))
        c = self.rng.normal(size=(2, 2))

        def scalar():
            _, trace = net.forward(x)
            return float(np.sum(c * net.jvp(trace, direction)[-1]))

        _, trace = net.forward(x)
        tangents = net.jvp(trace, direction)
        grads, input_grad, direction_grad = net.jvp_backward(trace, direction, tangents, np.zeros((2, 2)), c)
        self.assertFalse(input_grad.any())

        targets = {"W0": (net.layers[0].weight, grads[0][0]), "W1": (net.layers[1].weight, grads[1][0])}
        report = check_gradients(scalar, targets, kink_fn=lambda: relu_pattern(net, x), on_change=net.touch)
        self.assertTrue(report.passed(1e-4), report)

        numeric = np.zeros_like(direction)
        for idx in np.ndindex(direction.shape):
            direction[idx] += 1.0
            up = scalar()
            direction[idx] -= 1.0
            numeric[idx] = up - scalar()
        self.assertTrue(np.allclose(direction_grad, numeric, atol=1e-9))

    ## DECISION GRID

    def test_decision_grid(self):
        net = Network([Layer(np.eye(2), np.zeros(2), Activation.IDENTITY)], input_dim=2)
        grid = decision_grid(net, resolution=3)
        self.assertEqual(len(grid), 9)
        self.assertEqual(list(grid[0]), ["x1", "x2", "score", "predicted"])
        by_point = {(row["x1"], row["x2"]): row for row in grid}
        self.assertEqual(by_point[(1.0, 0.0)]["score"], 1.0)
        self.assertEqual(by_point[(1.0, 0.0)]["predicted"], 1)
        self.assertEqual(by_point[(0.0, 0.5)]["predicted"], 2)
        self.assertEqual(by_point[(0.5, 0.5)]["predicted"], 2)

        three = Network([Layer(np.ones((3, 2)), np.zeros(3), Activation.IDENTITY)], input_dim=2)
        with self.assertRaises(RejectedInputError):
            decision_grid(three)
        with self.assertRaises(RejectedInputError):
            decision_grid(net, resolution=1)

    ## SERIALIZATION

    def test_save_load_model(self):
        net = init_network(mlp_specs([5, 4], 3), 6, seed=7, dropout_rate=0.2)
        buffer = io.BytesIO()
        save_model(net, buffer)
        buffer.seek(0)
        loaded = load_model(buffer)

        self.assertEqual(loaded.dropout_rate, 0.2)
        self.assertEqual([l.activation for l in loaded.layers], [l.activation for l in net.layers])
        for p, q in zip(net.parameters(), loaded.parameters()):
            self.assertTrue(np.array_equal(p, q))
        x = self.rng.random((4, 6))
        self.assertTrue(np.array_equal(net.logits(x), loaded.logits(x)))

    def test_load_model_errors(self):
        buffer = io.BytesIO()
        save_model(self.linear, buffer)
        content = buffer.getvalue()

        with self.assertRaises(DataFormatError) as ctx:
            load_model(io.BytesIO(b"XXXXXXXX" + content[8:]))
        self.assertEqual(ctx.exception.field, "magic")
        with self.assertRaises(DataFormatError) as ctx:
            load_model(io.BytesIO(content[:8] + b"\x02" + content[9:]))
        self.assertEqual(ctx.exception.field, "version")
        with self.assertRaises(DataFormatError) as ctx:
            load_model(io.BytesIO(content[:-4]))
        self.assertEqual(ctx.exception.field, "parameters")

        # layer shapes that do not follow from the stored input dimension
        wrong_dim = content[:13] + struct.pack("<I", self.linear.input_dim + 1) + content[17:]
        with self.assertRaises(DataFormatError) as ctx:
            load_model(io.BytesIO(wrong_dim))
        self.assertEqual(ctx.exception.field, "layers")

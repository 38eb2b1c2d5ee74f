import numpy as np
from seplab.network import check_gradients, init_network, mlp_specs, relu_pattern
from seplab.rng import RandomStream


def random_net(seed, input_dim=4, hidden=(6, 5), classes=3):
    """Three-layer ReLU net with non-zero biases."""
    net = init_network(mlp_specs(list(hidden), classes), input_dim, seed=seed)
    for k, layer in enumerate(net.layers):
        layer.bias[:] = RandomStream(seed).spawn(k).normal(0.1, layer.bias.shape)
    net.touch()
    return net


def gradient_report(strategy, net, x, y, inner, points, extra_kinks=None):
    """Check the parameter gradients of `strategy` with its inner state frozen.

    `points` lists every input the loss evaluates the network at; a coordinate
    is skipped when its perturbation flips a ReLU at any of them.
    """
    _, grads = strategy.loss_at_inner(net, x, y, inner)
    targets = {}
    for i, (layer, (dw, db)) in enumerate(zip(net.layers, grads)):
        targets[f"W{i}"] = (layer.weight, dw)
        targets[f"b{i}"] = (layer.bias, db)
    stacked = np.vstack(points)

    def kinks():
        pattern = relu_pattern(net, stacked)
        return pattern if extra_kinks is None else (pattern, extra_kinks())

    return check_gradients(
        lambda: strategy.loss_at_inner(net, x, y, inner)[0],
        targets,
        kink_fn=kinks,
        on_change=net.touch,
    )

from typing import Optional, Tuple

import numpy as np

from ..network import Mode, Network, ParamGrads
from ..rng import RandomStream
from .base import Batch, ObjectiveStrategy


class NaturalStrategy(ObjectiveStrategy):
    """Plain empirical risk: mean softmax cross-entropy on the clean batch."""

    name = "natural"

    def loss_at_inner(
        self,
        net: Network,
        x: np.ndarray,
        y: np.ndarray,
        inner=None,
        mode: Mode = Mode.EVAL,
        rng: Optional[RandomStream] = None,
    ) -> Tuple[float, ParamGrads]:
        losses, dlogits, _, trace = self._cross_entropy_pass(net, x, y, mode, rng)
        grads, _ = net.backward(trace, dlogits / y.size)
        return float(np.mean(losses)), grads


def loss_natural(
    net: Network, batch: Batch, mode: Mode = Mode.EVAL, rng: Optional[RandomStream] = None
) -> Tuple[float, ParamGrads]:
    """Mean cross-entropy of a batch.

    Args:
        net (Network): Model to score.
        batch (Batch): (features, 1-based labels).
        mode (Mode): `eval`, or `train` to apply dropout.
        rng (RandomStream, optional): Source of the dropout masks in `train` mode.

    Returns:
        (loss, parameter gradients) with one (weight, bias) gradient per layer.
    """
    return NaturalStrategy().loss(net, batch, mode, rng)

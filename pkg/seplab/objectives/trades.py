from typing import Any, Dict, Optional, Tuple

import numpy as np

from ..attacks import AttackConfig, projected_ascent
from ..metrics import clip_domain
from ..network import Mode, Network, ParamGrads
from ..rng import RandomStream
from .base import Batch, ObjectiveStrategy, add_grads, check_strength, kl_divergence

# scale of the Gaussian jitter the KL search starts from
START_NOISE = 0.001


class TradesStrategy(ObjectiveStrategy):
    """Cross-entropy plus `beta` times the largest KL between clean and perturbed predictions.

    The perturbed point maximizes KL(p(x) || p(x')) over the ball; the loss
    then differentiates the KL through both of its arguments.
    """

    name = "trades"

    def __init__(self, beta: float = 6.0, inner: Optional[AttackConfig] = None) -> None:
        check_strength(beta=beta)
        super().__init__(inner)
        self.beta = float(beta)

    def params(self) -> Dict[str, Any]:
        return {"beta": self.beta}

    def uses_inner(self) -> bool:
        return self.beta > 0

    def find_inner(
        self, net: Network, x: np.ndarray, y: np.ndarray, rng: Optional[RandomStream] = None
    ) -> Optional[np.ndarray]:
        if self.beta == 0:
            return None
        clean = net.logits(x)

        def objective(points):
            logits, trace = net.forward(points, Mode.EVAL)
            kl, _, d_perturbed = kl_divergence(clean, logits)
            _, grad = net.backward(trace, d_perturbed)
            return kl, grad, None

        start = x
        if self.inner.epsilon > 0:
            stream = rng or RandomStream(self.inner.seed)
            start = clip_domain(x + stream.normal(START_NOISE, x.shape))
        points, _, _ = projected_ascent(
            objective, x, start, self.inner.epsilon, self.inner.steps, self.inner.step
        )
        return points

    def loss_at_inner(
        self,
        net: Network,
        x: np.ndarray,
        y: np.ndarray,
        inner: Optional[np.ndarray],
        mode: Mode = Mode.EVAL,
        rng: Optional[RandomStream] = None,
    ) -> Tuple[float, ParamGrads]:
        n = y.size
        losses, dlogits, logits, trace = self._cross_entropy_pass(net, x, y, mode, rng)
        if self.beta == 0 or inner is None:
            grads, _ = net.backward(trace, dlogits / n)
            return float(np.mean(losses)), grads

        perturbed, perturbed_trace = net.forward(inner, mode, masks=trace.masks)
        kl, d_clean, d_perturbed = kl_divergence(logits, perturbed)
        scale = self.beta / n
        grads, _ = net.backward(trace, dlogits / n + scale * d_clean)
        perturbed_grads, _ = net.backward(perturbed_trace, scale * d_perturbed)
        loss = float(np.mean(losses)) + self.beta * float(np.mean(kl))
        return loss, add_grads(grads, perturbed_grads)


def loss_trades(
    net: Network,
    batch: Batch,
    beta: float,
    inner: AttackConfig,
    mode: Mode = Mode.EVAL,
    rng: Optional[RandomStream] = None,
) -> Tuple[float, ParamGrads]:
    """Clean cross-entropy plus `beta` times the KL divergence to the worst nearby point.

    Args:
        net (Network): Model to score.
        batch (Batch): (features, 1-based labels).
        beta (float): Weight of the KL term.
        inner (AttackConfig): Ball radius and schedule of the KL maximization.
        mode (Mode): `eval`, or `train` to apply dropout.
        rng (RandomStream, optional): Source of the search start and dropout masks.

    Returns:
        (loss, parameter gradients).
    """
    return TradesStrategy(beta, inner).loss(net, batch, mode, rng)

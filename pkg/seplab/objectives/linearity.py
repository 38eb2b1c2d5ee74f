from typing import Any, Dict, Optional, Tuple

import numpy as np

from ..attacks import AttackConfig, projected_ascent
from ..network import Mode, Network, ParamGrads
from ..rng import RandomStream
from .base import (
    Batch,
    ObjectiveStrategy,
    add_grads,
    check_strength,
    per_example_input_grads,
)


class LocalLinearityStrategy(ObjectiveStrategy):
    """Cross-entropy plus penalties on the local non-linearity of the loss.

    For a perturbation delta of the ball the non-linearity of example i is

        g_i = |L_i(x + delta) - L_i(x) - delta^T grad_x L_i(x)|.

    The perturbation maximizes g_i with the parameters frozen; the loss is

        mean L_i(x) + lambda_g * mean g_i + mu * mean |delta^T grad_x L_i(x)|.

    The directional derivative delta^T grad_x L_i is obtained from a tangent
    pass, so its parameter gradient is exact.
    """

    name = "llr"

    def __init__(
        self, lambda_g: float = 1e-2, mu: float = 0.0, inner: Optional[AttackConfig] = None
    ) -> None:
        check_strength(lambda_g=lambda_g, mu=mu)
        super().__init__(inner)
        self.lambda_g = float(lambda_g)
        self.mu = float(mu)

    def params(self) -> Dict[str, Any]:
        return {"lambda_g": self.lambda_g, "mu": self.mu}

    def uses_inner(self) -> bool:
        return self.lambda_g > 0 or self.mu > 0

    def find_inner(
        self, net: Network, x: np.ndarray, y: np.ndarray, rng: Optional[RandomStream] = None
    ) -> Optional[np.ndarray]:
        """Perturbations (not points) maximizing the non-linearity of every example."""
        if not self.uses_inner():
            return None
        base, base_grad = per_example_input_grads(net, x, y)

        def objective(points):
            losses, grads = per_example_input_grads(net, points, y)
            residual = losses - base - np.sum((points - x) * base_grad, axis=1)
            return np.abs(residual), np.sign(residual)[:, None] * (grads - base_grad), None

        start = x
        eps = self.inner.epsilon
        if eps > 0:
            # g and its gradient vanish at delta = 0
            stream = rng or RandomStream(self.inner.seed)
            start = x + stream.uniform(-eps, eps, x.shape)
        points, _, _ = projected_ascent(objective, x, start, eps, self.inner.steps, self.inner.step)
        return points - x

    def nonlinearity(self, net: Network, x: np.ndarray, y: np.ndarray, delta: np.ndarray) -> np.ndarray:
        """Eval-mode g_i of every example for the given perturbations."""
        base, base_grad = per_example_input_grads(net, x, y)
        shifted, _ = per_example_input_grads(net, x + delta, y)
        return np.abs(shifted - base - np.sum(delta * base_grad, axis=1))

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
        if not self.uses_inner() or inner is None:
            grads, _ = net.backward(trace, dlogits / n)
            return float(np.mean(losses)), grads

        delta = inner
        # dlogits = p - onehot(y); the directional derivative is dlogits . (J delta)
        tangent = net.jvp(trace, delta)
        logit_tangent = tangent[-1]
        directional = np.sum(dlogits * logit_tangent, axis=1)
        p = dlogits.copy()
        p[np.arange(n), y - 1] += 1.0

        shifted, d_shifted, _, shifted_trace = self._cross_entropy_pass(
            net, x + delta, y, mode, rng, masks=trace.masks
        )
        residual = shifted - losses - directional
        g_sign = np.sign(residual)

        # coefficients of L_i(x), L_i(x + delta) and the directional term in the total
        c_clean = (1.0 - self.lambda_g * g_sign) / n
        c_shifted = self.lambda_g * g_sign / n
        c_directional = (self.mu * np.sign(directional) - self.lambda_g * g_sign) / n

        # d directional / d logits through the softmax Jacobian
        d_directional = p * logit_tangent - p * np.sum(p * logit_tangent, axis=1, keepdims=True)
        upstream_value = c_clean[:, None] * dlogits + c_directional[:, None] * d_directional
        upstream_tangent = c_directional[:, None] * dlogits

        grads, _, _ = net.jvp_backward(trace, delta, tangent, upstream_value, upstream_tangent)
        shifted_grads, _ = net.backward(shifted_trace, c_shifted[:, None] * d_shifted)

        loss = (
            float(np.mean(losses))
            + self.lambda_g * float(np.mean(np.abs(residual)))
            + self.mu * float(np.mean(np.abs(directional)))
        )
        return loss, add_grads(grads, shifted_grads)


def loss_llr(
    net: Network,
    batch: Batch,
    lambda_g: float,
    mu: float,
    inner: AttackConfig,
    mode: Mode = Mode.EVAL,
    rng: Optional[RandomStream] = None,
) -> Tuple[float, ParamGrads]:
    """Cross-entropy plus the local-linearity penalties weighted by `lambda_g` and `mu`."""
    return LocalLinearityStrategy(lambda_g, mu, inner).loss(net, batch, mode, rng)

from typing import Any, Dict, Optional, Tuple

import numpy as np

from ..errors import RejectedInputError
from ..network import Mode, Network, ParamGrads
from ..rng import RandomStream
from .base import Batch, ObjectiveStrategy, add_grads, check_strength, per_example_input_grads


class GradientNormStrategy(ObjectiveStrategy):
    """Cross-entropy plus `beta` times a finite-difference estimate of ||grad_x L||^2.

    Along the unit direction d = grad_x L / ||grad_x L|| the slope
    (L(x + h d) - L(x)) / h approximates the gradient norm. The direction is
    computed with the parameters frozen; examples with a zero input gradient
    get d = 0 and therefore no penalty.
    """

    name = "gr"

    def __init__(self, beta: float = 1e-4, fd_step: float = 1e-2) -> None:
        check_strength(beta=beta)
        if not fd_step > 0:
            raise RejectedInputError("fd_step must be positive")
        super().__init__()
        self.beta = float(beta)
        self.fd_step = float(fd_step)

    def params(self) -> Dict[str, Any]:
        return {"beta": self.beta, "fd_step": self.fd_step}

    def find_inner(
        self, net: Network, x: np.ndarray, y: np.ndarray, rng: Optional[RandomStream] = None
    ) -> Optional[np.ndarray]:
        if self.beta == 0:
            return None
        _, grads = per_example_input_grads(net, x, y)
        norms = np.linalg.norm(grads, axis=1, keepdims=True)
        return np.where(norms > 0, grads / np.where(norms > 0, norms, 1.0), 0.0)

    def slopes(self, net: Network, x: np.ndarray, y: np.ndarray, directions: np.ndarray) -> np.ndarray:
        """Eval-mode finite-difference slope of every example's loss along its direction."""
        base, _ = per_example_input_grads(net, x, y)
        shifted, _ = per_example_input_grads(net, x + self.fd_step * directions, y)
        return (shifted - base) / self.fd_step

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
        h = self.fd_step
        losses, dlogits, _, trace = self._cross_entropy_pass(net, x, y, mode, rng)
        if self.beta == 0 or inner is None:
            grads, _ = net.backward(trace, dlogits / n)
            return float(np.mean(losses)), grads

        shifted, d_shifted, _, shifted_trace = self._cross_entropy_pass(
            net, x + h * inner, y, mode, rng, masks=trace.masks
        )
        slope = (shifted - losses) / h
        weight = (2.0 * self.beta / (n * h)) * slope
        grads, _ = net.backward(trace, dlogits / n - weight[:, None] * dlogits)
        shifted_grads, _ = net.backward(shifted_trace, weight[:, None] * d_shifted)
        loss = float(np.mean(losses)) + self.beta * float(np.mean(slope * slope))
        return loss, add_grads(grads, shifted_grads)


def loss_gr(
    net: Network,
    batch: Batch,
    beta: float,
    fd_step: float,
    mode: Mode = Mode.EVAL,
    rng: Optional[RandomStream] = None,
) -> Tuple[float, ParamGrads]:
    """Cross-entropy plus `beta` times the squared finite-difference input slope."""
    return GradientNormStrategy(beta, fd_step).loss(net, batch, mode, rng)

from abc import ABC, abstractmethod
from typing import Any, ClassVar, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from ..attacks import AttackConfig
from ..errors import RejectedInputError
from ..network import ForwardTrace, Mode, Network, ParamGrads, cross_entropy
from ..rng import RandomStream

Batch = Tuple[np.ndarray, np.ndarray]

# inner maximization runs in Eval mode from a random point of the ball
DEFAULT_INNER = AttackConfig(epsilon=0.1, steps=10, random_start=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-example cross-entropy and its gradient w.r.t. the logits."""
    return cross_entropy(logits, labels)


def kl_divergence(clean: np.ndarray, perturbed: np.ndarray):
    """KL(softmax(clean) || softmax(perturbed)) per row.

    Returns:
        (kl, d kl / d clean, d kl / d perturbed)
    """
    log_p = log_softmax(clean, axis=1)
    log_q = log_softmax(perturbed, axis=1)
    p = np.exp(log_p)
    gap = log_p - log_q
    kl = np.sum(p * gap, axis=1)
    d_clean = p * (gap - kl[:, None])
    d_perturbed = softmax(perturbed, axis=1) - p
    return kl, d_clean, d_perturbed


def add_grads(first: ParamGrads, second: ParamGrads) -> ParamGrads:
    return [(wa + wb, ba + bb) for (wa, ba), (wb, bb) in zip(first, second)]


class ObjectiveStrategy(ABC):
    """A training objective split into an inner search and a differentiable loss.

    `find_inner` runs whatever maximization the objective needs (adversarial
    points, perturbations or directions) with the parameters held fixed.
    `loss_at_inner` then evaluates the loss with that inner state frozen and
    returns exact parameter gradients, so gradient checks can treat it as an
    ordinary function of the parameters.

    Args:
        inner (AttackConfig, optional): Schedule of the inner maximization.
    """

    name: ClassVar[str] = ""

    def __init__(self, inner: Optional[AttackConfig] = None) -> None:
        self.inner = inner or DEFAULT_INNER

    def find_inner(
        self, net: Network, x: np.ndarray, y: np.ndarray, rng: Optional[RandomStream] = None
    ) -> Any:
        return None

    @abstractmethod
    def loss_at_inner(
        self,
        net: Network,
        x: np.ndarray,
        y: np.ndarray,
        inner: Any,
        mode: Mode = Mode.EVAL,
        rng: Optional[RandomStream] = None,
    ) -> Tuple[float, ParamGrads]:
        pass

    def loss(
        self,
        net: Network,
        batch: Batch,
        mode: Mode = Mode.EVAL,
        rng: Optional[RandomStream] = None,
    ) -> Tuple[float, ParamGrads]:
        """Mean loss over `batch` and its parameter gradients.

        The inner search draws from `rng.spawn(0)` and dropout from
        `rng.spawn(1)`, so objectives sharing a seed share their dropout masks.
        """
        x, y = self._check_batch(net, batch)
        stream = rng or RandomStream(0)
        inner = self.find_inner(net, x, y, stream.spawn(0))
        return self.loss_at_inner(net, x, y, inner, mode, stream.spawn(1))

    def params(self) -> Dict[str, Any]:
        return {}

    def to_dict(self) -> Dict[str, Any]:
        document = {"kind": self.name, **self.params()}
        if self.uses_inner():
            document["inner"] = self.inner.to_dict()
        return document

    def uses_inner(self) -> bool:
        return False

    # SHARED TERMS

    @staticmethod
    def _check_batch(net: Network, batch: Batch) -> Tuple[np.ndarray, np.ndarray]:
        x = np.atleast_2d(np.asarray(batch[0], dtype=np.float64))
        y = np.asarray(batch[1], dtype=np.int64).reshape(-1)
        if x.shape[0] != y.size or y.size == 0:
            raise RejectedInputError("a batch needs one label per example and at least one example")
        if y.min() < 1 or y.max() > net.class_count:
            raise RejectedInputError(f"labels must lie in 1..{net.class_count}")
        return x, y

    @staticmethod
    def _cross_entropy_pass(
        net: Network,
        x: np.ndarray,
        y: np.ndarray,
        mode: Mode,
        rng: Optional[RandomStream],
        masks: Optional[Sequence[Optional[np.ndarray]]] = None,
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, ForwardTrace]:
        """(per-example loss, d loss / d logits, logits, trace) of one pass."""
        logits, trace = net.forward(x, mode, rng, masks=masks)
        losses, dlogits = softmax_cross_entropy(logits, y)
        return losses, dlogits, logits, trace

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"


def per_example_input_grads(net: Network, x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Eval-mode cross-entropy of every row and its gradient w.r.t. that row."""
    logits, trace = net.forward(x, Mode.EVAL)
    losses, dlogits = softmax_cross_entropy(logits, y)
    _, grads = net.backward(trace, dlogits)
    return losses, np.atleast_2d(grads)


def check_strength(**values: float) -> None:
    for key, value in values.items():
        if not value >= 0:
            raise RejectedInputError(f"{key} must be non-negative")

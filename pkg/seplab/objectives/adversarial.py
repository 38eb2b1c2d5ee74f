from typing import Any, Dict, Optional, Tuple

import numpy as np

from ..attacks import AttackConfig, pgd_points
from ..network import Mode, Network, ParamGrads
from ..rng import RandomStream
from .base import Batch, ObjectiveStrategy, add_grads, check_strength


class AdversarialStrategy(ObjectiveStrategy):
    """Adversarial training: cross-entropy at the PGD point of every example.

    The adversarial points are found with the parameters frozen and no
    gradient flows through their search.
    """

    name = "at"

    def uses_inner(self) -> bool:
        return True

    def find_inner(
        self, net: Network, x: np.ndarray, y: np.ndarray, rng: Optional[RandomStream] = None
    ) -> np.ndarray:
        return pgd_points(net, x, y, self.inner, rng)

    def loss_at_inner(
        self,
        net: Network,
        x: np.ndarray,
        y: np.ndarray,
        inner: np.ndarray,
        mode: Mode = Mode.EVAL,
        rng: Optional[RandomStream] = None,
    ) -> Tuple[float, ParamGrads]:
        losses, dlogits, _, trace = self._cross_entropy_pass(net, inner, y, mode, rng)
        grads, _ = net.backward(trace, dlogits / y.size)
        return float(np.mean(losses)), grads


class RobustSelfTrainingStrategy(AdversarialStrategy):
    """Clean cross-entropy plus `lam` times the cross-entropy at the PGD points.

    Only the supervised part of robust self-training is implemented; no
    unlabeled data is involved.
    """

    name = "rst"

    def __init__(self, lam: float = 2.0, inner: Optional[AttackConfig] = None) -> None:
        check_strength(lam=lam)
        super().__init__(inner)
        self.lam = float(lam)

    def params(self) -> Dict[str, Any]:
        return {"lam": self.lam}

    def uses_inner(self) -> bool:
        return self.lam > 0

    def find_inner(self, net, x, y, rng=None) -> Optional[np.ndarray]:
        return super().find_inner(net, x, y, rng) if self.lam > 0 else None

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
        losses, dlogits, _, trace = self._cross_entropy_pass(net, x, y, mode, rng)
        grads, _ = net.backward(trace, dlogits / n)
        loss = float(np.mean(losses))
        if self.lam == 0 or inner is None:
            return loss, grads

        adv_losses, adv_dlogits, _, adv_trace = self._cross_entropy_pass(
            net, inner, y, mode, rng, masks=trace.masks
        )
        adv_grads, _ = net.backward(adv_trace, adv_dlogits * (self.lam / n))
        return loss + self.lam * float(np.mean(adv_losses)), add_grads(grads, adv_grads)


def loss_at(
    net: Network,
    batch: Batch,
    inner: AttackConfig,
    mode: Mode = Mode.EVAL,
    rng: Optional[RandomStream] = None,
) -> Tuple[float, ParamGrads]:
    """Cross-entropy at PGD points found inside the `inner` ball."""
    return AdversarialStrategy(inner).loss(net, batch, mode, rng)


def loss_rst(
    net: Network,
    batch: Batch,
    lam: float,
    inner: AttackConfig,
    mode: Mode = Mode.EVAL,
    rng: Optional[RandomStream] = None,
) -> Tuple[float, ParamGrads]:
    """Clean cross-entropy plus `lam` times the adversarial one."""
    return RobustSelfTrainingStrategy(lam, inner).loss(net, batch, mode, rng)

"""Empirical local Lipschitz constants of a network's logits.

For a point x the local constant is the largest ratio

    ||f(x) - f(x')||_1 / ||x - x'||_inf   over x' in B_inf(x, epsilon),

found by projected signed-gradient ascent on the ratio. Every evaluated
point is feasible, so the reported value is a lower bound on the supremum.
Besides the iterates, each step also evaluates the ball vertex
x + epsilon * sign(g), where g is the gradient of the numerator at the
current iterate. For maps that are linear on the ball that vertex attains
the supremum.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from .datasets import Dataset
from .errors import RejectedInputError
from .metrics import clip_domain, project_ball
from .network import Mode, Network
from .rng import RandomStream

logger = logging.getLogger(__name__)

LIPSCHITZ_BLOCK = 256
MAX_REDRAWS = 100


@dataclass(frozen=True)
class LipschitzConfig:
    epsilon: float
    steps: int = 10
    step_size: Optional[float] = None
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise RejectedInputError("the Lipschitz ball needs a positive epsilon")
        if self.steps < 0:
            raise RejectedInputError("steps must be non-negative")
        if self.step_size is not None and not self.step_size > 0:
            raise RejectedInputError("step_size must be positive")

    @property
    def step(self) -> float:
        return self.epsilon / 5.0 if self.step_size is None else float(self.step_size)

    def to_dict(self) -> Dict[str, Any]:
        return {"epsilon": self.epsilon, "steps": self.steps, "step_size": self.step, "seed": self.seed}


@dataclass(frozen=True)
class LipschitzEstimate:
    per_example: Tuple[float, ...]
    mean: float

    @classmethod
    def from_values(cls, values) -> "LipschitzEstimate":
        values = tuple(float(v) for v in values)
        return cls(values, float(np.mean(values)) if values else 0.0)

    def to_dict(self) -> Dict[str, Any]:
        return {"mean": self.mean, "per_example": list(self.per_example)}


class _Ratio:
    """Difference ratio around fixed centers, with its ascent direction."""

    def __init__(self, net: Network, centers: np.ndarray) -> None:
        self.net = net
        self.centers = centers
        self.reference = net.logits(centers)
        self.rows = np.arange(centers.shape[0])

    def __call__(self, points: np.ndarray):
        """(ratio, gradient of ratio, gradient of numerator, denominator) per row."""
        logits, trace = self.net.forward(points, Mode.EVAL)
        diff = logits - self.reference
        numerator = np.abs(diff).sum(axis=1)
        _, grad_num = self.net.backward(trace, np.sign(diff))

        delta = points - self.centers
        spread = np.abs(delta)
        # argmax keeps the lowest coordinate among ties
        k = np.argmax(spread, axis=1)
        denominator = spread[self.rows, k]

        safe = np.where(denominator > 0, denominator, 1.0)
        ratio = np.where(denominator > 0, numerator / safe, 0.0)
        grad_den = np.zeros_like(points)
        grad_den[self.rows, k] = np.sign(delta[self.rows, k])
        grad = (grad_num * safe[:, None] - numerator[:, None] * grad_den) / (safe * safe)[:, None]
        return ratio, grad, grad_num, denominator


def _redraw(points, centers, epsilon, streams, denominator) -> np.ndarray:
    """Replace rows sitting exactly on their center with fresh uniform draws."""
    points = points.copy()
    for _ in range(MAX_REDRAWS):
        stuck = np.flatnonzero(denominator == 0)
        if not stuck.size:
            break
        for i in stuck:
            points[i] = clip_domain(centers[i] + streams[i].uniform(-epsilon, epsilon, centers.shape[1]))
        denominator = np.abs(points - centers).max(axis=1)
    return points


def lipschitz_batch(
    net: Network, centers: np.ndarray, cfg: LipschitzConfig, indices=None
) -> np.ndarray:
    """Best ratio found around every row of `centers`."""

    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    if centers.shape[1] != net.input_dim:
        raise RejectedInputError(f"input dimension {centers.shape[1]} != {net.input_dim}")
    if centers.size and (centers.min() < 0.0 or centers.max() > 1.0):
        raise RejectedInputError("points must lie in the unit box [0, 1]^d")
    indices = np.arange(centers.shape[0]) if indices is None else np.asarray(indices)
    streams = [RandomStream(cfg.seed, (int(i),)) for i in indices]
    eps = cfg.epsilon
    ratio_at = _Ratio(net, centers)

    current = np.stack([s.uniform(-eps, eps, centers.shape[1]) for s in streams]) + centers
    current = clip_domain(project_ball(current, centers, eps))
    current = _redraw(current, centers, eps, streams, np.abs(current - centers).max(axis=1))

    best = np.zeros(centers.shape[0])
    for step in range(cfg.steps + 1):
        ratio, grad, grad_num, denominator = ratio_at(current)
        best = np.maximum(best, ratio)

        vertex = clip_domain(centers + eps * np.sign(grad_num))
        at_vertex, _, _, _ = ratio_at(vertex)
        best = np.maximum(best, at_vertex)

        if step == cfg.steps:
            break
        current = clip_domain(project_ball(current + cfg.step * np.sign(grad), centers, eps))
        current = _redraw(current, centers, eps, streams, np.abs(current - centers).max(axis=1))
    return best


def local_lipschitz_at(net: Network, x, cfg: LipschitzConfig) -> float:
    """Local constant of the logits at one point."""
    return float(lipschitz_batch(net, np.asarray(x, dtype=np.float64)[None, :], cfg)[0])


_LIPSCHITZ: Dict[str, Any] = {}


def _init_lipschitz(net, cfg) -> None:
    _LIPSCHITZ.update(net=net, cfg=cfg)


def _lipschitz_block(task) -> np.ndarray:
    start, block = task
    return lipschitz_batch(
        _LIPSCHITZ["net"], block, _LIPSCHITZ["cfg"], np.arange(start, start + block.shape[0])
    )


def empirical_lipschitz(
    net: Network,
    ds: Dataset,
    cfg: LipschitzConfig,
    threads: int = 1,
    progress: bool = False,
) -> LipschitzEstimate:
    """Mean local constant over the examples of `ds`."""

    tasks = [
        (start, ds.features[start : start + LIPSCHITZ_BLOCK])
        for start in range(0, ds.n, LIPSCHITZ_BLOCK)
    ]
    values: List[np.ndarray] = []
    bar = tqdm(total=ds.n, desc="lipschitz", unit="example", disable=not progress)
    if threads <= 1:
        _init_lipschitz(net, cfg)
        try:
            for task in tasks:
                values.append(_lipschitz_block(task))
                bar.update(task[1].shape[0])
        finally:
            _LIPSCHITZ.clear()
    else:
        with ProcessPoolExecutor(
            max_workers=threads, initializer=_init_lipschitz, initargs=(net, cfg)
        ) as pool:
            for task, result in zip(tasks, pool.map(_lipschitz_block, tasks)):
                values.append(result)
                bar.update(task[1].shape[0])
    bar.close()

    estimate = LipschitzEstimate.from_values(np.concatenate(values) if values else [])
    logger.debug("Empirical Lipschitz constant %.6g over %d examples", estimate.mean, ds.n)
    return estimate


def global_lipschitz_bound(net: Network) -> float:
    """Upper bound on every ratio the estimator can report.

    Hidden layers are bounded by their inf-to-inf operator norms (largest
    absolute row sum; ReLU does not increase it) and the logit layer by its
    inf-to-1 norm, bounded by the sum of its absolute weights.
    """
    bound = 1.0
    for layer in net.layers[:-1]:
        bound *= float(np.abs(layer.weight).sum(axis=1).max())
    return bound * float(np.abs(net.layers[-1].weight).sum())

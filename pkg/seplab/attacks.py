"""Linf attacks: PGD on the cross-entropy and the multi-targeted margin attack.

Both attacks are projected sign-gradient ascent: every step moves by
`step_size * sign(gradient)`, projects onto the Linf ball around the clean
point and clips into the unit box. The iterate with the best objective is
kept, where any iterate that changes a correct prediction beats every
iterate that does not.

A prediction counts as correct only when the true logit is strictly the
largest, so a tie is a misclassification. An attack succeeds when it turns
a correctly classified clean point into a misclassified one; points that are
already wrong are never counted as successes.

Random starts are drawn from streams derived from (seed, restart, example
index), so outcomes do not depend on how examples are batched or spread
over worker processes.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from .datasets import Dataset
from .errors import NumericStateError, RejectedInputError
from .metrics import clip_domain, project_ball
from .network import Mode, Network, cross_entropy
from .rng import RandomStream

logger = logging.getLogger(__name__)

ATTACK_BLOCK = 256
FEASIBILITY_SLACK = 1e-12

# points -> (objective per row, input gradient per row, misclassified per row)
Objective = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]]


class AttackKind(str, Enum):
    PGD = "pgd"
    MT = "mt"


@dataclass(frozen=True)
class AttackConfig:
    """Schedule of an Linf attack.

    Args:
        epsilon (float): Radius of the Linf ball.
        steps (int): PGD iterations.
        step_size (float, optional): PGD step; defaults to epsilon / 5.
        random_start (bool): Start PGD from a uniform point of the ball.
        restarts (int): Independent reruns; the best outcome is kept.
        seed (int): Root seed of the random starts.
        mt_steps (int): Iterations per target of the multi-targeted attack
            (its step is 2 * epsilon / mt_steps and it always starts randomly).
    """

    epsilon: float
    steps: int = 10
    step_size: Optional[float] = None
    random_start: bool = False
    restarts: int = 1
    seed: int = 0
    mt_steps: int = 20

    def __post_init__(self) -> None:
        if not self.epsilon >= 0:
            raise RejectedInputError("epsilon must be non-negative")
        if self.steps < 1 or self.mt_steps < 1:
            raise RejectedInputError("attacks need at least one step")
        if self.restarts < 1:
            raise RejectedInputError("restarts must be at least 1")
        if self.step_size is not None and not self.step_size > 0:
            raise RejectedInputError("step_size must be positive")

    @property
    def step(self) -> float:
        return self.epsilon / 5.0 if self.step_size is None else float(self.step_size)

    @property
    def mt_step(self) -> float:
        return 2.0 * self.epsilon / self.mt_steps

    def with_epsilon(self, epsilon: float) -> "AttackConfig":
        return replace(self, epsilon=epsilon)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "epsilon": self.epsilon,
            "steps": self.steps,
            "step_size": self.step,
            "random_start": self.random_start,
            "restarts": self.restarts,
            "seed": self.seed,
            "mt_steps": self.mt_steps,
        }


@dataclass(frozen=True)
class AttackOutcome:
    adversarial_point: np.ndarray
    success: bool
    loss_achieved: float
    clean_correct: bool = True


# HELPERS


def is_correct(logits, labels) -> np.ndarray:
    """True where the logit of the (1-based) label is strictly the largest."""
    logits = np.atleast_2d(logits)
    index = np.asarray(labels, dtype=np.int64).reshape(-1) - 1
    rows = np.arange(logits.shape[0])
    own = logits[rows, index]
    others = logits.copy()
    others[rows, index] = -np.inf
    return own > others.max(axis=1)


def check_feasible(points: np.ndarray, origin: np.ndarray, epsilon: float) -> None:
    """Raise unless every point lies in the epsilon-ball of its origin and in [0, 1]."""
    gap = np.abs(points - origin).max(initial=0.0)
    if gap > epsilon + FEASIBILITY_SLACK or points.min(initial=0.0) < 0.0 or points.max(initial=1.0) > 1.0:
        raise NumericStateError(
            f"attack left the feasible set (distance {gap!r} for epsilon {epsilon!r})"
        )


def _check_box(x: np.ndarray) -> None:
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise RejectedInputError("attacked points must lie in the unit box [0, 1]^d")


def projected_ascent(
    objective: Objective,
    origin: np.ndarray,
    start: np.ndarray,
    epsilon: float,
    steps: int,
    step_size: float,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Signed-gradient ascent on `objective` inside the Linf ball and the unit box.

    Returns:
        (points, values, misclassified) of the best iterate of every row,
        the start point included.
    """

    current = clip_domain(project_ball(start, origin, epsilon))
    value, grad, fooled = objective(current)
    fooled = np.zeros(value.shape, dtype=bool) if fooled is None else fooled
    best, best_value, best_fooled = current.copy(), value.copy(), fooled.copy()

    for _ in range(steps):
        current = clip_domain(project_ball(current + step_size * np.sign(grad), origin, epsilon))
        value, grad, fooled = objective(current)
        fooled = np.zeros(value.shape, dtype=bool) if fooled is None else fooled
        better = (fooled & ~best_fooled) | ((fooled == best_fooled) & (value > best_value))
        best[better] = current[better]
        best_value[better] = value[better]
        best_fooled[better] = fooled[better]
    return best, best_value, best_fooled


def cross_entropy_objective(net: Network, labels: np.ndarray) -> Objective:
    def objective(points):
        logits, trace = net.forward(points, Mode.EVAL)
        loss, dlogits = cross_entropy(logits, labels)
        _, grad = net.backward(trace, dlogits)
        return loss, grad, ~is_correct(logits, labels)

    return objective


def margin_objective(net: Network, labels: np.ndarray, targets: np.ndarray) -> Objective:
    """logit_target - logit_label per row."""
    rows = np.arange(len(labels))
    upstream = np.zeros((len(labels), net.class_count))
    upstream[rows, targets - 1] += 1.0
    upstream[rows, labels - 1] -= 1.0

    def objective(points):
        logits, trace = net.forward(points, Mode.EVAL)
        _, grad = net.backward(trace, upstream)
        margin = logits[rows, targets - 1] - logits[rows, labels - 1]
        return margin, grad, ~is_correct(logits, labels)

    return objective


def uniform_starts(x: np.ndarray, epsilon: float, streams: Sequence[RandomStream]) -> np.ndarray:
    """One uniform point of the Linf ball per row, each from its own stream."""
    return x + np.stack([s.uniform(-epsilon, epsilon, x.shape[1]) for s in streams])


def pgd_points(
    net: Network,
    x: np.ndarray,
    labels: np.ndarray,
    cfg: AttackConfig,
    rng: Optional[RandomStream] = None,
) -> np.ndarray:
    """Batch PGD returning only the adversarial points (used for inner maximization).

    The random start, when enabled, is drawn from `rng` for the whole batch.
    """
    start = x
    if cfg.random_start and cfg.epsilon > 0:
        stream = rng or RandomStream(cfg.seed)
        start = x + stream.uniform(-cfg.epsilon, cfg.epsilon, x.shape)
    points, _, _ = projected_ascent(
        cross_entropy_objective(net, labels), x, start, cfg.epsilon, cfg.steps, cfg.step
    )
    return points


# BATCHED ATTACKS


def _merge(best, candidate, active: np.ndarray):
    """Keep the better of two (points, values, fooled) triples on `active` rows."""
    points, values, fooled = best
    c_points, c_values, c_fooled = candidate
    better = active & ((c_fooled & ~fooled) | ((c_fooled == fooled) & (c_values > values)))
    points[better] = c_points[better]
    values[better] = c_values[better]
    fooled[better] = c_fooled[better]


def _pgd_round(net, x, labels, indices, cfg: AttackConfig, restart: int):
    start = x
    if cfg.random_start and cfg.epsilon > 0:
        streams = [RandomStream(cfg.seed, (restart, int(i))) for i in indices]
        start = uniform_starts(x, cfg.epsilon, streams)
    return projected_ascent(
        cross_entropy_objective(net, labels), x, start, cfg.epsilon, cfg.steps, cfg.step
    )


def _mt_round(net, x, labels, indices, cfg: AttackConfig, restart: int):
    best = None
    for k in range(1, net.class_count):
        targets = (labels - 1 + k) % net.class_count + 1
        start = x
        if cfg.epsilon > 0:
            streams = [RandomStream(cfg.seed, (restart, int(i), k)) for i in indices]
            start = uniform_starts(x, cfg.epsilon, streams)
        found = projected_ascent(
            margin_objective(net, labels, targets), x, start, cfg.epsilon, cfg.mt_steps, cfg.mt_step
        )
        if best is None:
            best = tuple(a.copy() for a in found)
        else:
            _merge(best, found, np.ones(len(labels), dtype=bool))
    return best


def attack_batch(
    net: Network,
    x: np.ndarray,
    labels: np.ndarray,
    cfg: AttackConfig,
    kind: Union[AttackKind, str] = AttackKind.PGD,
    indices: Optional[Sequence[int]] = None,
) -> List[AttackOutcome]:
    """Attack the rows of `x`; `indices` name the rows for the random-start streams."""

    kind = AttackKind(kind)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if x.shape[0] != labels.size:
        raise RejectedInputError("one label per attacked point is required")
    if labels.size and (labels.min() < 1 or labels.max() > net.class_count):
        raise RejectedInputError(f"labels must lie in 1..{net.class_count}")
    if kind is AttackKind.MT and net.class_count < 2:
        raise RejectedInputError("the multi-targeted attack needs at least two classes")
    _check_box(x)
    indices = np.arange(x.shape[0]) if indices is None else np.asarray(indices)

    clean_ok = is_correct(net.logits(x), labels)
    attack_round = _pgd_round if kind is AttackKind.PGD else _mt_round
    best = None
    for restart in range(cfg.restarts):
        if best is None:
            best = tuple(a.copy() for a in attack_round(net, x, labels, indices, cfg, restart))
            continue
        pending = ~best[2]
        if not pending.any():
            break
        _merge(best, attack_round(net, x, labels, indices, cfg, restart), pending)

    points, values, fooled = best
    check_feasible(points, x, cfg.epsilon)
    return [
        AttackOutcome(points[i], bool(clean_ok[i] and fooled[i]), float(values[i]), bool(clean_ok[i]))
        for i in range(x.shape[0])
    ]


def pgd(net: Network, x, y: int, cfg: AttackConfig) -> AttackOutcome:
    """Untargeted PGD on the cross-entropy of label `y`."""
    return attack_batch(net, np.asarray(x, dtype=np.float64)[None, :], [y], cfg, AttackKind.PGD)[0]


def multi_targeted(net: Network, x, y: int, cfg: AttackConfig) -> AttackOutcome:
    """Margin ascent towards every wrong class; the best outcome over targets is kept."""
    return attack_batch(net, np.asarray(x, dtype=np.float64)[None, :], [y], cfg, AttackKind.MT)[0]


# DATASET SWEEPS

_ATTACK: Dict[str, Any] = {}


def _init_attack(net, cfg, kind) -> None:
    _ATTACK.update(net=net, cfg=cfg, kind=kind)


def _attack_block(task) -> List[AttackOutcome]:
    start, x, labels = task
    return attack_batch(
        _ATTACK["net"],
        x,
        labels,
        _ATTACK["cfg"],
        _ATTACK["kind"],
        indices=np.arange(start, start + x.shape[0]),
    )


def attack_dataset(
    net: Network,
    ds: Dataset,
    cfg: AttackConfig,
    kind: Union[AttackKind, str] = AttackKind.PGD,
    threads: int = 1,
    progress: bool = False,
) -> List[AttackOutcome]:
    """One outcome per example of `ds`, in dataset order."""

    kind = AttackKind(kind)
    if ds.dim != net.input_dim:
        raise RejectedInputError(f"dataset dimension {ds.dim} != network input {net.input_dim}")
    tasks = [
        (start, ds.features[start : start + ATTACK_BLOCK], ds.labels[start : start + ATTACK_BLOCK])
        for start in range(0, ds.n, ATTACK_BLOCK)
    ]
    logger.debug("Running %s (epsilon=%g) on %d examples", kind.value, cfg.epsilon, ds.n)

    outcomes: List[AttackOutcome] = []
    bar = tqdm(total=ds.n, desc=kind.value, unit="example", disable=not progress)
    if threads <= 1:
        _init_attack(net, cfg, kind)
        try:
            for task in tasks:
                outcomes.extend(_attack_block(task))
                bar.update(task[1].shape[0])
        finally:
            _ATTACK.clear()
    else:
        with ProcessPoolExecutor(
            max_workers=threads, initializer=_init_attack, initargs=(net, cfg, kind)
        ) as pool:
            for task, result in zip(tasks, pool.map(_attack_block, tasks)):
                outcomes.extend(result)
                bar.update(task[1].shape[0])
    bar.close()
    return outcomes


def adv_accuracy(
    net: Network,
    ds: Dataset,
    cfg: AttackConfig,
    kind: Union[AttackKind, str] = AttackKind.PGD,
    threads: int = 1,
) -> float:
    """Share of examples classified correctly on which the attack fails."""
    if ds.n == 0:
        return 0.0
    outcomes = attack_dataset(net, ds, cfg, kind, threads=threads)
    return float(np.mean([o.clean_correct and not o.success for o in outcomes]))


def clean_accuracy(net: Network, ds: Dataset) -> float:
    if ds.n == 0:
        return 0.0
    return float(np.mean(is_correct(net.logits(ds.features), ds.labels)))


def compare_attacks(
    net: Network, ds: Dataset, cfg: AttackConfig, threads: int = 1
) -> Dict[str, float]:
    """Clean accuracy next to the PGD and multi-targeted adversarial accuracies."""
    result = {
        "epsilon": float(cfg.epsilon),
        "clean": clean_accuracy(net, ds),
        "pgd": adv_accuracy(net, ds, cfg, AttackKind.PGD, threads),
        "mt": adv_accuracy(net, ds, cfg, AttackKind.MT, threads),
    }
    logger.info(
        "epsilon=%g: clean %.4f, PGD %.4f, MT %.4f",
        cfg.epsilon, result["clean"], result["pgd"], result["mt"],
    )
    return result

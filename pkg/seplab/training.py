"""Training loop, evaluation protocol and named recipes.

`train` runs mini-batch SGD with momentum on any registered objective. All
randomness is derived from the configuration seed: network initialization,
the shuffle of every epoch and, per mini-batch, the inner search and the
dropout masks. Identical configurations therefore give bit-identical
parameters.
"""

import inspect
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .attacks import AttackConfig, AttackKind, adv_accuracy, clean_accuracy
from .datasets import Dataset, concat
from .errors import DivergenceError, RejectedInputError
from .lipschitz import LipschitzConfig, empirical_lipschitz
from .network import Mode, Network, ParamGrads, init_network, mlp_specs
from .objectives import ObjectiveStrategy, get_strategy
from .rng import RandomStream

logger = logging.getLogger(__name__)

# stream keys under the configuration seed
_SHUFFLE = 1
_BATCH = 2

SPIRAL_EPSILON = 0.01


@dataclass(frozen=True)
class TrainMethod:
    """Objective name, its strengths and the schedule of its inner search.

    Args:
        kind (str): Registered objective (`natural`, `at`, `trades`, `rst`, `gr`, `llr`, ...).
        params (Mapping[str, float]): Keyword arguments of the objective (e.g. beta, lam).
        inner (AttackConfig, optional): Inner maximization schedule for objectives that have one.
    """

    kind: str = "natural"
    params: Mapping[str, float] = field(default_factory=dict)
    inner: Optional[AttackConfig] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", self.kind.lower())
        object.__setattr__(self, "params", dict(self.params))
        self.strategy()

    def strategy(self) -> ObjectiveStrategy:
        cls = get_strategy(self.kind)
        kwargs: Dict[str, Any] = dict(self.params)
        accepted = inspect.signature(cls).parameters
        if self.inner is not None and "inner" in accepted:
            kwargs["inner"] = self.inner
        unknown = sorted(set(kwargs) - set(accepted))
        if unknown:
            raise RejectedInputError(f"objective {self.kind!r} takes no parameter {unknown[0]!r}")
        return cls(**kwargs)

    def to_dict(self) -> Dict[str, Any]:
        return self.strategy().to_dict()


@dataclass(frozen=True)
class TrainConfig:
    method: TrainMethod = field(default_factory=TrainMethod)
    hidden: Tuple[int, ...] = (64, 64)
    epochs: int = 200
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    decay_epochs: Tuple[int, ...] = (100, 150)
    decay_factor: float = 0.1
    dropout_rate: float = 0.0
    seed: int = 0
    include_test_in_train: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))
        if self.epochs < 0:
            raise RejectedInputError("epochs must be non-negative")
        if self.batch_size < 1:
            raise RejectedInputError("batch_size must be at least 1")
        if not self.lr > 0:
            raise RejectedInputError("lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise RejectedInputError("momentum must lie in [0, 1)")
        if any(b <= a for a, b in zip(self.decay_epochs, self.decay_epochs[1:])):
            raise RejectedInputError("decay_epochs must be strictly increasing")
        if not self.decay_factor > 0:
            raise RejectedInputError("decay_factor must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise RejectedInputError("dropout_rate must lie in [0, 1)")
        if any(w < 1 for w in self.hidden):
            raise RejectedInputError("hidden widths must be at least 1")

    def lr_at(self, epoch: int) -> float:
        """Learning rate of a 0-based epoch: lr times decay_factor per passed decay epoch."""
        passed = sum(1 for e in self.decay_epochs if e <= epoch)
        return self.lr * self.decay_factor**passed

    def to_dict(self) -> Dict[str, Any]:
        document = asdict(self)
        document["method"] = self.method.to_dict()
        document["hidden"] = list(self.hidden)
        document["decay_epochs"] = list(self.decay_epochs)
        return document


@dataclass(frozen=True)
class HistoryRow:
    epoch: int
    lr: float
    loss: float
    train_acc: float


HISTORY_COLUMNS = ("epoch", "lr", "loss", "train_acc")


class MomentumSGD:
    """v <- momentum * v + g; theta <- theta - lr * v."""

    def __init__(self, net: Network, momentum: float) -> None:
        self.net = net
        self.momentum = momentum
        self.velocity: ParamGrads = [
            (np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in net.layers
        ]

    def step(self, grads: ParamGrads, lr: float) -> None:
        self.velocity = [
            (self.momentum * vw + gw, self.momentum * vb + gb)
            for (vw, vb), (gw, gb) in zip(self.velocity, grads)
        ]
        self.net.apply_update([(-lr * vw, -lr * vb) for vw, vb in self.velocity])


def training_pool(cfg: TrainConfig, train_ds: Dataset, test_ds: Optional[Dataset]) -> Dataset:
    if test_ds is not None and test_ds.dim != train_ds.dim:
        raise RejectedInputError(f"dimension mismatch: train {train_ds.dim} != test {test_ds.dim}")
    if not cfg.include_test_in_train:
        return train_ds
    if test_ds is None:
        raise RejectedInputError("include_test_in_train needs a test set")
    logger.info("Training with access to the test set (%d extra examples)", test_ds.n)
    return concat(train_ds, test_ds)


def train(
    cfg: TrainConfig,
    train_ds: Dataset,
    test_ds: Optional[Dataset] = None,
    progress: bool = False,
) -> Tuple[Network, List[HistoryRow]]:
    """Fit a ReLU network to `train_ds` with the configured objective.

    Raises:
        DivergenceError: A mini-batch produced a non-finite loss.
    """

    pool = training_pool(cfg, train_ds, test_ds)
    strategy = cfg.method.strategy()
    net = init_network(
        mlp_specs(cfg.hidden, pool.class_count), pool.dim, seed=cfg.seed, dropout_rate=cfg.dropout_rate
    )
    optimizer = MomentumSGD(net, cfg.momentum)
    root = RandomStream(cfg.seed)
    logger.info("Training %r on %d examples for %d epochs", strategy, pool.n, cfg.epochs)

    history: List[HistoryRow] = []
    for epoch in tqdm(range(cfg.epochs), desc="train", unit="epoch", disable=not progress):
        lr = cfg.lr_at(epoch)
        order = root.spawn(_SHUFFLE, epoch).permutation(pool.n)
        total = 0.0
        for b, start in enumerate(range(0, pool.n, cfg.batch_size)):
            rows = order[start : start + cfg.batch_size]
            batch = (pool.features[rows], pool.labels[rows])
            loss, grads = strategy.loss(net, batch, Mode.TRAIN, root.spawn(_BATCH, epoch, b))
            if not math.isfinite(loss):
                raise DivergenceError(epoch, b, loss)
            optimizer.step(grads, lr)
            # an overflowing update would only surface in the next forward pass
            if not all(np.isfinite(p).all() for p in net.parameters()):
                raise DivergenceError(epoch, b, loss)
            total += loss * rows.size

        row = HistoryRow(epoch, lr, total / pool.n, clean_accuracy(net, pool))
        history.append(row)
        logger.info(
            "epoch %d: lr=%.4g loss=%.6f train_acc=%.4f", row.epoch, row.lr, row.loss, row.train_acc
        )
    return net, history


# EVALUATION

TABLE_COLUMNS = (
    "method",
    "train_acc",
    "test_acc",
    "adv_train_acc",
    "adv_test_acc",
    "test_lipschitz",
    "gap",
    "adv_gap",
)
REPORT_COLUMNS = TABLE_COLUMNS + ("train_lipschitz",)


@dataclass(frozen=True)
class ExperimentReport:
    method: str
    train_acc: float
    test_acc: float
    adv_train_acc: float
    adv_test_acc: float
    test_lipschitz: float
    train_lipschitz: float

    @property
    def gap(self) -> float:
        return self.train_acc - self.test_acc

    @property
    def adv_gap(self) -> float:
        return self.adv_train_acc - self.adv_test_acc

    def row(self) -> Dict[str, Any]:
        """Values keyed by `REPORT_COLUMNS`, in that order."""
        return {column: getattr(self, column) for column in REPORT_COLUMNS}

    @classmethod
    def from_row(cls, row: Mapping[str, Any]) -> "ExperimentReport":
        return cls(
            method=str(row["method"]),
            **{
                k: float(row[k])
                for k in ("train_acc", "test_acc", "adv_train_acc", "adv_test_acc", "test_lipschitz", "train_lipschitz")
            },
        )


def evaluate(
    net: Network,
    train_ds: Dataset,
    test_ds: Dataset,
    attack: AttackConfig,
    lip: LipschitzConfig,
    method: str = "",
    kind: AttackKind = AttackKind.PGD,
    threads: int = 1,
) -> ExperimentReport:
    """Clean and adversarial accuracies on both splits plus empirical Lipschitz constants."""
    report = ExperimentReport(
        method=method,
        train_acc=clean_accuracy(net, train_ds),
        test_acc=clean_accuracy(net, test_ds),
        adv_train_acc=adv_accuracy(net, train_ds, attack, kind, threads),
        adv_test_acc=adv_accuracy(net, test_ds, attack, kind, threads),
        test_lipschitz=empirical_lipschitz(net, test_ds, lip, threads).mean,
        train_lipschitz=empirical_lipschitz(net, train_ds, lip, threads).mean,
    )
    logger.info(
        "%s: acc %.4f/%.4f, adv %.4f/%.4f, lipschitz %.4g",
        method or "model", report.train_acc, report.test_acc,
        report.adv_train_acc, report.adv_test_acc, report.test_lipschitz,
    )
    return report


# RECIPES


def recipe(name: str, epsilon: float = SPIRAL_EPSILON, seed: int = 0) -> TrainConfig:
    """Named desk-scale training setups on the spiral data.

    Inner searches use the evaluation schedule (epsilon / 5, 10 steps) from
    a random start.
    """
    inner = AttackConfig(epsilon=epsilon, random_start=True, seed=seed)
    methods = {
        "spiral-natural": TrainMethod("natural"),
        "spiral-at": TrainMethod("at", inner=inner),
        "spiral-trades": TrainMethod("trades", {"beta": 6.0}, inner),
        "spiral-rst": TrainMethod("rst", {"lam": 2.0}, inner),
        "spiral-gr": TrainMethod("gr", {"beta": 1e-4}),
        "spiral-llr": TrainMethod("llr", {"lambda_g": 1e-2}, inner),
    }
    if name == "spiral-rst-with-test":
        return TrainConfig(method=methods["spiral-rst"], seed=seed, include_test_in_train=True)
    if name not in methods:
        raise RejectedInputError(
            f"unknown recipe {name!r}, expected one of {', '.join(recipe_names())}"
        )
    return TrainConfig(method=methods[name], seed=seed)


def recipe_names() -> Sequence[str]:
    return (
        "spiral-natural",
        "spiral-at",
        "spiral-trades",
        "spiral-rst",
        "spiral-gr",
        "spiral-llr",
        "spiral-rst-with-test",
    )

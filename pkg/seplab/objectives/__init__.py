"""Training objectives.

Every objective is an `ObjectiveStrategy`. The six built-in ones are
registered under the `seplab.objectives` entry-point group as well, so other
packages can plug in their own objective by declaring an entry point in that
group that points at a module (or class) defining a strategy.
"""

import inspect
import logging
from importlib.metadata import entry_points
from typing import Dict, List, Type

from ..errors import RejectedInputError
from .adversarial import AdversarialStrategy, RobustSelfTrainingStrategy, loss_at, loss_rst
from .base import ObjectiveStrategy, kl_divergence, softmax_cross_entropy
from .gradient import GradientNormStrategy, loss_gr
from .linearity import LocalLinearityStrategy, loss_llr
from .natural import NaturalStrategy, loss_natural
from .trades import TradesStrategy, loss_trades

logger = logging.getLogger(__name__)

ENTRY_POINT_GROUP = "seplab.objectives"

BUILTIN: Dict[str, Type[ObjectiveStrategy]] = {
    cls.name: cls
    for cls in (
        NaturalStrategy,
        AdversarialStrategy,
        TradesStrategy,
        RobustSelfTrainingStrategy,
        GradientNormStrategy,
        LocalLinearityStrategy,
    )
}


def _entry_points() -> list:
    found = entry_points()
    if hasattr(found, "select"):
        return list(found.select(group=ENTRY_POINT_GROUP))
    return list(found.get(ENTRY_POINT_GROUP, []))


def _strategy_in(target, name: str) -> Type[ObjectiveStrategy]:
    if inspect.isclass(target) and issubclass(target, ObjectiveStrategy):
        return target
    for _, member in inspect.getmembers(target, inspect.isclass):
        if issubclass(member, ObjectiveStrategy) and member.name == name:
            return member
    raise RejectedInputError(f"entry point {name!r} defines no objective strategy")


def available() -> List[str]:
    names = set(BUILTIN)
    names.update(ep.name for ep in _entry_points())
    return sorted(names)


def get_strategy(name: str) -> Type[ObjectiveStrategy]:
    """Strategy class registered as `name`; built-ins win over entry points."""
    key = name.lower()
    if key in BUILTIN:
        return BUILTIN[key]
    for ep in _entry_points():
        if ep.name == key:
            logger.debug("Loading objective %r from %s", key, ep.value)
            return _strategy_in(ep.load(), key)
    raise RejectedInputError(
        f"unknown objective {name!r}, expected one of {', '.join(available())}"
    )


def create_strategy(name: str, **params) -> ObjectiveStrategy:
    return get_strategy(name)(**params)


__all__ = [
    "AdversarialStrategy",
    "GradientNormStrategy",
    "LocalLinearityStrategy",
    "NaturalStrategy",
    "ObjectiveStrategy",
    "RobustSelfTrainingStrategy",
    "TradesStrategy",
    "available",
    "create_strategy",
    "get_strategy",
    "kl_divergence",
    "loss_at",
    "loss_gr",
    "loss_llr",
    "loss_natural",
    "loss_rst",
    "loss_trades",
    "softmax_cross_entropy",
]

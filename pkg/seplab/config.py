"""YAML run descriptions and user defaults.

A run file maps onto `TrainConfig`:

    method:
      kind: trades
      beta: 6.0
      inner: {epsilon: 0.01, steps: 10, random_start: true}
    network:
      hidden: [64, 64]
      dropout_rate: 0.2
    epochs: 200
    batch_size: 64
    lr: 0.05
    momentum: 0.9
    decay_epochs: [100, 150]
    decay_factor: 0.1
    seed: 0
    include_test_in_train: false
    attack: {epsilon: 0.01}
    lipschitz: {epsilon: 0.01}

`attack` and `lipschitz` describe the evaluation that follows training.
Unknown keys are rejected.
"""

import logging
import os
from dataclasses import dataclass, fields
from typing import Any, Dict, Mapping, Optional, Union

import yaml

from .attacks import AttackConfig
from .errors import DataFormatError, RejectedInputError
from .lipschitz import LipschitzConfig
from .training import TrainConfig, TrainMethod

logger = logging.getLogger(__name__)

USER_CONFIG = "~/.seplab.yml"
USER_CONFIG_ENV = "SEPLAB_CONFIG"

_TOP_LEVEL = {
    "method",
    "network",
    "epochs",
    "batch_size",
    "lr",
    "momentum",
    "decay_epochs",
    "decay_factor",
    "seed",
    "include_test_in_train",
    "attack",
    "lipschitz",
}
_NETWORK = {"hidden", "dropout_rate"}


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig
    attack: Optional[AttackConfig] = None
    lipschitz: Optional[LipschitzConfig] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "train": self.train.to_dict(),
            "attack": self.attack.to_dict() if self.attack else None,
            "lipschitz": self.lipschitz.to_dict() if self.lipschitz else None,
        }


@dataclass(frozen=True)
class UserDefaults:
    data_dir: Optional[str] = None
    threads: int = 1


def _reject_unknown(section: str, given: Mapping[str, Any], allowed) -> None:
    for key in given:
        if key not in allowed:
            where = f" in section {section!r}" if section else ""
            raise RejectedInputError(f"unknown configuration key {key!r}{where}")


def _section(document: Mapping[str, Any], key: str) -> Dict[str, Any]:
    value = document.get(key) or {}
    if not isinstance(value, Mapping):
        raise RejectedInputError(f"configuration section {key!r} must be a mapping")
    return dict(value)


def _dataclass_from(cls, section: str, values: Mapping[str, Any]):
    _reject_unknown(section, values, {f.name for f in fields(cls)})
    try:
        return cls(**values)
    except TypeError as e:
        raise RejectedInputError(f"invalid section {section!r}: {e}") from None


def parse_method(values: Mapping[str, Any]) -> TrainMethod:
    values = dict(values)
    kind = values.pop("kind", "natural")
    inner = values.pop("inner", None)
    if inner is not None:
        inner = _dataclass_from(AttackConfig, "method.inner", inner)
    return TrainMethod(str(kind), values, inner)


def parse_run_config(document: Optional[Mapping[str, Any]]) -> RunConfig:
    """Build a `RunConfig` from a parsed YAML document."""

    document = dict(document or {})
    _reject_unknown("", document, _TOP_LEVEL)
    network = _section(document, "network")
    _reject_unknown("network", network, _NETWORK)

    options: Dict[str, Any] = {
        k: document[k] for k in _TOP_LEVEL - {"method", "network", "attack", "lipschitz"} if k in document
    }
    options.update(network)
    train = TrainConfig(method=parse_method(_section(document, "method")), **options)

    attack = _section(document, "attack")
    lipschitz = _section(document, "lipschitz")
    return RunConfig(
        train,
        _dataclass_from(AttackConfig, "attack", attack) if attack else None,
        _dataclass_from(LipschitzConfig, "lipschitz", lipschitz) if lipschitz else None,
    )


def load_run_config(path: Union[str, "os.PathLike[str]"]) -> RunConfig:
    with open(path, "r") as file:
        try:
            document = yaml.safe_load(file)
        except yaml.YAMLError as e:
            raise DataFormatError(f"invalid YAML: {e}", field="yaml", path=str(path)) from None
    if document is not None and not isinstance(document, Mapping):
        raise DataFormatError("a run file must hold a mapping", field="root", path=str(path))
    return parse_run_config(document)


def load_user_defaults(path: Optional[str] = None) -> UserDefaults:
    """Read `~/.seplab.yml` (or `$SEPLAB_CONFIG`); a missing file gives the defaults."""
    path = os.path.expanduser(path or os.environ.get(USER_CONFIG_ENV, USER_CONFIG))
    if not os.path.exists(path):
        return UserDefaults()
    with open(path, "r") as file:
        config = yaml.safe_load(file) or {}
    if not isinstance(config, Mapping):
        raise DataFormatError("user defaults must hold a mapping", field="root", path=path)
    defaults = _dataclass_from(UserDefaults, "user defaults", config)
    logger.debug("Loaded user defaults from %s", path)
    return defaults

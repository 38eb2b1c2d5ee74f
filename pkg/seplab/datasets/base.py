from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence

import numpy as np

from ..errors import RejectedInputError


@dataclass(frozen=True)
class Dataset:
    """Labeled feature matrix in the unit box.

    Args:
        features (np.ndarray): n x d matrix with entries in [0, 1].
        labels (np.ndarray): n labels in 1..class_count.
        class_count (int): Number of classes C.
        name (str): Free text tag.
        quantum (int, optional): 255 when the features are 8-bit pixels divided by 255.
        attrs (dict): Extra facts about the data, e.g. a generator's rescale transform.
    """

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    name: str = ""
    quantum: Optional[int] = None
    attrs: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        features = np.array(self.features, dtype=np.float64, copy=True)
        labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        if features.ndim != 2:
            raise RejectedInputError(f"features must be a matrix, got shape {features.shape}")
        n = features.shape[0]
        if n < 1:
            raise RejectedInputError("a dataset needs at least one example")
        if labels.shape[0] != n:
            raise RejectedInputError(f"{labels.shape[0]} labels for {n} examples")
        if self.class_count < 1:
            raise RejectedInputError("class_count must be positive")
        if labels.min() < 1 or labels.max() > self.class_count:
            raise RejectedInputError(f"labels must lie in 1..{self.class_count}")
        if not np.isfinite(features).all():
            raise RejectedInputError("features must be finite")
        if features.size and (features.min() < 0.0 or features.max() > 1.0):
            raise RejectedInputError("features must lie in [0, 1]")

        features.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "attrs", dict(self.attrs))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        """Number of examples per class, index 0 holding class 1."""
        return np.bincount(self.labels - 1, minlength=self.class_count)

    def units(self) -> np.ndarray:
        """Features in integer units of 1/quantum (only for quantized data)."""
        if self.quantum is None:
            raise RejectedInputError(f"dataset {self.name!r} is not quantized")
        return np.rint(self.features * self.quantum).astype(np.int16)

    def take(self, indices: Sequence[int], name: Optional[str] = None) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.features[indices],
            self.labels[indices],
            self.class_count,
            name=self.name if name is None else name,
            quantum=self.quantum,
            attrs=self.attrs,
        )

    def with_labels(self, labels: np.ndarray, name: Optional[str] = None) -> "Dataset":
        return Dataset(
            self.features,
            labels,
            self.class_count,
            name=self.name if name is None else name,
            quantum=self.quantum,
            attrs=self.attrs,
        )

    def __repr__(self) -> str:
        return (
            f"Dataset(name={self.name!r}, n={self.n}, d={self.dim}, "
            f"C={self.class_count}, quantum={self.quantum})"
        )

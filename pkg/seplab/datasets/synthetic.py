"""Synthetic datasets: the two-arm spiral and uniform blobs around centers."""

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from ..errors import RejectedInputError
from ..rng import RandomStream
from .base import Dataset

# class 1 is the positive arm, class 2 the negative arm
POSITIVE = 1
NEGATIVE = 2


@dataclass(frozen=True)
class SpiralParams:
    n_per_class: int = 500
    x_range_max: float = 4.33 * math.pi
    noise: float = 0.75
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_per_class < 1:
            raise RejectedInputError("n_per_class must be at least 1")
        if self.noise < 0:
            raise RejectedInputError("noise must be non-negative")
        if self.x_range_max < 0:
            raise RejectedInputError("x_range_max must be non-negative")


def spiral_point(x, positive: bool, u1=0.0, u2=0.0) -> np.ndarray:
    """Raw (unscaled) spiral coordinates for parameter(s) `x`."""
    x = np.asarray(x, dtype=np.float64)
    sign = -1.0 if positive else 1.0
    return np.stack([-x * np.cos(x) + u1, sign * x * np.sin(x) + u2], axis=-1)


def spiral_transform(p: SpiralParams) -> Tuple[float, float]:
    """(offset, scale) mapping raw spiral coordinates into [0, 1]^2.

    Both axes share one scale so distances keep their proportions; the
    bounds follow from |x cos x|, |x sin x| <= x_range_max and u in [0, noise].
    """
    lo = -p.x_range_max
    hi = p.x_range_max + p.noise
    span = hi - lo
    return lo, (1.0 / span if span > 0 else 1.0)


def gen_spiral(p: SpiralParams) -> Dataset:
    """Two interleaved spiral arms, rescaled into the unit square.

    For each sample x ~ U[0, x_range_max] and u1, u2 ~ U[0, noise]; the
    negative arm is (-x cos x + u1, x sin x + u2) and the positive arm
    (-x cos x + u1, -x sin x + u2).
    """

    stream = RandomStream(p.seed)
    parts = []
    labels = []
    for label in (POSITIVE, NEGATIVE):
        x = stream.uniform(0.0, p.x_range_max, p.n_per_class)
        u = stream.uniform(0.0, p.noise, (p.n_per_class, 2)) if p.noise > 0 else np.zeros((p.n_per_class, 2))
        parts.append(spiral_point(x, label == POSITIVE, u[:, 0], u[:, 1]))
        labels.append(np.full(p.n_per_class, label))

    offset, scale = spiral_transform(p)
    features = np.clip((np.concatenate(parts) - offset) * scale, 0.0, 1.0)
    return Dataset(
        features,
        np.concatenate(labels),
        2,
        name=f"spiral(n={p.n_per_class},noise={p.noise},seed={p.seed})",
        attrs={"offset": offset, "scale": scale},
    )


def unscale_spiral(ds: Dataset) -> np.ndarray:
    """Invert the rescale transform stored by `gen_spiral`."""
    try:
        offset, scale = ds.attrs["offset"], ds.attrs["scale"]
    except KeyError:
        raise RejectedInputError(f"{ds.name!r} carries no spiral transform") from None
    return ds.features / scale + offset


def gen_blobs(
    centers: Sequence[Sequence[float]],
    spread: float,
    n_per_class: int,
    seed: int = 0,
) -> Dataset:
    """Uniform cubes of half-width `spread` around each center, one class per center.

    Points are clipped to the unit box.
    """

    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[0] < 2:
        raise RejectedInputError("gen_blobs needs at least two centers")
    if spread < 0:
        raise RejectedInputError("spread must be non-negative")
    if n_per_class < 1:
        raise RejectedInputError("n_per_class must be at least 1")

    stream = RandomStream(seed)
    k, d = centers.shape
    noise = stream.uniform(-spread, spread, (k, n_per_class, d)) if spread > 0 else np.zeros((k, n_per_class, d))
    features = np.clip(centers[:, None, :] + noise, 0.0, 1.0).reshape(k * n_per_class, d)
    labels = np.repeat(np.arange(1, k + 1), n_per_class)
    return Dataset(
        features,
        labels,
        k,
        name=f"blobs(k={k},spread={spread},seed={seed})",
        attrs={"centers": centers.tolist(), "spread": spread},
    )

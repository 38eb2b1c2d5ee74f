"""Deterministic subsampling, splitting and relabeling of datasets."""

from typing import Tuple

import numpy as np

from ..errors import RejectedInputError
from ..rng import RandomStream
from .base import Dataset


def _stratified_quota(counts: np.ndarray, n: int) -> np.ndarray:
    """Per-class sample sizes proportional to `counts` (largest remainder)."""
    total = counts.sum()
    exact = counts * n / total
    quota = np.floor(exact).astype(np.int64)
    remainder = exact - quota
    # stable sort keeps the lowest class first among equal remainders
    for c in np.argsort(-remainder, kind="stable")[: n - quota.sum()]:
        quota[c] += 1
    return np.minimum(quota, counts)


def subsample(ds: Dataset, n: int, seed: int = 0, stratified: bool = False) -> Dataset:
    """Draw `n` rows without replacement.

    With `stratified`, each class keeps its share of the rows to within one
    example.
    """

    if not 1 <= n <= ds.n:
        raise RejectedInputError(f"cannot draw {n} rows from a dataset of {ds.n}")

    stream = RandomStream(seed)
    if not stratified:
        return ds.take(stream.permutation(ds.n)[:n])

    quota = _stratified_quota(ds.class_counts(), n)
    chosen = []
    for c, k in enumerate(quota):
        members = np.flatnonzero(ds.labels == c + 1)
        chosen.append(members[stream.spawn(c).permutation(members.size)[:k]])
    picked = np.concatenate(chosen)
    return ds.take(picked[stream.permutation(picked.size)])


def random_relabel(ds: Dataset, seed: int = 0) -> Dataset:
    """Replace every label with an i.i.d. uniform draw from 1..C."""
    labels = RandomStream(seed).integers(1, ds.class_count + 1, ds.n)
    return ds.with_labels(labels, name=f"{ds.name}[random labels, seed={seed}]")


def concat(a: Dataset, b: Dataset) -> Dataset:
    """Rows of `a` followed by rows of `b`."""
    if a.dim != b.dim:
        raise RejectedInputError(f"dimension mismatch: {a.dim} != {b.dim}")
    if a.class_count != b.class_count:
        raise RejectedInputError(
            f"class count mismatch: {a.class_count} != {b.class_count}"
        )
    return Dataset(
        np.concatenate([a.features, b.features]),
        np.concatenate([a.labels, b.labels]),
        a.class_count,
        name=f"{a.name}+{b.name}",
        quantum=a.quantum if a.quantum == b.quantum else None,
        attrs=a.attrs,
    )


def split(
    ds: Dataset, fraction: float, seed: int = 0, stratified: bool = True
) -> Tuple[Dataset, Dataset]:
    """Split into (first, second) with round(fraction * n) rows in the first part."""
    if not 0.0 < fraction < 1.0:
        raise RejectedInputError("fraction must lie strictly between 0 and 1")
    n_first = int(round(fraction * ds.n))
    if not 1 <= n_first < ds.n:
        raise RejectedInputError(f"fraction {fraction} leaves an empty part")

    shuffled = subsample(ds, ds.n, seed=seed, stratified=False)
    if not stratified:
        return (
            shuffled.take(np.arange(n_first), name=f"{ds.name}[train]"),
            shuffled.take(np.arange(n_first, ds.n), name=f"{ds.name}[test]"),
        )

    quota = _stratified_quota(shuffled.class_counts(), n_first)
    first = np.zeros(ds.n, dtype=bool)
    for c, k in enumerate(quota):
        first[np.flatnonzero(shuffled.labels == c + 1)[:k]] = True
    return (
        shuffled.take(np.flatnonzero(first), name=f"{ds.name}[train]"),
        shuffled.take(np.flatnonzero(~first), name=f"{ds.name}[test]"),
    )

"""Distances, ball projections and domain clipping.

All operations accept numpy arrays and never modify their arguments.
Feature arithmetic is done in 64-bit floats; integer inputs (pixel data
expressed in units of 1/255) stay integral so Chebyshev distances are exact.
"""

from enum import Enum
from typing import Optional, Union

import numpy as np

from .errors import RejectedInputError


class Metric(str, Enum):
    LINF = "linf"
    L2 = "l2"

    @classmethod
    def parse(cls, value: Union[str, "Metric"]) -> "Metric":
        if isinstance(value, Metric):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise RejectedInputError(
                f"unknown metric {value!r}, expected one of "
                + ", ".join(m.value for m in cls)
            ) from None


class _Exceeded:
    """Marker returned by `dist_early_exit` when the bound is reached."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "EXCEEDED"

    def __bool__(self) -> bool:
        return False


EXCEEDED = _Exceeded()

EARLY_EXIT_CHUNK = 32


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise RejectedInputError(
            f"dimension mismatch: {a.shape[-1]} != {b.shape[-1]}"
        )


def _wide(diff: np.ndarray) -> np.ndarray:
    # squares of integer gaps need more room than the operands
    if np.issubdtype(diff.dtype, np.integer):
        return diff.astype(np.int64)
    return diff


def dist(metric: Union[str, Metric], a, b) -> float:
    """Distance between two vectors.

    Args:
        metric (Metric): `linf` or `l2`.
        a, b (array-like): Vectors of equal dimension.

    Returns:
        float: The distance.
    """
    metric = Metric.parse(metric)
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise RejectedInputError(f"dimension mismatch: {a.shape} != {b.shape}")
    if a.size == 0:
        return 0.0
    diff = np.abs(_wide(a.astype(np.result_type(a, b, np.int16)) - b))
    if metric is Metric.LINF:
        return float(diff.max())
    return float(np.sqrt(np.sum(diff * diff, dtype=np.float64)))


def dist_early_exit(
    a,
    b,
    bound: float,
    metric: Union[str, Metric] = Metric.LINF,
    chunk: int = EARLY_EXIT_CHUNK,
):
    """Distance that stops as soon as it cannot be below `bound`.

    Coordinates are scanned in chunks; the running Chebyshev maximum (or
    running sum of squares for L2) only grows, so once it reaches the bound
    the remaining coordinates are skipped.

    Returns:
        float or EXCEEDED: The exact distance when it is < bound, EXCEEDED otherwise.
    """
    metric = Metric.parse(metric)
    if bound < 0:
        raise RejectedInputError("bound must be non-negative")
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise RejectedInputError(f"dimension mismatch: {a.shape} != {b.shape}")

    limit = bound if metric is Metric.LINF else bound * bound
    running = 0.0
    for start in range(0, a.shape[-1], chunk):
        gap = np.abs(
            _wide(a[start : start + chunk].astype(np.result_type(a, b, np.int16)))
            - b[start : start + chunk]
        )
        if metric is Metric.LINF:
            if gap.size:
                running = max(running, float(gap.max()))
        else:
            running += float(np.sum(gap * gap, dtype=np.float64))
        if running >= limit:
            return EXCEEDED

    value = running if metric is Metric.LINF else float(np.sqrt(running))
    return value if value < bound else EXCEEDED


def dist_early_exit_batch(
    query: np.ndarray,
    references: np.ndarray,
    bound: float,
    metric: Union[str, Metric] = Metric.LINF,
    rows: Optional[np.ndarray] = None,
    order: Optional[np.ndarray] = None,
    inclusive: bool = False,
    chunk: int = EARLY_EXIT_CHUNK,
) -> np.ndarray:
    """`dist_early_exit` of one query against many reference rows.

    Args:
        query (np.ndarray): Vector of dimension d.
        references (np.ndarray): Matrix with d columns.
        bound (float): Pruning bound.
        metric (Metric): `linf` or `l2`.
        rows (np.ndarray, optional): Reference row indices to consider; all rows by default.
        order (np.ndarray, optional): Coordinate visiting order; any permutation gives the same result.
        inclusive (bool): Keep rows whose distance equals the bound.
        chunk (int): Number of coordinates examined per pass.

    Returns:
        np.ndarray: One distance per considered row, `inf` where the bound was exceeded.
    """
    metric = Metric.parse(metric)
    _check_same_shape(query, references)
    if rows is None:
        rows = np.arange(references.shape[0])
    if order is None:
        order = np.arange(references.shape[1])

    limit = bound if metric is Metric.LINF else bound * bound
    integral = np.issubdtype(references.dtype, np.integer) and np.issubdtype(
        query.dtype, np.integer
    )
    acc_dtype = np.int64 if integral else np.float64
    running = np.zeros(rows.shape[0], dtype=acc_dtype)
    alive = np.arange(rows.shape[0])
    signed_query = query.astype(np.int32 if integral else np.float64)

    for start in range(0, order.shape[0], chunk):
        if not alive.size:
            break
        cols = order[start : start + chunk]
        block = references[np.ix_(rows[alive], cols)]
        gap = np.abs(block.astype(signed_query.dtype) - signed_query[cols])
        if metric is Metric.LINF:
            running[alive] = np.maximum(running[alive], gap.max(axis=1))
        else:
            gap = gap.astype(acc_dtype)
            running[alive] += np.sum(gap * gap, axis=1)
        current = running[alive]
        keep = current <= limit if inclusive else current < limit
        alive = alive[keep]

    result = np.full(rows.shape[0], np.inf)
    values = running[alive].astype(np.float64)
    result[alive] = values if metric is Metric.LINF else np.sqrt(values)
    if not inclusive and metric is Metric.L2:
        # rounding of the square root can land exactly on the bound
        result[result >= bound] = np.inf
    return result


def project_ball(
    x, center, eps: float, metric: Union[str, Metric] = Metric.LINF
) -> np.ndarray:
    """Nearest point to `x` inside the ball B(center, eps).

    Rows are projected independently when `x` is a batch.
    """
    metric = Metric.parse(metric)
    if eps < 0:
        raise RejectedInputError("eps must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    if x.shape != center.shape:
        raise RejectedInputError(f"dimension mismatch: {x.shape} != {center.shape}")

    if metric is Metric.LINF:
        return np.clip(x, center - eps, center + eps)

    delta = x - center
    norm = np.linalg.norm(delta, axis=-1, keepdims=True)
    outside = norm > eps
    scale = np.where(outside, eps / np.where(outside, norm, 1.0), 1.0)
    return center + delta * scale


def clip_domain(x, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Clamp every coordinate into [lo, hi]."""
    if lo > hi:
        raise RejectedInputError(f"empty domain [{lo}, {hi}]")
    return np.clip(np.asarray(x, dtype=np.float64), lo, hi)


def pairwise(metric: Union[str, Metric], queries: np.ndarray, references: np.ndarray) -> np.ndarray:
    """Full distance matrix between two row sets (no pruning)."""
    metric = Metric.parse(metric)
    _check_same_shape(queries, references)
    integral = np.issubdtype(queries.dtype, np.integer) and np.issubdtype(
        references.dtype, np.integer
    )
    work = np.int32 if integral else np.float64
    gap = np.abs(queries.astype(work)[:, None, :] - references.astype(work)[None, :, :])
    if metric is Metric.LINF:
        return gap.max(axis=2, initial=0).astype(np.float64)
    gap = gap.astype(np.int64 if integral else np.float64)
    return np.sqrt(np.sum(gap * gap, axis=2).astype(np.float64))


def unit_mesh(resolution: int = 101, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Points of a regular resolution x resolution mesh on [lo, hi]^2, x1 varying slowest."""
    if resolution < 2:
        raise RejectedInputError("resolution must be at least 2")
    axis = np.linspace(lo, hi, resolution)
    x1, x2 = np.meshgrid(axis, axis, indexing="ij")
    return np.column_stack([x1.ravel(), x2.ravel()])

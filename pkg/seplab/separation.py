"""Exact nearest different-class distances.

`cross_class_nn` answers, for every query, "how far is the closest
reference example carrying another label?". The scan is exact: each query
first gets an upper bound from a small random sample of the references,
then the other-class references are visited in ascending index blocks with
`dist_early_exit_batch`, which discards a candidate as soon as one chunk of
coordinates puts it at or beyond the best distance found so far. Queries
whose best distance is never beaten get a short second pass over the rows
below the seeded neighbor, so ties still go to the lowest index. Queries
are independent, so blocks of them are farmed out to worker processes
sharing one read-only copy of the reference matrix.

8-bit sourced data (datasets with a `quantum`) is compared in integer
units of 1/quantum and divided only when records are built, so reported
distances are exact multiples of 1/255.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from tqdm import tqdm

from .datasets import Dataset, random_relabel
from .errors import RejectedInputError
from .metrics import Metric, dist_early_exit_batch, pairwise
from .rng import RandomStream

logger = logging.getLogger(__name__)

NO_OTHER_CLASS = "no reference example with a different label"

SEED_SAMPLE = 256
QUERY_BLOCK = 256
ROW_BLOCK = 4096
TIE_BLOCK = 256


class SeparationMode(str, Enum):
    TRAIN_TRAIN = "train-train"
    TEST_TRAIN = "test-train"


@dataclass(frozen=True)
class SeparationRecord:
    query_index: int
    query_label: int
    nn_index: Optional[int]
    nn_label: Optional[int]
    distance: float
    error: Optional[str] = None

    @property
    def valid(self) -> bool:
        return self.error is None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "query_index": self.query_index,
            "query_label": self.query_label,
            "nn_index": self.nn_index,
            "nn_label": self.nn_label,
            "distance": None if self.error else self.distance,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, row: Dict[str, Any]) -> "SeparationRecord":
        return cls(
            query_index=int(row["query_index"]),
            query_label=int(row["query_label"]),
            nn_index=row.get("nn_index"),
            nn_label=row.get("nn_label"),
            distance=math.nan if row.get("distance") is None else float(row["distance"]),
            error=row.get("error"),
        )


@dataclass
class SeparationReport:
    """Per-query nearest different-class distances and their aggregates.

    `min` and `mean` only cover valid records; they are NaN when no record is
    valid. The data is r-separated for r = `radius` = min / 2.
    """

    records: List[SeparationRecord]
    metric: Metric
    mode: SeparationMode
    min: float = field(init=False)
    mean: float = field(init=False)

    def __post_init__(self) -> None:
        distances = [r.distance for r in self.records if r.valid]
        self.min = min(distances) if distances else math.nan
        self.mean = math.fsum(distances) / len(distances) if distances else math.nan

    @property
    def valid_records(self) -> List[SeparationRecord]:
        return [r for r in self.records if r.valid]

    @property
    def n(self) -> int:
        return len(self.valid_records)

    @property
    def radius(self) -> float:
        return self.min / 2.0

    def ratio(self, epsilon: float) -> float:
        """How many perturbation radii fit into the minimum separation."""
        if epsilon <= 0:
            raise RejectedInputError("epsilon must be positive")
        return self.min / epsilon

    def summary(self, epsilon: Optional[float] = None) -> Dict[str, Any]:
        summary = {
            "mode": self.mode.value,
            "metric": self.metric.value,
            "n": self.n,
            "errors": len(self.records) - self.n,
            "min": round(self.min, 3),
            "mean": round(self.mean, 3),
            "radius": round(self.radius, 3),
        }
        if epsilon:
            summary["ratio"] = round(self.ratio(epsilon), 3)
        return summary

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mode": self.mode.value,
            "metric": self.metric.value,
            "min": None if math.isnan(self.min) else self.min,
            "mean": None if math.isnan(self.mean) else self.mean,
            "n": self.n,
            "records": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, document: Dict[str, Any]) -> "SeparationReport":
        return cls(
            records=[SeparationRecord.from_dict(r) for r in document["records"]],
            metric=Metric.parse(document["metric"]),
            mode=SeparationMode(document["mode"]),
        )


# SHARED HELPERS


def _prepare(
    queries: Dataset, references: Dataset, metric: Union[str, Metric]
) -> Tuple[np.ndarray, np.ndarray, float]:
    """Matrices to compare and the factor turning their distances into features units."""
    if queries.dim != references.dim:
        raise RejectedInputError(
            f"dimension mismatch: queries {queries.dim} != references {references.dim}"
        )
    if queries.quantum is not None and queries.quantum == references.quantum:
        return queries.units(), references.units(), float(queries.quantum)
    return queries.features, references.features, 1.0


def _build_records(
    queries: Dataset,
    references: Dataset,
    found: List[Tuple[int, Optional[int], float]],
    unit: float,
) -> List[SeparationRecord]:
    records = []
    for qi, nn, units in found:
        label = int(queries.labels[qi])
        if nn is None:
            records.append(SeparationRecord(qi, label, None, None, math.nan, NO_OTHER_CLASS))
        else:
            records.append(
                SeparationRecord(qi, label, int(nn), int(references.labels[nn]), units / unit)
            )
    return records


def _mode(exclude_identical_index: bool) -> SeparationMode:
    return SeparationMode.TRAIN_TRAIN if exclude_identical_index else SeparationMode.TEST_TRAIN


# PRUNED SCAN

_SCAN: Dict[str, Any] = {}


def _init_scan(refs, ref_labels, order, sample, metric, exclude) -> None:
    _SCAN.update(
        refs=refs,
        ref_labels=ref_labels,
        order=order,
        sample=sample,
        metric=metric,
        exclude=exclude,
        others={},
    )


def _other_rows(label: int) -> np.ndarray:
    others = _SCAN["others"]
    if label not in others:
        others[label] = np.flatnonzero(_SCAN["ref_labels"] != label)
    return others[label]


def _candidates(query: np.ndarray, rows: np.ndarray, bound: float, inclusive: bool):
    """Rows within `bound` of `query` and their exact distances, ascending by row."""
    refs = _SCAN["refs"]
    metric = _SCAN["metric"]
    slack = bound
    if metric is Metric.L2 and math.isfinite(bound):
        # partial sums are added in another order than the final distance
        slack = bound * (1.0 + 1e-9)
    pruned = dist_early_exit_batch(
        query,
        refs,
        slack,
        metric,
        rows=rows,
        order=_SCAN["order"],
        inclusive=inclusive or slack != bound,
    )
    survivors = rows[np.isfinite(pruned)]
    if not survivors.size:
        return survivors, np.empty(0)
    distances = pairwise(metric, query[None, :], refs[survivors])[0]
    keep = distances <= bound if inclusive else distances < bound
    return survivors[keep], distances[keep]


def _nearest(query: np.ndarray, rows: np.ndarray, seeds: np.ndarray) -> Tuple[int, float]:
    """Lowest-index row among the nearest ones; `rows` and `seeds` are ascending."""
    best_index, best = -1, math.inf
    if seeds.size:
        seeded = pairwise(_SCAN["metric"], query[None, :], _SCAN["refs"][seeds])[0]
        k = int(np.argmin(seeded))
        best_index, best = int(seeds[k]), float(seeded[k])
    seeded_best = best

    # later rows only replace the best when strictly closer
    for start in range(0, rows.shape[0], ROW_BLOCK):
        survivors, distances = _candidates(query, rows[start : start + ROW_BLOCK], best, False)
        if survivors.size:
            k = int(np.argmin(distances))
            best_index, best = int(survivors[k]), float(distances[k])

    if best == seeded_best and math.isfinite(best):
        # rows below the seeded one at exactly that distance were pruned
        earlier = rows[rows < best_index]
        for start in range(0, earlier.shape[0], TIE_BLOCK):
            survivors, _ = _candidates(query, earlier[start : start + TIE_BLOCK], best, True)
            if survivors.size:
                best_index = int(survivors[0])
                break
    return best_index, best


def _scan_block(task) -> List[Tuple[int, Optional[int], float]]:
    start, block, labels = task
    refs = _SCAN["refs"]
    ref_labels = _SCAN["ref_labels"]
    sample = _SCAN["sample"]

    found = []
    for offset, (query, label) in enumerate(zip(block, labels)):
        qi = start + offset
        rows = _other_rows(int(label))
        if _SCAN["exclude"] and qi < refs.shape[0] and ref_labels[qi] != label:
            rows = rows[rows != qi]
        if not rows.size:
            found.append((qi, None, math.nan))
            continue

        seeds = sample[ref_labels[sample] != label]
        if _SCAN["exclude"]:
            seeds = seeds[seeds != qi]
        nn, distance = _nearest(query, rows, seeds)
        found.append((qi, nn, distance))
    return found


def cross_class_nn(
    queries: Dataset,
    references: Dataset,
    metric: Union[str, Metric] = Metric.LINF,
    exclude_identical_index: bool = False,
    threads: int = 1,
    seed: int = 0,
    progress: bool = True,
) -> SeparationReport:
    """Exact distance from every query to its nearest different-class reference.

    Args:
        queries (Dataset): Examples to measure.
        references (Dataset): Examples searched for neighbors.
        metric (Metric): `linf` (default) or `l2`.
        exclude_identical_index (bool): Skip reference i for query i (Train-Train mode).
        threads (int): Number of worker processes.
        seed (int): Seed of the bound-seeding reference sample; it never changes the result.
        progress (bool): Show a progress bar.

    Returns:
        SeparationReport: One record per query; queries whose label is the
        only one present carry an error marker and are left out of the aggregates.
    """

    metric = Metric.parse(metric)
    q, refs, unit = _prepare(queries, references, metric)

    spread = refs.std(axis=0) if refs.shape[0] > 1 else np.zeros(refs.shape[1])
    order = np.argsort(-spread, kind="stable")
    sample_size = min(SEED_SAMPLE, refs.shape[0])
    sample = np.sort(RandomStream(seed).permutation(refs.shape[0])[:sample_size])
    logger.debug(
        "Scanning %d queries against %d references (%s, sample of %d)",
        q.shape[0], refs.shape[0], metric.value, sample_size,
    )

    init_args = (refs, references.labels, order, sample, metric, exclude_identical_index)
    tasks = [
        (start, q[start : start + QUERY_BLOCK], queries.labels[start : start + QUERY_BLOCK])
        for start in range(0, q.shape[0], QUERY_BLOCK)
    ]

    found: List[Tuple[int, Optional[int], float]] = []
    bar = tqdm(total=q.shape[0], desc="separation", unit="query", disable=not progress)
    if threads <= 1:
        _init_scan(*init_args)
        try:
            for task in tasks:
                found.extend(_scan_block(task))
                bar.update(task[1].shape[0])
        finally:
            _SCAN.clear()
    else:
        with ProcessPoolExecutor(
            max_workers=threads, initializer=_init_scan, initargs=init_args
        ) as pool:
            for task, result in zip(tasks, pool.map(_scan_block, tasks)):
                found.extend(result)
                bar.update(task[1].shape[0])
    bar.close()

    records = _build_records(queries, references, found, unit)
    return SeparationReport(records, metric, _mode(exclude_identical_index))


def brute_force_nn(
    queries: Dataset,
    references: Dataset,
    metric: Union[str, Metric] = Metric.LINF,
    exclude_identical_index: bool = False,
) -> SeparationReport:
    """Reference implementation of `cross_class_nn` without any pruning."""

    metric = Metric.parse(metric)
    q, refs, unit = _prepare(queries, references, metric)

    found: List[Tuple[int, Optional[int], float]] = []
    for qi in range(q.shape[0]):
        row = pairwise(metric, q[qi : qi + 1], refs)[0]
        allowed = references.labels != queries.labels[qi]
        if exclude_identical_index and qi < refs.shape[0]:
            allowed[qi] = False
        if not allowed.any():
            found.append((qi, None, math.nan))
            continue
        masked = np.where(allowed, row, np.inf)
        nn = int(np.argmin(masked))
        found.append((qi, nn, float(masked[nn])))

    records = _build_records(queries, references, found, unit)
    return SeparationReport(records, metric, _mode(exclude_identical_index))


# DERIVED VIEWS


def histogram(report: SeparationReport, bin_width: float) -> List[Tuple[float, int]]:
    """Counts of valid record distances per bin of width `bin_width`.

    Value v falls in bin floor(v / bin_width). Bins run contiguously from the
    lowest to the highest occupied one.
    """

    if bin_width <= 0:
        raise RejectedInputError("bin_width must be positive")
    distances = np.array([r.distance for r in report.valid_records], dtype=np.float64)
    if not distances.size:
        return []
    ratio = distances / bin_width
    nearest = np.rint(ratio)
    # 0.6 / 0.2 is 2.9999999999999996 in floats; it belongs on the edge of bin 3
    on_edge = np.abs(ratio - nearest) <= 1e-9 * np.maximum(1.0, nearest)
    bins = np.where(on_edge, nearest, np.floor(ratio)).astype(np.int64)
    first = int(bins.min())
    counts = np.bincount(bins - first)
    return [(round((first + k) * bin_width, 12), int(c)) for k, c in enumerate(counts)]


def flag_outliers(report: SeparationReport, threshold: float) -> List[SeparationRecord]:
    """Valid records with distance <= threshold, closest first."""
    if threshold < 0:
        raise RejectedInputError("threshold must be non-negative")
    flagged = [r for r in report.valid_records if r.distance <= threshold]
    return sorted(flagged, key=lambda r: (r.distance, r.query_index))


def separation_with_random_labels(
    ds: Dataset,
    metric: Union[str, Metric] = Metric.LINF,
    seed: int = 0,
    queries: Optional[Dataset] = None,
    threads: int = 1,
    progress: bool = True,
) -> Tuple[SeparationReport, SeparationReport]:
    """Separation of `ds` under its own labels and under uniformly random labels.

    Without `queries` both reports are Train-Train. With `queries` both are
    Test-Train and the query labels are randomized too (with a derived seed).
    """

    if queries is None:
        original = cross_class_nn(ds, ds, metric, True, threads=threads, progress=progress)
        shuffled = random_relabel(ds, seed)
        randomized = cross_class_nn(
            shuffled, shuffled, metric, True, threads=threads, progress=progress
        )
        return original, randomized

    original = cross_class_nn(queries, ds, metric, False, threads=threads, progress=progress)
    randomized = cross_class_nn(
        random_relabel(queries, RandomStream(seed).spawn(1).derive_seed()),
        random_relabel(ds, seed),
        metric,
        False,
        threads=threads,
        progress=progress,
    )
    return original, randomized

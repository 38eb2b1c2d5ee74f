"""Distance-based classifier with certified radii.

The classifier scores a point by its distance to each class, scaled by a
radius r: f(x)_i = dist(x, X_i) / r, and predicts the class of smallest
score. The class supports X_i are the finite training samples, so
certificates are statements about that sample: if the nearest other class
is `margin` further away than the predicted one, the triangle inequality
keeps the prediction fixed on the open ball of radius margin / 2.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np

from .datasets import Dataset
from .errors import RejectedInputError
from .metrics import Metric, pairwise, unit_mesh

logger = logging.getLogger(__name__)

# upper bound on elements of one broadcast distance block
BLOCK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class Certificate:
    predicted: int
    margin: float
    certified_radius: float


class DistanceClassifier:
    """Nearest-class classifier over class-partitioned reference points.

    Args:
        class_points (Sequence[np.ndarray]): One non-empty point matrix per class, class 1 first.
        r (float): Positive scale of the scores.
        metric (Metric): `linf` or `l2`.
    """

    def __init__(
        self,
        class_points: Sequence[np.ndarray],
        r: float,
        metric: Union[str, Metric] = Metric.LINF,
    ) -> None:
        if len(class_points) < 2:
            raise RejectedInputError("a distance classifier needs at least two classes")
        if r <= 0:
            raise RejectedInputError("r must be positive")

        points = [np.atleast_2d(np.asarray(p, dtype=np.float64)) for p in class_points]
        dims = {p.shape[1] for p in points}
        if len(dims) != 1:
            raise RejectedInputError(f"class points disagree on dimension: {sorted(dims)}")
        for i, p in enumerate(points):
            if p.shape[0] == 0:
                raise RejectedInputError(f"class {i + 1} has no points")
            p.flags.writeable = False

        self.class_points: List[np.ndarray] = points
        self.r = float(r)
        self.metric = Metric.parse(metric)
        self.dim = dims.pop()

    @classmethod
    def from_dataset(
        cls, ds: Dataset, r: float, metric: Union[str, Metric] = Metric.LINF
    ) -> "DistanceClassifier":
        """Use the examples of each class as its support."""
        return cls(
            [ds.features[ds.labels == c] for c in range(1, ds.class_count + 1)],
            r,
            metric,
        )

    @property
    def class_count(self) -> int:
        return len(self.class_points)

    # DEFAULT METHODS

    def distances(self, x) -> np.ndarray:
        """Unscaled distance to each class; shape (C,) for a vector, (n, C) for a batch."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        batch = np.atleast_2d(x)
        if batch.shape[1] != self.dim:
            raise RejectedInputError(f"dimension mismatch: {batch.shape[1]} != {self.dim}")

        out = np.empty((batch.shape[0], self.class_count))
        for c, points in enumerate(self.class_points):
            step = max(1, BLOCK_ELEMENTS // max(1, points.size))
            for start in range(0, batch.shape[0], step):
                block = batch[start : start + step]
                out[start : start + step, c] = pairwise(self.metric, block, points).min(axis=1)
        return out[0] if single else out

    def score(self, x) -> np.ndarray:
        """f(x)_i = dist(x, X_i) / r."""
        return self.distances(x) / self.r

    def predict(self, x) -> Union[int, np.ndarray]:
        """Label of the smallest score; ties go to the lowest class."""
        d = self.distances(x)
        return np.argmin(d, axis=-1) + 1 if d.ndim == 2 else int(np.argmin(d)) + 1

    def binary_score(self, x) -> Union[float, np.ndarray]:
        """(dist(x, X-) - dist(x, X+)) / 2r with class 1 positive and class 2 negative.

        Raises:
            RejectedInputError: The classifier does not have exactly two classes.
        """
        if self.class_count != 2:
            raise RejectedInputError(
                f"binary scores need exactly 2 classes, got {self.class_count}"
            )
        d = self.distances(x)
        value = (d[..., 1] - d[..., 0]) / (2.0 * self.r)
        return float(value) if np.ndim(value) == 0 else value

    def certify(self, x) -> Certificate:
        """Prediction at `x` and the radius on which it provably holds."""
        d = self.distances(np.asarray(x, dtype=np.float64).reshape(-1))
        predicted, margin, radius = self._certify_rows(d[None, :])
        return Certificate(int(predicted[0]), float(margin[0]), float(radius[0]))

    def certify_many(self, x) -> Dict[str, np.ndarray]:
        """`certify` over a batch, as arrays."""
        predicted, margin, radius = self._certify_rows(np.atleast_2d(self.distances(x)))
        return {"predicted": predicted, "margin": margin, "certified_radius": radius}

    def astuteness(self, test: Dataset, radius: float) -> float:
        """Share of `test` predicted correctly with certified radius >= `radius`.

        A sound lower bound on the astuteness of the classifier at `radius`.
        """
        if radius < 0:
            raise RejectedInputError("radius must be non-negative")
        certs = self.certify_many(test.features)
        ok = (certs["predicted"] == test.labels) & (certs["certified_radius"] >= radius)
        return float(np.mean(ok))

    # ADDITIONAL METHODS

    def certify_dataset(self, ds: Dataset) -> List[Dict[str, Any]]:
        """Certificate rows {index, predicted, true, margin, certified_radius}."""
        certs = self.certify_many(ds.features)
        return [
            {
                "index": i,
                "predicted": int(certs["predicted"][i]),
                "true": int(ds.labels[i]),
                "margin": float(certs["margin"][i]),
                "certified_radius": float(certs["certified_radius"][i]),
            }
            for i in range(ds.n)
        ]

    def score_grid(
        self, resolution: int = 101, lo: float = 0.0, hi: float = 1.0
    ) -> List[Dict[str, float]]:
        """Binary score and prediction on a regular 2-D mesh (rows x1, x2, score, predicted)."""
        if self.dim != 2:
            raise RejectedInputError("score grids are only defined for 2-D data")
        mesh = unit_mesh(resolution, lo, hi)
        scores = self.binary_score(mesh)
        predicted = self.predict(mesh)
        return [
            {"x1": float(a), "x2": float(b), "score": float(s), "predicted": int(p)}
            for (a, b), s, p in zip(mesh, scores, predicted)
        ]

    def as_model(self) -> "ScoreModel":
        """The classifier behind the interface the attacks drive."""
        return ScoreModel(self)

    # PRIVATE METHODS

    def _certify_rows(self, d: np.ndarray):
        predicted = np.argmin(d, axis=1)
        own = d[np.arange(d.shape[0]), predicted]
        others = d.copy()
        others[np.arange(d.shape[0]), predicted] = np.inf
        margin = others.min(axis=1) - own
        radius = np.maximum(0.0, margin / 2.0)
        return predicted + 1, margin, radius

    def __repr__(self) -> str:
        sizes = [p.shape[0] for p in self.class_points]
        return f"DistanceClassifier(classes={sizes}, r={self.r}, metric={self.metric.value})"


class ScoreModel:
    """A `DistanceClassifier` seen as a model with logits -f(x), so PGD and
    the multi-targeted attack can be run against it.

    The input gradient is a subgradient of each class distance, taken at the
    nearest support point of that class.
    """

    def __init__(self, clf: DistanceClassifier) -> None:
        self.clf = clf

    @property
    def class_count(self) -> int:
        return self.clf.class_count

    @property
    def input_dim(self) -> int:
        return self.clf.dim

    def forward(self, x, mode=None) -> Tuple[np.ndarray, np.ndarray]:
        batch = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if batch.shape[1] != self.clf.dim:
            raise RejectedInputError(f"dimension mismatch: {batch.shape[1]} != {self.clf.dim}")
        logits = np.empty((batch.shape[0], self.class_count))
        slopes = np.empty((batch.shape[0], self.class_count, self.clf.dim))
        for c, points in enumerate(self.clf.class_points):
            nearest = np.argmin(pairwise(self.clf.metric, batch, points), axis=1)
            diff = batch - points[nearest]
            if self.clf.metric is Metric.LINF:
                gap = np.abs(diff)
                k = np.argmax(gap, axis=1)
                rows = np.arange(batch.shape[0])
                logits[:, c] = gap[rows, k]
                slopes[:, c] = 0.0
                slopes[rows, c, k] = np.sign(diff[rows, k])
            else:
                norm = np.linalg.norm(diff, axis=1)
                logits[:, c] = norm
                slopes[:, c] = diff / np.where(norm > 0, norm, 1.0)[:, None]
        return -logits / self.clf.r, -slopes / self.clf.r

    def logits(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, trace: np.ndarray, upstream) -> Tuple[list, np.ndarray]:
        """No parameter gradients; the input gradient of sum(upstream * logits)."""
        return [], np.einsum("nc,ncd->nd", np.asarray(upstream, dtype=np.float64), trace)

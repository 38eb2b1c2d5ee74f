"""Fully-connected networks with hand-written reverse-mode gradients.

A `Network` is a chain of affine layers, each followed by ReLU or the
identity. `forward` returns logits together with a `ForwardTrace` that
holds everything `backward` needs: pre-activations, activations after
dropout, and the dropout masks. Hidden layers use inverted dropout in Train
mode, so Eval mode needs no rescaling.

Besides parameter and input gradients the network offers a forward-mode
tangent pass (`jvp`) and its reverse (`jvp_backward`). Because the network
is piecewise linear in its input, the tangent pass with the masks of a
trace is exact, and differentiating a scalar built from logits *and* logit
tangents gives exact gradients of directional-derivative terms such as
delta^T grad_x L.
"""

import logging
import os
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import log_softmax, softmax

from .errors import DataFormatError, NumericStateError, RejectedInputError
from .metrics import unit_mesh
from .rng import RandomStream

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"SEPLABNN"
MODEL_VERSION = 1


class Activation(str, Enum):
    RELU = "relu"
    IDENTITY = "identity"


_ACTIVATION_TAGS = {Activation.IDENTITY: 0, Activation.RELU: 1}


class Mode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


@dataclass(frozen=True)
class LayerSpec:
    width: int
    activation: Activation = Activation.RELU

    def __post_init__(self) -> None:
        if self.width < 1:
            raise RejectedInputError("layer width must be at least 1")
        object.__setattr__(self, "activation", Activation(self.activation))


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: Activation


@dataclass
class ForwardTrace:
    """Record of one forward pass.

    `post[l]` is the output of layer l after activation and dropout;
    `gates[l]` is the factor the activation and dropout applied to the
    pre-activation (0/1 for ReLU, times 1/(1-p) where dropout kept the unit).
    """

    inputs: np.ndarray
    pre: List[np.ndarray]
    post: List[np.ndarray]
    gates: List[Optional[np.ndarray]]
    masks: List[Optional[np.ndarray]]
    mode: Mode
    batched: bool
    owner: int = field(repr=False)
    version: int = field(repr=False)


ParamGrads = List[Tuple[np.ndarray, np.ndarray]]


class Network:
    """Feedforward classifier f: R^d -> R^C.

    Args:
        layers (Sequence[Layer]): Affine layers, the last one with identity activation.
        input_dim (int): Input dimension d.
        dropout_rate (float, optional): Dropout probability of hidden units in Train mode.
    """

    def __init__(self, layers: Sequence[Layer], input_dim: int, dropout_rate: float = 0.0) -> None:
        if not layers:
            raise RejectedInputError("a network needs at least one layer")
        if not 0.0 <= dropout_rate < 1.0:
            raise RejectedInputError("dropout_rate must lie in [0, 1)")
        fan_in = input_dim
        for i, layer in enumerate(layers):
            if layer.weight.shape[1] != fan_in or layer.bias.shape != (layer.weight.shape[0],):
                raise RejectedInputError(f"layer {i} does not chain: expected {fan_in} inputs")
            fan_in = layer.weight.shape[0]
        if layers[-1].activation is not Activation.IDENTITY:
            raise RejectedInputError("the last layer must produce raw logits (identity activation)")

        self.layers: List[Layer] = list(layers)
        self.input_dim = int(input_dim)
        self.dropout_rate = float(dropout_rate)
        self.version = 0

    @property
    def class_count(self) -> int:
        return self.layers[-1].weight.shape[0]

    def parameters(self) -> List[np.ndarray]:
        """[W1, b1, W2, b2, ...] (live arrays)."""
        params = []
        for layer in self.layers:
            params.extend([layer.weight, layer.bias])
        return params

    def copy(self) -> "Network":
        return Network(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers],
            self.input_dim,
            self.dropout_rate,
        )

    def apply_update(self, updates: ParamGrads) -> None:
        """Add (dW, db) to every layer in place; invalidates earlier traces."""
        for layer, (dw, db) in zip(self.layers, updates):
            layer.weight += dw
            layer.bias += db
        self.version += 1

    def touch(self) -> None:
        """Mark parameters as changed after editing them directly."""
        self.version += 1

    # FORWARD / BACKWARD

    def forward(
        self,
        x,
        mode: Union[Mode, str] = Mode.EVAL,
        rng: Optional[RandomStream] = None,
        masks: Optional[Sequence[Optional[np.ndarray]]] = None,
    ) -> Tuple[np.ndarray, ForwardTrace]:
        """Logits for a vector or a batch, plus the trace of the pass.

        In Train mode `masks` (taken from an earlier trace of a batch of the
        same shape) replaces fresh dropout draws.

        Raises:
            NumericStateError: Parameters contain NaN or infinite values.
        """

        mode = Mode(mode)
        x = np.asarray(x, dtype=np.float64)
        batched = x.ndim == 2
        a = np.atleast_2d(x)
        if a.shape[1] != self.input_dim:
            raise RejectedInputError(f"input dimension {a.shape[1]} != {self.input_dim}")
        dropping = mode is Mode.TRAIN and self.dropout_rate > 0.0
        if dropping and rng is None and masks is None:
            raise RejectedInputError("Train mode with dropout needs a random stream")

        pre, post, gates, used = [], [], [], []
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            if not (np.isfinite(layer.weight).all() and np.isfinite(layer.bias).all()):
                raise NumericStateError(f"layer {i} has non-finite parameters")
            z = a @ layer.weight.T + layer.bias
            gate = (z > 0).astype(np.float64) if layer.activation is Activation.RELU else None
            mask = None
            if dropping and i < last:
                if masks is not None:
                    mask = masks[i]
                else:
                    keep = 1.0 - self.dropout_rate
                    mask = rng.bernoulli(keep, z.shape) / keep
            if mask is not None:
                gate = mask if gate is None else gate * mask
            a = z if gate is None else z * gate
            pre.append(z)
            post.append(a)
            gates.append(gate)
            used.append(mask)

        trace = ForwardTrace(
            inputs=np.atleast_2d(x),
            pre=pre,
            post=post,
            gates=gates,
            masks=used,
            mode=mode,
            batched=batched,
            owner=id(self),
            version=self.version,
        )
        return (a if batched else a[0]), trace

    def logits(self, x) -> np.ndarray:
        """Eval-mode logits."""
        return self.forward(x, Mode.EVAL)[0]

    def predict(self, x) -> Union[int, np.ndarray]:
        """Eval-mode labels (1-based); ties go to the lowest class."""
        out = self.logits(x)
        return np.argmax(out, axis=-1) + 1 if out.ndim == 2 else int(np.argmax(out)) + 1

    def backward(self, trace: ForwardTrace, upstream) -> Tuple[ParamGrads, np.ndarray]:
        """Gradients of a scalar loss given its gradient w.r.t. the logits.

        Args:
            trace (ForwardTrace): Trace of the pass the loss was computed from.
            upstream (np.ndarray): d loss / d logits, shaped like the logits.

        Returns:
            (param_grads, input_grad): [(dW, db)] per layer, and d loss / d input.
        """
        self._check_trace(trace)
        g = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
        grads: ParamGrads = []
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            below = trace.post[i - 1] if i > 0 else trace.inputs
            grads.append((g.T @ below, g.sum(axis=0)))
            g = g @ layer.weight
            if i > 0 and trace.gates[i - 1] is not None:
                g = g * trace.gates[i - 1]
        grads.reverse()
        return grads, (g if trace.batched else g[0])

    def jvp(self, trace: ForwardTrace, direction) -> List[np.ndarray]:
        """Tangents of every layer output along `direction` (masks of `trace` held fixed).

        Returns:
            List[np.ndarray]: Tangent of `post[l]` for each layer; the last one is the logit tangent.
        """
        self._check_trace(trace)
        t = np.atleast_2d(np.asarray(direction, dtype=np.float64))
        if t.shape != trace.inputs.shape:
            raise RejectedInputError("direction must have the shape of the traced input")
        tangents = []
        for layer, gate in zip(self.layers, trace.gates):
            t = t @ layer.weight.T
            if gate is not None:
                t = t * gate
            tangents.append(t)
        return tangents

    def jvp_backward(
        self,
        trace: ForwardTrace,
        direction,
        tangents: List[np.ndarray],
        upstream_value,
        upstream_tangent,
    ) -> Tuple[ParamGrads, np.ndarray, np.ndarray]:
        """Reverse pass through a forward pass and its tangent pass together.

        For a scalar S(logits, logit_tangent) the arguments are dS/dlogits and
        dS/dlogit_tangent.

        Returns:
            (param_grads, input_grad, direction_grad)
        """
        self._check_trace(trace)
        direction = np.atleast_2d(np.asarray(direction, dtype=np.float64))
        g = np.atleast_2d(np.asarray(upstream_value, dtype=np.float64))
        gt = np.atleast_2d(np.asarray(upstream_tangent, dtype=np.float64))
        grads: ParamGrads = []
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            below = trace.post[i - 1] if i > 0 else trace.inputs
            below_t = tangents[i - 1] if i > 0 else direction
            grads.append((g.T @ below + gt.T @ below_t, g.sum(axis=0)))
            g = g @ layer.weight
            gt = gt @ layer.weight
            if i > 0 and trace.gates[i - 1] is not None:
                g = g * trace.gates[i - 1]
                gt = gt * trace.gates[i - 1]
        grads.reverse()
        if trace.batched:
            return grads, g, gt
        return grads, g[0], gt[0]

    def _check_trace(self, trace: ForwardTrace) -> None:
        if trace.owner != id(self) or trace.version != self.version:
            raise RejectedInputError("trace is stale or belongs to another network")

    def __repr__(self) -> str:
        widths = [self.input_dim] + [l.weight.shape[0] for l in self.layers]
        return f"Network({' -> '.join(map(str, widths))}, dropout={self.dropout_rate})"


def init_network(
    specs: Sequence[LayerSpec],
    input_dim: int,
    seed: int = 0,
    dropout_rate: float = 0.0,
) -> Network:
    """Glorot-uniform weights, zero biases.

    Weights are drawn from U(-sqrt(6 / (fan_in + fan_out)), +sqrt(...)).
    """

    if not specs:
        raise RejectedInputError("at least one layer is needed")
    if input_dim < 1:
        raise RejectedInputError("input_dim must be at least 1")
    stream = RandomStream(seed)
    layers = []
    fan_in = input_dim
    for spec in specs:
        limit = np.sqrt(6.0 / (fan_in + spec.width))
        weight = stream.uniform(-limit, limit, (spec.width, fan_in))
        layers.append(Layer(weight, np.zeros(spec.width), spec.activation))
        fan_in = spec.width
    return Network(layers, input_dim, dropout_rate)


def mlp_specs(hidden: Sequence[int], class_count: int) -> List[LayerSpec]:
    """ReLU hidden layers followed by a linear logit layer."""
    return [LayerSpec(w, Activation.RELU) for w in hidden] + [
        LayerSpec(class_count, Activation.IDENTITY)
    ]


# LOSSES


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-example softmax cross-entropy and its gradient w.r.t. the logits.

    Labels are 1-based.
    """
    logits = np.atleast_2d(logits)
    index = np.asarray(labels, dtype=np.int64).reshape(-1) - 1
    rows = np.arange(logits.shape[0])
    logp = log_softmax(logits, axis=1)
    grad = softmax(logits, axis=1)
    grad[rows, index] -= 1.0
    return -logp[rows, index], grad


# GRADIENT CHECKING


@dataclass
class GradCheckReport:
    max_relative_error: float
    checked: int
    skipped: int
    worst: str

    def passed(self, tol: float) -> bool:
        return self.max_relative_error < tol


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _coordinates(shape, limit: Optional[int], stream: RandomStream) -> List[Tuple[int, ...]]:
    total = int(np.prod(shape))
    flat = np.arange(total) if limit is None or total <= limit else np.sort(stream.permutation(total)[:limit])
    return [np.unravel_index(i, shape) for i in flat]


def check_gradients(
    loss_fn: Callable[[], float],
    targets: Dict[str, Tuple[np.ndarray, np.ndarray]],
    step: float = 1e-5,
    max_coords: Optional[int] = None,
    seed: int = 0,
    kink_fn: Optional[Callable[[], object]] = None,
    on_change: Optional[Callable[[], None]] = None,
) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    Args:
        loss_fn: Evaluates the scalar loss at the current array contents.
        targets: name -> (array perturbed in place, its analytic gradient).
        step: Finite-difference step.
        max_coords: Check at most this many coordinates per array.
        kink_fn: Returns a hashable signature of non-smooth state (e.g. ReLU
            patterns); coordinates whose perturbation changes it are skipped.
        on_change: Called after every in-place edit (e.g. `Network.touch`).
    """

    stream = RandomStream(seed)
    worst, worst_at, checked, skipped = 0.0, "", 0, 0
    touch = on_change or (lambda: None)
    for k, (name, (array, analytic)) in enumerate(sorted(targets.items())):
        for idx in _coordinates(array.shape, max_coords, stream.spawn(k)):
            original = array[idx]
            base = kink_fn() if kink_fn else None
            array[idx] = original + step
            touch()
            plus = loss_fn()
            plus_sig = kink_fn() if kink_fn else None
            array[idx] = original - step
            touch()
            minus = loss_fn()
            minus_sig = kink_fn() if kink_fn else None
            array[idx] = original
            touch()
            if kink_fn and not (base == plus_sig == minus_sig):
                skipped += 1
                continue
            numeric = (plus - minus) / (2.0 * step)
            err = relative_error(float(analytic[idx]), numeric)
            checked += 1
            if err > worst:
                worst, worst_at = err, f"{name}{tuple(int(i) for i in idx)}"
    return GradCheckReport(worst, checked, skipped, worst_at)


def relu_pattern(net: Network, x: np.ndarray) -> bytes:
    """Signature of the ReLU on/off pattern of an Eval-mode pass."""
    _, trace = net.forward(x, Mode.EVAL)
    return b"".join(
        np.packbits(g.astype(bool)).tobytes() for g in trace.gates if g is not None
    )


def grad_check(
    net: Network,
    batch: Tuple[np.ndarray, np.ndarray],
    step: float = 1e-5,
    tol: float = 1e-4,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """Check `backward` on the mean cross-entropy of `batch` in Eval mode.

    Every parameter and input coordinate is checked unless `max_coords`
    limits each array to a random subset. Coordinates whose perturbation
    flips a ReLU are skipped (the loss is not differentiable there).
    """

    if tol <= 0:
        raise RejectedInputError("tol must be positive")
    x = np.array(batch[0], dtype=np.float64)
    labels = np.asarray(batch[1])

    logits, trace = net.forward(x, Mode.EVAL)
    _, dlogits = cross_entropy(logits, labels)
    n = np.atleast_2d(x).shape[0]
    grads, input_grad = net.backward(trace, dlogits / n)

    targets = {"x": (x, input_grad.reshape(x.shape))}
    for i, (layer, (dw, db)) in enumerate(zip(net.layers, grads)):
        targets[f"W{i}"] = (layer.weight, dw)
        targets[f"b{i}"] = (layer.bias, db)

    def loss() -> float:
        return float(np.mean(cross_entropy(net.logits(x), labels)[0]))

    report = check_gradients(
        loss,
        targets,
        step=step,
        max_coords=max_coords,
        seed=seed,
        kink_fn=lambda: relu_pattern(net, x),
        on_change=net.touch,
    )
    level = logging.DEBUG if report.passed(tol) else logging.WARNING
    logger.log(
        level,
        "Gradient check: max relative error %.3g over %d coordinates (%d skipped at kinks)",
        report.max_relative_error, report.checked, report.skipped,
    )
    return report


def decision_grid(
    net: Network, resolution: int = 101, lo: float = 0.0, hi: float = 1.0
) -> List[Dict[str, float]]:
    """Logit margin z_1 - z_2 and prediction of a two-class network on a 2-D mesh.

    Rows have the columns of `DistanceClassifier.score_grid` (x1, x2, score,
    predicted), so both decision boundaries can be plotted the same way.
    """
    if net.input_dim != 2 or net.class_count != 2:
        raise RejectedInputError("decision grids need a network with 2 inputs and 2 classes")
    mesh = unit_mesh(resolution, lo, hi)
    logits = net.logits(mesh)
    scores = logits[:, 0] - logits[:, 1]
    # ties go to class 2
    predicted = np.where(scores > 0, 1, 2)
    return [
        {"x1": float(a), "x2": float(b), "score": float(s), "predicted": int(p)}
        for (a, b), s, p in zip(mesh, scores, predicted)
    ]


# SERIALIZATION


def save_model(net: Network, destination: Union[str, "os.PathLike[str]", IO[bytes]]) -> None:
    """Write `net` in the SEPLABNN model format.

    Layout: magic, u8 version, u32 layer count, u32 input dim, f64 dropout
    rate, then per layer u32 fan-out, u32 fan-in and u8 activation tag,
    followed by all weights and biases as little-endian f64.
    """
    header = [
        MODEL_MAGIC,
        struct.pack("<BIId", MODEL_VERSION, len(net.layers), net.input_dim, net.dropout_rate),
    ]
    for layer in net.layers:
        out, fan_in = layer.weight.shape
        header.append(struct.pack("<IIB", out, fan_in, _ACTIVATION_TAGS[layer.activation]))
    body = [
        part
        for layer in net.layers
        for part in (layer.weight.astype("<f8").tobytes(), layer.bias.astype("<f8").tobytes())
    ]
    payload = b"".join(header + body)

    if isinstance(destination, (str, os.PathLike)):
        with open(destination, "wb") as f:
            f.write(payload)
    else:
        destination.write(payload)


def load_model(source: Union[str, "os.PathLike[str]", IO[bytes]]) -> Network:
    """Read a network written by `save_model`."""

    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as f:
            content = f.read()
        path = str(source)
    else:
        content = source.read()
        path = None

    head = struct.calcsize("<BIId")
    if len(content) < len(MODEL_MAGIC) + head:
        raise DataFormatError("file too short for its header", field="header", path=path)
    if content[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise DataFormatError("not a SEPLABNN file", field="magic", path=path)
    version, count, input_dim, dropout = struct.unpack_from("<BIId", content, len(MODEL_MAGIC))
    if version != MODEL_VERSION:
        raise DataFormatError(f"unsupported version {version}", field="version", path=path)

    offset = len(MODEL_MAGIC) + head
    tags = {v: k for k, v in _ACTIVATION_TAGS.items()}
    shapes = []
    for _ in range(count):
        if len(content) < offset + 9:
            raise DataFormatError("truncated layer table", field="layers", path=path)
        out, fan_in, tag = struct.unpack_from("<IIB", content, offset)
        if tag not in tags:
            raise DataFormatError(f"unknown activation tag {tag}", field="activation", path=path)
        shapes.append((out, fan_in, tags[tag]))
        offset += 9

    layers = []
    for out, fan_in, activation in shapes:
        size = 8 * (out * fan_in + out)
        if len(content) < offset + size:
            raise DataFormatError("truncated parameters", field="parameters", path=path)
        weight = np.frombuffer(content, "<f8", out * fan_in, offset).reshape(out, fan_in)
        bias = np.frombuffer(content, "<f8", out, offset + 8 * out * fan_in)
        layers.append(Layer(weight.astype(np.float64), bias.astype(np.float64), activation))
        offset += size

    try:
        return Network(layers, input_dim, dropout)
    except RejectedInputError as e:
        raise DataFormatError(str(e), field="layers", path=path) from e

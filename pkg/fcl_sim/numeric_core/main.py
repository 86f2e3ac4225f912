"""
Dense encoder, projection head and classifier head in double precision.

The layer vocabulary is fixed: affine maps, ReLU and a per-row L2
normalization at the end of the projection head. ``forward`` records every
activation ``backward`` needs in a ``ForwardStash``.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp, softmax

from fcl_sim.exceptions import (
    ArchitectureMismatchError,
    ConfigError,
    DegenerateEmbeddingError,
    ShapeError,
    ValidationError,
)

MODES = ("encode", "project", "classify")


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def copy(self) -> "Layer":
        return Layer(self.weight.copy(), self.bias.copy())


@dataclass
class ModelParams:
    """
    All weights of the encoder f, the projection head g and the optional classifier.

    Parameters
    ----------
    encoder_layers : list of Layer
        Hidden layers of the encoder; each is followed by a ReLU.
    projection_layers : list of Layer
        Projection head, ReLU between layers, none after the last.
    classifier : Layer, optional
        Linear classification head attached to the encoder output.
    """

    encoder_layers: List[Layer]
    projection_layers: List[Layer] = field(default_factory=list)
    classifier: Optional[Layer] = None

    def __post_init__(self):
        if not self.encoder_layers:
            raise ShapeError("encoder needs at least one layer", layer="encoder")

        for name, layer in self.named_layers():
            if layer.weight.ndim != 2 or layer.bias.shape != (layer.out_dim,):
                raise ShapeError(
                    f"weight {layer.weight.shape} and bias {layer.bias.shape} disagree",
                    layer=name,
                )

        self._check_chain("encoder", self.encoder_layers, self.input_dim)
        self._check_chain("projection", self.projection_layers, self.encoder_dim)
        if self.classifier is not None and self.classifier.in_dim != self.encoder_dim:
            raise ShapeError(
                f"expects {self.classifier.in_dim} inputs, encoder emits {self.encoder_dim}",
                layer="classifier",
            )

    @staticmethod
    def _check_chain(section: str, layers: List[Layer], in_dim: int):
        for i, layer in enumerate(layers):
            if layer.in_dim != in_dim:
                raise ShapeError(
                    f"expects {layer.in_dim} inputs, previous layer emits {in_dim}",
                    layer=f"{section}.{i}",
                )
            in_dim = layer.out_dim

    @property
    def input_dim(self) -> int:
        return self.encoder_layers[0].in_dim

    @property
    def encoder_dim(self) -> int:
        return self.encoder_layers[-1].out_dim

    @property
    def feature_dim(self) -> Optional[int]:
        if not self.projection_layers:
            return None
        return self.projection_layers[-1].out_dim

    @property
    def n_classes(self) -> Optional[int]:
        return None if self.classifier is None else self.classifier.out_dim

    def named_layers(self) -> List[Tuple[str, Layer]]:
        named = [(f"encoder.{i}", layer) for i, layer in enumerate(self.encoder_layers)]
        named += [
            (f"projection.{i}", layer) for i, layer in enumerate(self.projection_layers)
        ]
        if self.classifier is not None:
            named.append(("classifier", self.classifier))
        return named

    def layer(self, name: str) -> Layer:
        for layer_name, layer in self.named_layers():
            if layer_name == name:
                return layer
        raise KeyError(name)

    def arrays(self) -> List[np.ndarray]:
        """Every parameter array in layer order, weight before bias."""
        out = []
        for _, layer in self.named_layers():
            out += [layer.weight, layer.bias]
        return out

    def array_names(self) -> List[str]:
        out = []
        for name, _ in self.named_layers():
            out += [f"{name}.weight", f"{name}.bias"]
        return out

    def architecture(self) -> List[Tuple[str, Tuple[int, int]]]:
        return [(name, layer.weight.shape) for name, layer in self.named_layers()]

    def copy(self) -> "ModelParams":
        return ModelParams(
            [layer.copy() for layer in self.encoder_layers],
            [layer.copy() for layer in self.projection_layers],
            None if self.classifier is None else self.classifier.copy(),
        )

    def zeros_like(self) -> "ModelParams":
        out = self.copy()
        for array in out.arrays():
            array.fill(0.0)
        return out


def check_same_architecture(a: ModelParams, b: ModelParams) -> None:
    if a.architecture() != b.architecture():
        raise ArchitectureMismatchError(
            f"architectures differ: {a.architecture()} vs {b.architecture()}"
        )


@dataclass
class ArchitectureConfig:
    encoder_hidden: Tuple[int, ...] = (128, 128)
    projection_hidden: int = 128

    def __post_init__(self):
        self.encoder_hidden = tuple(int(h) for h in self.encoder_hidden)
        if not self.encoder_hidden or min(self.encoder_hidden) <= 0:
            raise ConfigError("model.encoder_hidden needs positive widths")
        if self.projection_hidden <= 0:
            raise ConfigError("model.projection_hidden must be positive")


def _he_layer(rng: np.random.Generator, in_dim: int, out_dim: int) -> Layer:
    weight = rng.normal(0.0, np.sqrt(2.0 / in_dim), size=(out_dim, in_dim))
    return Layer(weight, np.zeros(out_dim))


def init_params(
    input_dim: int,
    arch: ArchitectureConfig = None,
    feature_dim: int = 128,
    seed: int = 0,
    n_classes: int = None,
) -> ModelParams:
    """
    Seeded He-normal initialization of encoder and 2-layer projection head.

    Parameters
    ----------
    input_dim : int
        Width of a flattened sample.
    arch : ArchitectureConfig
        Hidden widths; defaults to two encoder layers of 128 and a 128-wide projection.
    feature_dim : int
        Output dimension d of the projection head.
    seed : int
        Seed for the weight draw.
    n_classes : int, optional
        When given, a classifier head is attached as well.

    Returns
    ----------
    params : ModelParams
    """
    arch = arch or ArchitectureConfig()
    rng = np.random.default_rng(seed)

    encoder, width = [], input_dim
    for hidden in arch.encoder_hidden:
        encoder.append(_he_layer(rng, width, hidden))
        width = hidden

    projection = [
        _he_layer(rng, width, arch.projection_hidden),
        _he_layer(rng, arch.projection_hidden, feature_dim),
    ]
    classifier = _he_layer(rng, width, n_classes) if n_classes else None

    return ModelParams(encoder, projection, classifier)


def attach_classifier(params: ModelParams, n_classes: int, seed: int) -> ModelParams:
    """
    Drops the projection head and puts a freshly initialized linear classifier on the encoder.
    """
    rng = np.random.default_rng(seed)
    classifier = _he_layer(rng, params.encoder_dim, n_classes)
    return ModelParams([layer.copy() for layer in params.encoder_layers], [], classifier)


@dataclass
class _Trace:
    name: str
    inputs: np.ndarray
    pre: np.ndarray
    relu: bool


@dataclass
class ForwardStash:
    mode: str
    params: ModelParams
    traces: List[_Trace]
    output_shape: Tuple[int, ...]
    normalized: Optional[np.ndarray] = None
    norms: Optional[np.ndarray] = None

    def relu_masks(self) -> List[np.ndarray]:
        return [trace.pre > 0 for trace in self.traces if trace.relu]


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """
    Scales every row to unit L2 norm.

    Raises
    ----------
    DegenerateEmbeddingError
        When a row is all zeros.
    """
    v = np.asarray(v, dtype=np.float64)
    rows = np.atleast_2d(v)
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateEmbeddingError(
            f"cannot normalize zero rows {np.flatnonzero(norms == 0.0).tolist()}"
        )
    out = rows / norms[:, None]
    return out.reshape(v.shape)


def _names(section, layers):
    return [f"{section}.{i}" for i in range(len(layers))]


def _run_chain(h, layers, names, traces, relu_last):
    for i, (name, layer) in enumerate(zip(names, layers)):
        pre = h @ layer.weight.T + layer.bias
        relu = relu_last or i < len(layers) - 1
        traces.append(_Trace(name, h, pre, relu))
        h = np.maximum(pre, 0.0) if relu else pre
    return h


def forward(params: ModelParams, batch: np.ndarray, mode: str = "encode"):
    """
    Runs a batch through the network.

    Parameters
    ----------
    params : ModelParams
    batch : np.ndarray
        Array of shape (B, input_dim).
    mode : str
        ``encode`` returns encoder features, ``project`` returns L2-normalized
        projections and ``classify`` returns classifier logits.

    Returns
    ----------
    output : np.ndarray
    stash : ForwardStash
        Activation record consumed by ``backward``.
    """
    if mode not in MODES:
        raise ValidationError(f"unknown forward mode {mode!r}")

    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"batch must be 2-D, got shape {x.shape}", layer="encoder.0")
    if x.shape[1] != params.input_dim:
        raise ShapeError(
            f"batch width {x.shape[1]} does not match input dim {params.input_dim}",
            layer="encoder.0",
        )

    traces: List[_Trace] = []
    h = _run_chain(
        x,
        params.encoder_layers,
        _names("encoder", params.encoder_layers),
        traces,
        relu_last=True,
    )
    normalized = norms = None

    if mode == "project":
        if not params.projection_layers:
            raise ValidationError("mode=project needs a projection head")
        z = _run_chain(
            h,
            params.projection_layers,
            _names("projection", params.projection_layers),
            traces,
            relu_last=False,
        )
        norms = np.linalg.norm(z, axis=1)
        if np.any(norms == 0.0):
            raise DegenerateEmbeddingError("projection produced a zero row")
        h = normalized = z / norms[:, None]
    elif mode == "classify":
        if params.classifier is None:
            raise ValidationError("mode=classify needs a classifier head")
        h = _run_chain(h, [params.classifier], ["classifier"], traces, relu_last=False)

    stash = ForwardStash(mode, params, traces, h.shape, normalized, norms)
    return h, stash


def backward(stash: ForwardStash, output_grad: np.ndarray) -> ModelParams:
    """
    Reverse-mode gradients of a scalar loss through the recorded forward pass.

    The ReLU subgradient at 0 is 0.

    Returns
    ----------
    grads : ModelParams
        Same structure as the parameters; layers the pass did not touch are zero.
    """
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != stash.output_shape:
        raise ShapeError(
            f"output grad {g.shape} does not match stashed output {stash.output_shape}"
        )

    grads = stash.params.zeros_like()

    if stash.mode == "project":
        y = stash.normalized
        g = (g - y * np.sum(y * g, axis=1, keepdims=True)) / stash.norms[:, None]

    for trace in reversed(stash.traces):
        if trace.relu:
            g = g * (trace.pre > 0)
        layer_grad = grads.layer(trace.name)
        layer_grad.weight += g.T @ trace.inputs
        layer_grad.bias += g.sum(axis=0)
        g = g @ stash.params.layer(trace.name).weight

    return grads


def cross_entropy(logits: np.ndarray, targets: np.ndarray):
    """
    Mean softmax cross-entropy and its gradient with respect to the logits.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} and targets {targets.shape} disagree")

    rows = np.arange(logits.shape[0])
    loss = float(np.mean(logsumexp(logits, axis=1) - logits[rows, targets]))

    grad = softmax(logits, axis=1)
    grad[rows, targets] -= 1.0
    return loss, grad / logits.shape[0]

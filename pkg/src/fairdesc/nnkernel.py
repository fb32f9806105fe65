"""Minimal dense-network kernels: forward, hand-derived backward, plain SGD.

Everything here is a pure function: models go in, new models or gradients
come out, nothing is mutated.  All arithmetic is double precision so that
finite-difference checks have headroom.  Supported activations:

    identity    f(z) = z
    prelu       f(z) = z if z > 0 else alpha * z      (alpha per output unit)
    selu        scaled exponential linear unit with the standard constants
    softmax     row-wise softmax, only legal on the final layer
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

ACTIVATIONS = ("identity", "prelu", "selu", "softmax")

SELU_SCALE = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772

# Probabilities are clamped to at least this before any log.
PROB_FLOOR = 1e-12

PRELU_ALPHA_INIT = 0.25


@dataclass
class DenseLayer:
    """One fully connected layer: ``act(x @ weights.T + bias)``."""

    weights: np.ndarray  # [out, in]
    bias: np.ndarray  # [out]
    activation: str
    alpha: np.ndarray | None = None  # prelu only, [out]

    @property
    def in_size(self) -> int:
        return self.weights.shape[1]

    @property
    def out_size(self) -> int:
        return self.weights.shape[0]

    def validate(self) -> None:
        if self.weights.ndim != 2:
            raise ShapeError(f"layer weights must be 2-D, got shape {self.weights.shape}")
        if self.bias.shape != (self.out_size,):
            raise ShapeError(
                f"bias shape {self.bias.shape} inconsistent with {self.out_size} outputs"
            )
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")
        if self.activation == "prelu":
            if self.alpha is None or self.alpha.shape != (self.out_size,):
                raise ShapeError("prelu layer needs an alpha vector of length out_size")
        elif self.alpha is not None:
            raise ShapeError(f"{self.activation} layer must not carry an alpha vector")


@dataclass
class Mlp:
    """An ordered stack of DenseLayers; at most the last may be softmax."""

    layers: list[DenseLayer]

    @property
    def in_size(self) -> int:
        return self.layers[0].in_size

    @property
    def out_size(self) -> int:
        return self.layers[-1].out_size

    def validate(self) -> None:
        if not self.layers:
            raise ShapeError("Mlp needs at least one layer")
        for layer in self.layers:
            layer.validate()
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_size != b.in_size:
                raise ShapeError(
                    f"layer sizes do not chain: {a.out_size} -> {b.in_size}"
                )
        for layer in self.layers[:-1]:
            if layer.activation == "softmax":
                raise ShapeError("softmax is only legal on the final layer")


@dataclass
class LayerGradients:
    weights: np.ndarray
    bias: np.ndarray
    alpha: np.ndarray | None = None


@dataclass
class Gradients:
    """Per-layer gradients, shape-matched to the owning Mlp."""

    layers: list[LayerGradients]

    def scaled(self, factor: float) -> "Gradients":
        return Gradients(
            [
                LayerGradients(
                    g.weights * factor,
                    g.bias * factor,
                    None if g.alpha is None else g.alpha * factor,
                )
                for g in self.layers
            ]
        )

    def add(self, other: "Gradients") -> "Gradients":
        if len(self.layers) != len(other.layers):
            raise ShapeError("gradient layer counts differ")
        out = []
        for a, b in zip(self.layers, other.layers):
            alpha = None
            if a.alpha is not None:
                alpha = a.alpha + b.alpha
            out.append(LayerGradients(a.weights + b.weights, a.bias + b.bias, alpha))
        return Gradients(out)


@dataclass
class ForwardCache:
    """Per-layer values retained by forward() for the matching backward()."""

    inputs: list[np.ndarray]  # x fed to each layer
    preacts: list[np.ndarray]  # z = x @ W.T + b
    outputs: list[np.ndarray]  # act(z)


@dataclass
class SgdOptimizer:
    """Plain gradient descent; the only optimizer the training loops use."""

    learning_rate: float

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ShapeError("learning_rate must be positive")

    def step(self, model: Mlp, grads: Gradients) -> Mlp:
        return sgd_step(model, grads, self.learning_rate)


def new_layer(
    in_size: int, out_size: int, activation: str, rng: np.random.Generator
) -> DenseLayer:
    """He-style fan-in uniform initialization; zero bias; prelu alpha 0.25."""
    limit = np.sqrt(6.0 / in_size)
    weights = rng.uniform(-limit, limit, size=(out_size, in_size))
    bias = np.zeros(out_size)
    alpha = np.full(out_size, PRELU_ALPHA_INIT) if activation == "prelu" else None
    layer = DenseLayer(weights, bias, activation, alpha)
    layer.validate()
    return layer


def new_mlp(sizes: list[int], activations: list[str], rng: np.random.Generator) -> Mlp:
    """Build an Mlp with len(sizes)-1 layers; sizes chain input to output."""
    if len(activations) != len(sizes) - 1:
        raise ShapeError("need one activation per layer")
    layers = [
        new_layer(sizes[i], sizes[i + 1], activations[i], rng)
        for i in range(len(activations))
    ]
    model = Mlp(layers)
    model.validate()
    return model


def clone_mlp(model: Mlp) -> Mlp:
    return Mlp(
        [
            DenseLayer(
                l.weights.copy(),
                l.bias.copy(),
                l.activation,
                None if l.alpha is None else l.alpha.copy(),
            )
            for l in model.layers
        ]
    )


def _apply_activation(layer: DenseLayer, z: np.ndarray) -> np.ndarray:
    if layer.activation == "identity":
        return z
    if layer.activation == "prelu":
        return np.where(z > 0, z, layer.alpha[None, :] * z)
    if layer.activation == "selu":
        return SELU_SCALE * np.where(z > 0, z, SELU_ALPHA * (np.exp(z) - 1.0))
    if layer.activation == "softmax":
        shifted = z - z.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)
    raise ShapeError(f"unknown activation {layer.activation!r}")


def forward(model: Mlp, batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run the batch through the model; returns output and a backward cache."""
    if batch.ndim != 2:
        raise ShapeError(f"batch must be 2-D, got shape {batch.shape}")
    if batch.shape[0] < 1:
        raise ShapeError("batch must contain at least one row")
    if batch.shape[1] != model.in_size:
        raise ShapeError(
            f"batch has {batch.shape[1]} columns, model expects {model.in_size}"
        )
    x = np.asarray(batch, dtype=np.float64)
    inputs, preacts, outputs = [], [], []
    for layer in model.layers:
        inputs.append(x)
        z = x @ layer.weights.T + layer.bias[None, :]
        a = _apply_activation(layer, z)
        preacts.append(z)
        outputs.append(a)
        x = a
    return x, ForwardCache(inputs, preacts, outputs)


def backward(model: Mlp, cache: ForwardCache, out_grad: np.ndarray) -> Gradients:
    """Backpropagate d(loss)/d(output) through the cached forward pass.

    The returned gradients are exactly those of the scalar loss whose output
    gradient was supplied (any batch averaging must already live in out_grad).
    """
    if len(cache.preacts) != len(model.layers):
        raise ShapeError("cache does not match model depth")
    g = np.asarray(out_grad, dtype=np.float64)
    if g.shape != cache.outputs[-1].shape:
        raise ShapeError(
            f"output gradient shape {g.shape} does not match output "
            f"{cache.outputs[-1].shape}"
        )
    layer_grads: list[LayerGradients] = [None] * len(model.layers)  # type: ignore[list-item]
    for idx in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[idx]
        z = cache.preacts[idx]
        x = cache.inputs[idx]
        if z.shape[1] != layer.out_size or x.shape[1] != layer.in_size:
            raise ShapeError("cache does not match model layer shapes")
        alpha_grad = None
        if layer.activation == "identity":
            dz = g
        elif layer.activation == "prelu":
            pos = z > 0
            dz = g * np.where(pos, 1.0, layer.alpha[None, :])
            alpha_grad = np.sum(g * np.where(pos, 0.0, z), axis=0)
        elif layer.activation == "selu":
            dz = g * SELU_SCALE * np.where(z > 0, 1.0, SELU_ALPHA * np.exp(z))
        elif layer.activation == "softmax":
            p = cache.outputs[idx]
            inner = np.sum(p * g, axis=1, keepdims=True)
            dz = p * (g - inner)
        else:
            raise ShapeError(f"unknown activation {layer.activation!r}")
        layer_grads[idx] = LayerGradients(dz.T @ x, dz.sum(axis=0), alpha_grad)
        g = dz @ layer.weights
    return Gradients(layer_grads)


def input_gradient(model: Mlp, cache: ForwardCache, out_grad: np.ndarray) -> np.ndarray:
    """d(loss)/d(batch input), same chain rule as backward()."""
    g = np.asarray(out_grad, dtype=np.float64)
    for idx in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[idx]
        z = cache.preacts[idx]
        if layer.activation == "identity":
            dz = g
        elif layer.activation == "prelu":
            dz = g * np.where(z > 0, 1.0, layer.alpha[None, :])
        elif layer.activation == "selu":
            dz = g * SELU_SCALE * np.where(z > 0, 1.0, SELU_ALPHA * np.exp(z))
        elif layer.activation == "softmax":
            p = cache.outputs[idx]
            inner = np.sum(p * g, axis=1, keepdims=True)
            dz = p * (g - inner)
        else:
            raise ShapeError(f"unknown activation {layer.activation!r}")
        g = dz @ layer.weights
    return g


def softmax_cross_entropy(
    probs: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray]:
    """Batch-mean cross-entropy between probability rows and target rows.

    Returns the loss and its gradient with respect to ``probs`` (ready to be
    fed to backward() of a softmax-terminated model).  Probabilities are
    clamped to PROB_FLOOR before the log.
    """
    p = np.asarray(probs, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 2:
        raise ShapeError(f"probs {p.shape} and targets {t.shape} must match and be 2-D")
    if np.any(t < 0) or np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-6):
        raise ShapeError("each target row must be a probability distribution")
    n = p.shape[0]
    clamped = np.maximum(p, PROB_FLOOR)
    loss = -float(np.sum(t * np.log(clamped)) / n)
    grad = np.where(p > PROB_FLOOR, -t / clamped / n, 0.0)
    return loss, grad


def sgd_step(model: Mlp, grads: Gradients, lr: float) -> Mlp:
    """p <- p - lr * g for every parameter; returns a new Mlp."""
    if lr < 0:
        raise ShapeError("learning rate must be nonnegative")
    if len(grads.layers) != len(model.layers):
        raise ShapeError("gradients do not match model depth")
    new_layers = []
    for layer, g in zip(model.layers, grads.layers):
        if g.weights.shape != layer.weights.shape or g.bias.shape != layer.bias.shape:
            raise ShapeError("gradient shapes do not match layer shapes")
        alpha = None
        if layer.alpha is not None:
            if g.alpha is None or g.alpha.shape != layer.alpha.shape:
                raise ShapeError("missing or mis-shaped alpha gradient")
            alpha = layer.alpha - lr * g.alpha
        new_layers.append(
            DenseLayer(
                layer.weights - lr * g.weights,
                layer.bias - lr * g.bias,
                layer.activation,
                alpha,
            )
        )
    return Mlp(new_layers)


def zero_gradients(model: Mlp) -> Gradients:
    return Gradients(
        [
            LayerGradients(
                np.zeros_like(l.weights),
                np.zeros_like(l.bias),
                None if l.alpha is None else np.zeros_like(l.alpha),
            )
            for l in model.layers
        ]
    )


def parameters_equal(a: Mlp, b: Mlp) -> bool:
    """Bit-exact parameter comparison (used by stage-isolation checks)."""
    if len(a.layers) != len(b.layers):
        return False
    for la, lb in zip(a.layers, b.layers):
        if la.activation != lb.activation:
            return False
        if not np.array_equal(la.weights, lb.weights):
            return False
        if not np.array_equal(la.bias, lb.bias):
            return False
        if (la.alpha is None) != (lb.alpha is None):
            return False
        if la.alpha is not None and not np.array_equal(la.alpha, lb.alpha):
            return False
    return True

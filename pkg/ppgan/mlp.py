"""
Multilayer perceptrons with hand-written forward/backward passes.

The backward pass exposes PER-EXAMPLE parameter gradients (one flattened vector
per batch row), which is what the private critic step clips.

Conventions:
- layer i computes a_out = act(a_in @ W + b), W has shape (d_in, d_out)
- flatten order: for each layer in order, W row-major then b
"""
import logging
from dataclasses import dataclass
from typing import List, Literal, Sequence, Tuple

import numpy as np

from .errors import ShapeError
from .ndnum import Matrix, RngStream, Vector, matmul, sample_uniform

logger = logging.getLogger(__name__)

Activation = Literal['relu', 'tanh', 'linear']
_ACTIVATIONS = ('relu', 'tanh', 'linear')


@dataclass
class MlpParams:
    """Ordered (weight, bias) layers with one activation tag per layer."""
    layers: List[Tuple[Matrix, Vector]]
    activations: List[Activation]

    def __post_init__(self):
        if len(self.layers) != len(self.activations):
            raise ShapeError(f"{len(self.layers)} layers but {len(self.activations)} activations")
        if not self.layers:
            raise ShapeError("an MLP needs at least one layer")
        for i, ((weight, bias), act) in enumerate(zip(self.layers, self.activations)):
            if act not in _ACTIVATIONS:
                raise ShapeError(f"layer {i}: unknown activation {act!r}")
            if weight.ndim != 2 or bias.shape != (weight.shape[1],):
                raise ShapeError(f"layer {i}: weight {weight.shape} / bias {bias.shape} mismatch")
            if i > 0 and self.layers[i - 1][0].shape[1] != weight.shape[0]:
                raise ShapeError(f"layer {i}: input dim {weight.shape[0]} does not chain "
                                 f"with previous output dim {self.layers[i - 1][0].shape[1]}")

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    @property
    def shapes(self) -> List[Tuple[int, int]]:
        return [w.shape for w, _ in self.layers]

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)


@dataclass
class PerExampleGrads:
    """One flattened gradient per batch row: array of shape (m, num_params)."""
    per_example: np.ndarray

    def __len__(self):
        return self.per_example.shape[0]

    def total(self) -> Vector:
        """Fixed-order reduction over examples."""
        return np.sum(self.per_example, axis=0)


@dataclass
class FlatView:
    """Concatenation of every layer's weights then bias, in layer order."""
    values: Vector


def init_mlp(dims: Sequence[int], activations: Sequence[Activation], rng: RngStream) -> MlpParams:
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] for weights and biases."""
    if len(dims) != len(activations) + 1:
        raise ShapeError("need len(dims) == len(activations) + 1")
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(d_in)
        weight = sample_uniform(rng, d_in * d_out, -bound, bound).reshape(d_in, d_out)
        bias = sample_uniform(rng, d_out, -bound, bound)
        layers.append((weight, bias))
    return MlpParams(layers, list(activations))


def generator_mlp(latent_dim: int, hidden_dim: int, data_dim: int, rng: RngStream) -> MlpParams:
    """latent -> hidden relu -> data tanh."""
    return init_mlp([latent_dim, hidden_dim, data_dim], ['relu', 'tanh'], rng)


def critic_mlp(data_dim: int, hidden_dim: int, rng: RngStream) -> MlpParams:
    """data -> hidden relu -> 1 linear (WGAN critic, no sigmoid)."""
    return init_mlp([data_dim, hidden_dim, 1], ['relu', 'linear'], rng)


def _activate(z: Matrix, act: str) -> Matrix:
    if act == 'relu':
        return np.maximum(z, 0.0)
    if act == 'tanh':
        return np.tanh(z)
    return z


def _activation_grad(z: Matrix, a: Matrix, act: str) -> Matrix:
    if act == 'relu':
        return (z > 0).astype(np.float64)
    if act == 'tanh':
        return 1.0 - a * a
    return np.ones_like(z)


def _forward_cache(params: MlpParams, batch: Matrix):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != params.input_dim:
        raise ShapeError(f"batch shape {batch.shape} does not match input dim {params.input_dim}")
    inputs, pre, outs = [], [], []
    a = batch
    for (weight, bias), act in zip(params.layers, params.activations):
        inputs.append(a)
        z = matmul(a, weight) + bias
        a = _activate(z, act)
        pre.append(z)
        outs.append(a)
    return inputs, pre, outs


def forward(params: MlpParams, batch: Matrix) -> Matrix:
    """Per-row network outputs, shape (m, d_out)."""
    _, _, outs = _forward_cache(params, batch)
    return outs[-1]


def _backprop(params: MlpParams, batch: Matrix, upstream: Matrix):
    """Layer inputs, per-layer deltas (dL/dz) and the gradient w.r.t. the batch."""
    inputs, pre, outs = _forward_cache(params, batch)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != outs[-1].shape:
        raise ShapeError(f"upstream shape {upstream.shape} does not match output {outs[-1].shape}")

    deltas = [None] * len(params.layers)
    grad = upstream
    for i in reversed(range(len(params.layers))):
        delta = grad * _activation_grad(pre[i], outs[i], params.activations[i])
        deltas[i] = delta
        grad = matmul(delta, params.layers[i][0].T)
    return inputs, deltas, grad


def backward_per_example(params: MlpParams, batch: Matrix, upstream: Matrix) -> PerExampleGrads:
    """
    Per-example gradients of upstream[i] . forward(params, batch[i]).

    Computed with batched outer products; row order matches the batch.
    """
    batch = np.asarray(batch, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.ndim != 2 or upstream.shape[0] != batch.shape[0]:
        raise ShapeError(f"upstream rows {upstream.shape} do not match batch rows {batch.shape[0]}")

    inputs, deltas, _ = _backprop(params, batch, upstream)
    m = batch.shape[0]
    pieces = []
    for a_in, delta in zip(inputs, deltas):
        pieces.append((a_in[:, :, None] * delta[:, None, :]).reshape(m, -1))
        pieces.append(delta)
    return PerExampleGrads(np.concatenate(pieces, axis=1))


def backward(params: MlpParams, batch: Matrix, upstream: Matrix) -> Tuple[Vector, Matrix]:
    """
    Gradient of sum_i upstream[i] . forward(params, batch[i]).

    Returns:
        (flattened parameter gradient, gradient w.r.t. the batch)
    """
    inputs, deltas, input_grad = _backprop(params, batch, upstream)
    pieces = []
    for a_in, delta in zip(inputs, deltas):
        pieces.append(matmul(a_in.T, delta).reshape(-1))
        pieces.append(np.sum(delta, axis=0))
    return np.concatenate(pieces), input_grad


def flatten(params: MlpParams) -> FlatView:
    """
    Parameters as one vector, layer by layer: each layer's weight matrix in
    row-major order followed by its bias. A single layer with W = [[1, 2], [3, 4]]
    and b = [5, 6] flattens to [1, 2, 3, 4, 5, 6]; a second layer's values follow.
    Checkpoints and per-example gradient rows use this same order.
    """
    pieces = []
    for weight, bias in params.layers:
        pieces.append(weight.reshape(-1))
        pieces.append(bias)
    return FlatView(np.concatenate(pieces).astype(np.float64))


def unflatten(view: FlatView, like: MlpParams) -> MlpParams:
    """Rebuild parameters shaped like `like` from a flat view."""
    values = np.asarray(view.values if isinstance(view, FlatView) else view, dtype=np.float64)
    if values.shape != (like.num_params,):
        raise ShapeError(f"flat view has {values.size} values, params need {like.num_params}")
    layers = []
    offset = 0
    for weight, bias in like.layers:
        w = values[offset:offset + weight.size].reshape(weight.shape).copy()
        offset += weight.size
        b = values[offset:offset + bias.size].copy()
        offset += bias.size
        layers.append((w, b))
    return MlpParams(layers, list(like.activations))


def from_shapes(shapes: Sequence[Tuple[int, int]], activations: Sequence[Activation],
                values: Vector) -> MlpParams:
    """Rebuild parameters from layer shapes plus a flat vector (checkpoint loading)."""
    template = MlpParams([(np.zeros(s), np.zeros(s[1])) for s in shapes], list(activations))
    return unflatten(FlatView(values), template)

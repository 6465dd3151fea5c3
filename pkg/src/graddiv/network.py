"""Fully-connected networks with exact square-loss gradients.

A network is a chain of dense layers with one activation kind applied between
layers (never after the last one).  Per-example gradients of the square loss
are produced by backpropagation; since each layer gradient is the outer
product of a backward delta and a forward activation, norms and sums of
per-example gradients can be accumulated without materializing one flat
vector per example (see :func:`gradient_moments`), which is what makes
full-dataset diversity snapshots affordable.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .rng import SeedKey, generator


class ActivationKind(enum.Enum):
    LINEAR = "linear"
    TANH = "tanh"
    SOFTSIGN = "softsign"
    ARCTAN = "arctan"
    RELU = "relu"

    @property
    def c_max(self) -> float:
        """Uniform bound on |activation|; inf for the unbounded kinds."""
        return _C_MAX[self]

    @property
    def bounded(self) -> bool:
        """True for the odd, bounded, monotone activations the nonlinear theory covers."""
        return math.isfinite(_C_MAX[self])


_C_MAX = {
    ActivationKind.LINEAR: math.inf,
    ActivationKind.TANH: 1.0,
    ActivationKind.SOFTSIGN: 1.0,
    ActivationKind.ARCTAN: math.pi / 2,
    ActivationKind.RELU: math.inf,
}


def activation_value(kind: ActivationKind, z: np.ndarray) -> np.ndarray:
    if kind is ActivationKind.LINEAR:
        return z
    if kind is ActivationKind.TANH:
        return np.tanh(z)
    if kind is ActivationKind.SOFTSIGN:
        return z / (1.0 + np.abs(z))
    if kind is ActivationKind.ARCTAN:
        return np.arctan(z)
    if kind is ActivationKind.RELU:
        return np.maximum(z, 0.0)
    raise ValueError(f"unknown activation {kind}")


def activation_derivative(kind: ActivationKind, z: np.ndarray) -> np.ndarray:
    if kind is ActivationKind.LINEAR:
        return np.ones_like(z)
    if kind is ActivationKind.TANH:
        t = np.tanh(z)
        return 1.0 - t * t
    if kind is ActivationKind.SOFTSIGN:
        u = 1.0 + np.abs(z)
        return 1.0 / (u * u)
    if kind is ActivationKind.ARCTAN:
        return 1.0 / (1.0 + z * z)
    if kind is ActivationKind.RELU:
        # subgradient at 0 fixed as 0 so gradient checks are deterministic
        return (z > 0.0).astype(np.float64)
    raise ValueError(f"unknown activation {kind}")


def activation_eval(kind: ActivationKind, x: float) -> Tuple[float, float]:
    """(sigma(x), sigma'(x)) for a scalar input."""
    z = np.float64(x)
    return float(activation_value(kind, z)), float(activation_derivative(kind, z))


@functools.lru_cache(maxsize=None)
def c_sup(kind: ActivationKind, grid_half_width: float = 100.0, points: int = 200001) -> float:
    """sup_x x*sigma'(x), maximized numerically on a symmetric grid.

    The bounded activations have a finite supremum but no published constant,
    so the value is pinned by grid maximization at build time; LINEAR and RELU
    grow without bound and report inf.
    """
    if kind in (ActivationKind.LINEAR, ActivationKind.RELU):
        return math.inf
    x = np.linspace(-grid_half_width, grid_half_width, points)
    return float(np.max(x * activation_derivative(kind, x)))


@dataclass(frozen=True)
class NetworkShape:
    """Layer widths K_0..K_L plus the activation kind.

    K_0 is the input dimension, K_L the output dimension (1 for the scalar
    regression networks the theory covers; the classification harness widens
    the last layer to the class count).
    """

    widths: Tuple[int, ...]
    activation: ActivationKind = ActivationKind.LINEAR

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 2:
            raise ValueError("a network needs at least input and output layers")
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")

    @property
    def depth(self) -> int:
        """Number of weight layers L."""
        return len(self.widths) - 1

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def output_dim(self) -> int:
        return self.widths[-1]

    def layer_dims(self) -> List[Tuple[int, int]]:
        """(rows, cols) of W_1..W_L."""
        return [(self.widths[i + 1], self.widths[i]) for i in range(self.depth)]

    def parameter_count(self) -> int:
        return sum(r * c for r, c in self.layer_dims())


@dataclass(frozen=True)
class WeightStack:
    """The matrices W_1..W_L of one network (or teacher)."""

    matrices: Tuple[np.ndarray, ...]
    shape: NetworkShape

    def __post_init__(self):
        dims = self.shape.layer_dims()
        if len(self.matrices) != len(dims):
            raise ValueError(f"expected {len(dims)} matrices, got {len(self.matrices)}")
        mats = []
        for idx, (m, want) in enumerate(zip(self.matrices, dims)):
            m = np.asarray(m, dtype=np.float64)
            if m.shape != want:
                raise ValueError(f"layer {idx + 1} has shape {m.shape}, expected {want}")
            mats.append(np.ascontiguousarray(m))
        object.__setattr__(self, "matrices", tuple(mats))

    def flat(self) -> np.ndarray:
        """All weights as one vector, layer-major then row-major."""
        return np.concatenate([m.ravel() for m in self.matrices])

    def replace_flat(self, vec: np.ndarray) -> "WeightStack":
        """A stack with the same shape whose weights come from ``vec``."""
        mats = []
        pos = 0
        for r, c in self.shape.layer_dims():
            mats.append(vec[pos : pos + r * c].reshape(r, c).copy())
            pos += r * c
        if pos != vec.size:
            raise ValueError("flat vector length does not match parameter count")
        return WeightStack(tuple(mats), self.shape)


@dataclass(frozen=True)
class Dataset:
    """n input vectors with regression targets or integer class labels."""

    inputs: np.ndarray
    targets: np.ndarray
    classes: Optional[int] = None

    def __post_init__(self):
        x = np.ascontiguousarray(np.asarray(self.inputs, dtype=np.float64))
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("inputs must be a nonempty (n, d) array")
        object.__setattr__(self, "inputs", x)
        t = np.asarray(self.targets)
        if t.shape[0] != x.shape[0]:
            raise ValueError("inputs and targets disagree on n")
        if self.classes is None:
            object.__setattr__(self, "targets", np.ascontiguousarray(t, dtype=np.float64))
        else:
            labels = np.ascontiguousarray(t, dtype=np.int64)
            if labels.min() < 0 or labels.max() >= self.classes:
                raise ValueError("labels out of range for declared class count")
            object.__setattr__(self, "targets", labels)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def target_matrix(self, output_dim: int) -> np.ndarray:
        """Targets as an (n, output_dim) float matrix (one-hot for labels)."""
        if self.classes is None:
            t = self.targets.reshape(self.n, -1)
            if t.shape[1] != output_dim:
                raise ValueError(f"targets have width {t.shape[1]}, network outputs {output_dim}")
            return t
        if output_dim != self.classes:
            raise ValueError("network output width must equal the class count")
        onehot = np.zeros((self.n, output_dim))
        onehot[np.arange(self.n), self.targets] = 1.0
        return onehot


@dataclass(frozen=True)
class GradientRecord:
    """Per-example loss, flat gradient, and prediction."""

    loss: float
    gradient: np.ndarray
    prediction: float


def sample_teacher(shape: NetworkShape, key: SeedKey) -> WeightStack:
    """A stack with every entry i.i.d. N(0,1); deterministic given ``key``."""
    gen = generator(key)
    mats = tuple(gen.standard_normal(dims) for dims in shape.layer_dims())
    return WeightStack(mats, shape)


def init_training_weights(shape: NetworkShape, key: SeedKey) -> WeightStack:
    """Training initialization: per-layer Gaussian with variance 1/fan-in.

    The theory side keeps pure N(0,1) stacks (see :func:`sample_teacher`);
    unit-variance initialization makes deep stacks explode during training.
    """
    gen = generator(key)
    mats = []
    for rows, cols in shape.layer_dims():
        mats.append(gen.standard_normal((rows, cols)) / math.sqrt(cols))
    return WeightStack(tuple(mats), shape)


def _forward_pass(weights: WeightStack, X: np.ndarray):
    """Activations H_0..H_{L-1}, pre-activations Z_1..Z_{L-1}, and outputs."""
    kind = weights.shape.activation
    H = [X]
    Z = []
    mats = weights.matrices
    for W in mats[:-1]:
        z = H[-1] @ W.T
        Z.append(z)
        H.append(activation_value(kind, z))
    out = H[-1] @ mats[-1].T
    return H, Z, out


def forward_batch(weights: WeightStack, X: np.ndarray) -> np.ndarray:
    """(B, output_dim) network outputs for a batch of rows."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != weights.shape.input_dim:
        raise ValueError(f"inputs have dim {X.shape[1]}, network expects {weights.shape.input_dim}")
    return _forward_pass(weights, X)[2]


def forward(weights: WeightStack, x) -> float:
    """Scalar output for one input; only defined for single-output networks."""
    if weights.shape.output_dim != 1:
        raise ValueError("forward() is for single-output networks; use forward_batch")
    out = forward_batch(weights, np.asarray(x, dtype=np.float64).reshape(1, -1))
    return float(out[0, 0])


def _backward_deltas(weights: WeightStack, H, Z, E):
    """Backward deltas for every layer, output layer first in layer order."""
    kind = weights.shape.activation
    mats = weights.matrices
    L = len(mats)
    deltas = [None] * L
    deltas[L - 1] = E
    for layer in range(L - 2, -1, -1):
        back = deltas[layer + 1] @ mats[layer + 1]
        deltas[layer] = back * activation_derivative(kind, Z[layer])
    return deltas


def batch_loss_and_gradient_sum(weights: WeightStack, X: np.ndarray, Y: np.ndarray):
    """Total loss and the per-layer SUM of per-example gradients over the batch.

    This is the quantity the mini-batch update consumes: the sum (not the
    mean) of B per-example gradients.
    """
    H, Z, out = _forward_pass(weights, X)
    E = out - Y
    loss = 0.5 * float(np.square(E).sum())
    deltas = _backward_deltas(weights, H, Z, E)
    grads = [deltas[layer].T @ H[layer] for layer in range(len(weights.matrices))]
    return loss, grads, out


def per_example_flat_gradients(weights: WeightStack, X: np.ndarray, Y: np.ndarray):
    """Per-example losses and flat gradients, materialized as a (B, P) matrix."""
    H, Z, out = _forward_pass(weights, X)
    E = out - Y
    losses = 0.5 * np.square(E).sum(axis=1)
    deltas = _backward_deltas(weights, H, Z, E)
    blocks = []
    for layer in range(len(weights.matrices)):
        g = np.einsum("bp,bq->bpq", deltas[layer], H[layer])
        blocks.append(g.reshape(X.shape[0], -1))
    return losses, np.concatenate(blocks, axis=1), out


def gradient_moments(weights: WeightStack, X: np.ndarray, Y: np.ndarray, chunk: int = 4096):
    """(sum of ||g_i||^2, flat sum of g_i, total loss) over all rows of X.

    Exploits the outer-product structure of layer gradients: the squared norm
    of delta (x) h factors into ||delta||^2 * ||h||^2, and the sum over
    examples of delta_i (x) h_i is one matrix product per layer.  Memory stays
    O(P + chunk * width) instead of O(n * P).
    """
    n = X.shape[0]
    mats = weights.matrices
    sum_sq = 0.0
    total_loss = 0.0
    grad_sums = [np.zeros_like(W) for W in mats]
    for start in range(0, n, chunk):
        xb = X[start : start + chunk]
        yb = Y[start : start + chunk]
        H, Z, out = _forward_pass(weights, xb)
        E = out - yb
        total_loss += 0.5 * float(np.square(E).sum())
        deltas = _backward_deltas(weights, H, Z, E)
        for layer in range(len(mats)):
            d = deltas[layer]
            h = H[layer]
            sum_sq += float(np.square(d).sum(axis=1) @ np.square(h).sum(axis=1))
            grad_sums[layer] += d.T @ h
    flat_sum = np.concatenate([g.ravel() for g in grad_sums])
    return sum_sq, flat_sum, total_loss


def per_example_gradient(weights: WeightStack, x, y: float) -> GradientRecord:
    """Exact gradient of 0.5*(forward(w, x) - y)^2 with respect to every weight.

    Layout is layer-major then row-major, matching :meth:`WeightStack.flat`.
    """
    if weights.shape.output_dim != 1:
        raise ValueError("per_example_gradient() is for single-output networks")
    X = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if X.shape[1] != weights.shape.input_dim:
        raise ValueError(f"input has dim {X.shape[1]}, network expects {weights.shape.input_dim}")
    Y = np.array([[float(y)]])
    losses, grads, out = per_example_flat_gradients(weights, X, Y)
    return GradientRecord(float(losses[0]), grads[0], float(out[0, 0]))


def batch_gradients(weights: WeightStack, data: Dataset, indices: Sequence[int]) -> List[GradientRecord]:
    """Per-example gradient records for the given example indices.

    Duplicate indices yield duplicate records (sampling with replacement).
    """
    idx = np.asarray(list(indices), dtype=np.int64)
    if idx.size == 0:
        return []
    if idx.min() < 0 or idx.max() >= data.n:
        raise ValueError(f"index out of range [0, {data.n})")
    X = data.inputs[idx]
    Y = data.target_matrix(weights.shape.output_dim)[idx]
    losses, grads, out = per_example_flat_gradients(weights, X, Y)
    pred = out[:, 0] if weights.shape.output_dim == 1 else np.argmax(out, axis=1).astype(np.float64)
    return [GradientRecord(float(losses[j]), grads[j], float(pred[j])) for j in range(idx.size)]


def product_matrix(weights: WeightStack) -> np.ndarray:
    """W_L @ ... @ W_1; for linear activation the whole network collapses to this."""
    prod = weights.matrices[0]
    for W in weights.matrices[1:]:
        prod = W @ prod
    return prod

"""Dense-network primitives: init, forward/backward, Adam, finite-difference checks.

Everything is float64 numpy. The networks here are small fixed MLPs (the
attribute classifiers used elsewhere in the package); the backward pass is
hand-written and verifiable against central differences via
:func:`gradient_check`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

SNAPSHOT_MAGIC = b"LEGONN01"

RELU = "relu"
IDENTITY = "identity"

_MAX_CHECK_PARAMS = 10_000


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)
    activation: str = RELU


@dataclass
class DenseNetwork:
    layers: list[Layer]

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[0]

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list [W0, b0, W1, b1, ...], views into the layers."""
        out = []
        for layer in self.layers:
            out.append(layer.weights)
            out.append(layer.biases)
        return out

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "DenseNetwork":
        return DenseNetwork(
            [Layer(l.weights.copy(), l.biases.copy(), l.activation) for l in self.layers]
        )


@dataclass
class GradientBundle:
    """Gradients in the same [dW0, db0, dW1, db1, ...] order as ``parameters()``."""

    param_grads: list[np.ndarray]
    input_grads: np.ndarray | None = None


@dataclass
class OptimizerState:
    """Adam state; moments are allocated lazily to match the first step's params."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moments: list[np.ndarray] = field(default_factory=list)
    second_moments: list[np.ndarray] = field(default_factory=list)


def init_network(layer_sizes: list[int], seed: int) -> DenseNetwork:
    """Build an MLP with ReLU hidden layers and an identity (logit) output layer.

    Weights are uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero; the
    same seed always produces bit-identical parameters.
    """
    if len(layer_sizes) < 2:
        raise ValueError(f"need at least input and output sizes, got {layer_sizes}")
    if any(int(s) <= 0 or int(s) != s for s in layer_sizes):
        raise ValueError(f"layer sizes must be positive integers, got {layer_sizes}")
    rng = np.random.default_rng(seed)
    layers = []
    n_layers = len(layer_sizes) - 1
    for i in range(n_layers):
        fan_in, fan_out = layer_sizes[i], layer_sizes[i + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        biases = np.zeros(fan_out)
        activation = IDENTITY if i == n_layers - 1 else RELU
        layers.append(Layer(weights, biases, activation))
    return DenseNetwork(layers)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == RELU:
        return np.maximum(z, 0.0)
    if activation == IDENTITY:
        return z
    raise ValueError(f"unknown activation {activation!r}")


def _forward_cached(net: DenseNetwork, batch: np.ndarray):
    """Forward pass keeping per-layer inputs and pre-activations for backprop."""
    if batch.ndim != 2 or batch.shape[1] != net.input_dim:
        raise ValueError(
            f"batch shape {batch.shape} incompatible with input dim {net.input_dim}"
        )
    h = np.asarray(batch, dtype=np.float64)
    inputs, preacts = [], []
    for layer in net.layers:
        inputs.append(h)
        z = h @ layer.weights.T + layer.biases
        preacts.append(z)
        h = _activate(z, layer.activation)
    return h, inputs, preacts


def forward(net: DenseNetwork, batch: np.ndarray) -> np.ndarray:
    """Logits for a (B, input_dim) batch. Deterministic; raises on shape mismatch."""
    logits, _, _ = _forward_cached(net, batch)
    return logits


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax with max subtraction for stability."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def log_softmax_nll(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of integer labels plus the logit gradient.

    The gradient is (softmax - onehot) / B, so every row sums to zero.
    """
    labels = np.asarray(labels)
    batch = logits.shape[0]
    if batch == 0:
        raise ValueError("empty batch")
    if labels.shape != (batch,):
        raise ValueError(f"labels shape {labels.shape} != ({batch},)")
    n_classes = logits.shape[1]
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels outside [0, {n_classes})")
    logp = log_softmax(logits)
    rows = np.arange(batch)
    loss = -float(logp[rows, labels].mean())
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad /= batch
    return loss, grad


def backward(net: DenseNetwork, batch: np.ndarray, logit_grads: np.ndarray) -> GradientBundle:
    """Backpropagate upstream logit gradients to parameter and input gradients."""
    logits, inputs, preacts = _forward_cached(net, batch)
    if logit_grads.shape != logits.shape:
        raise ValueError(f"upstream shape {logit_grads.shape} != {logits.shape}")
    delta = np.asarray(logit_grads, dtype=np.float64)
    param_grads: list[np.ndarray] = [None] * (2 * len(net.layers))
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if layer.activation == RELU:
            delta = delta * (preacts[i] > 0)
        param_grads[2 * i] = delta.T @ inputs[i]
        param_grads[2 * i + 1] = delta.sum(axis=0)
        delta = delta @ layer.weights
    return GradientBundle(param_grads=param_grads, input_grads=delta)


def optimizer_step(
    state: OptimizerState, params: list[np.ndarray], grads: list[np.ndarray]
) -> list[np.ndarray]:
    """One bias-corrected Adam step, applied to ``params`` in place.

    Rejects non-finite gradients with a diagnostic rather than poisoning the
    moment accumulators.
    """
    if len(params) != len(grads):
        raise ValueError("params/grads length mismatch")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"param {i}: shape {p.shape} vs grad {g.shape}")
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for parameter {i}")
    if not state.first_moments:
        state.first_moments = [np.zeros_like(p) for p in params]
        state.second_moments = [np.zeros_like(p) for p in params]
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moments, state.second_moments):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)
    return params


def _nll_loss(net: DenseNetwork, batch: np.ndarray, labels: np.ndarray) -> float:
    loss, _ = log_softmax_nll(forward(net, batch), labels)
    return loss


def fd_relative_error(
    net: DenseNetwork,
    batch: np.ndarray,
    labels: np.ndarray,
    bundle: GradientBundle,
    h: float = 1e-5,
) -> float:
    """Max relative error of ``bundle`` against central differences of the NLL.

    Components where both gradients are below 1e-8 are skipped (dead-ReLU
    directions legitimately carry zero gradient on both sides).
    """
    worst = 0.0

    def compare(arr: np.ndarray, analytic: np.ndarray) -> None:
        nonlocal worst
        flat = arr.reshape(-1)
        aflat = analytic.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = _nll_loss(net, batch, labels)
            flat[j] = orig - h
            down = _nll_loss(net, batch, labels)
            flat[j] = orig
            numeric = (up - down) / (2.0 * h)
            denom = max(abs(aflat[j]), abs(numeric))
            if denom < 1e-8:
                continue
            worst = max(worst, abs(aflat[j] - numeric) / denom)

    for param, grad in zip(net.parameters(), bundle.param_grads):
        compare(param, grad)
    if bundle.input_grads is not None:
        compare(batch, bundle.input_grads)
    return worst


def gradient_check(net: DenseNetwork, batch: np.ndarray, labels: np.ndarray) -> float:
    """Compare analytic NLL gradients (parameters and inputs) to central differences.

    Intended for small nets only; refuses anything above 1e4 parameters.
    """
    if net.n_parameters() > _MAX_CHECK_PARAMS:
        raise ValueError(f"net too large for FD check ({net.n_parameters()} params)")
    batch = np.array(batch, dtype=np.float64)
    _, logit_grads = log_softmax_nll(forward(net, batch), labels)
    bundle = backward(net, batch, logit_grads)
    return fd_relative_error(net, batch, labels, bundle)


def save_network(net: DenseNetwork, path) -> None:
    """Snapshot: magic, then per layer u32 rows, u32 cols, f64 weights (row-major), f64 biases."""
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        for layer in net.layers:
            rows, cols = layer.weights.shape
            fh.write(struct.pack("<II", rows, cols))
            fh.write(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(layer.biases, dtype="<f8").tobytes())


def load_network(path) -> DenseNetwork:
    """Read a snapshot back, parsing layer blocks until EOF.

    Activations are reconstructed as ReLU for hidden layers, identity for the
    final layer (the only two architectures this package produces).
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(SNAPSHOT_MAGIC))
        if magic != SNAPSHOT_MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        layers = []
        while True:
            header = fh.read(8)
            if not header:
                break
            if len(header) != 8:
                raise ValueError("truncated layer header")
            rows, cols = struct.unpack("<II", header)
            wbytes = fh.read(8 * rows * cols)
            bbytes = fh.read(8 * rows)
            if len(wbytes) != 8 * rows * cols or len(bbytes) != 8 * rows:
                raise ValueError("truncated layer payload")
            weights = np.frombuffer(wbytes, dtype="<f8").reshape(rows, cols).copy()
            biases = np.frombuffer(bbytes, dtype="<f8").copy()
            layers.append(Layer(weights, biases, RELU))
    if not layers:
        raise ValueError("snapshot contains no layers")
    for layer in layers[:-1]:
        layer.activation = RELU
    layers[-1].activation = IDENTITY
    return DenseNetwork(layers)

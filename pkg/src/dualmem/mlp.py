"""A small feedforward rectifier network with explicit forward, loss, and
gradient computation. Inputs may be single vectors or (batch, d) matrices;
batch losses are means over the batch, with the squared-logit distance summed
per sample.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class MlpNet:
    """Fully connected net, rectifier hidden activations, linear output."""

    def __init__(self, layer_sizes, seed: int | np.random.Generator = 0):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output layer sizes")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.layer_sizes = [int(s) for s in layer_sizes]
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b


@dataclass
class ForwardTrace:
    inputs: np.ndarray                 # (B, d)
    pre_activations: list[np.ndarray]  # per layer, (B, width)
    activations: list[np.ndarray]      # post-rectifier hidden outputs
    logits: np.ndarray


def forward(net: MlpNet, x) -> tuple[np.ndarray, ForwardTrace]:
    """Deterministic forward pass; returns logits and the tape for backward."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    batch = arr[None, :] if single else arr
    if batch.shape[1] != net.layer_sizes[0]:
        raise ValueError(f"input dim {batch.shape[1]} != expected {net.layer_sizes[0]}")
    pre, act = [], []
    h = batch
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        pre.append(z)
        if i < last:
            h = np.maximum(z, 0.0)
            act.append(h)
    logits = pre[-1]
    trace = ForwardTrace(inputs=batch, pre_activations=pre, activations=act, logits=logits)
    return (logits[0] if single else logits), trace


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits, labels) -> float:
    """-log softmax(logits)[label]; mean over the batch for 2-D input."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim == 1:
        return float(-log_softmax(logits)[int(labels)])
    labels = np.asarray(labels)
    rows = -log_softmax(logits)[np.arange(len(labels)), labels]
    return float(rows.mean())


def grad_cross_entropy(logits: np.ndarray, labels) -> np.ndarray:
    """d/dlogits of the (batch-mean) cross entropy: softmax - onehot."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels))
    probs = np.exp(log_softmax(logits))
    probs[np.arange(len(labels)), labels] -= 1.0
    return probs / len(labels)


def mse_logits(z_stored, z_current) -> float:
    """Squared Euclidean distance, summed per sample, mean over a batch."""
    a = np.asarray(z_stored, dtype=np.float64)
    b = np.asarray(z_current, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"logit shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 1:
        return float(((a - b) ** 2).sum())
    return float(((a - b) ** 2).sum(axis=1).mean())


def grad_mse_logits(z_current: np.ndarray, z_stored: np.ndarray) -> np.ndarray:
    """d/dz_current of mse_logits: 2 (z_current - z_stored) / batch."""
    cur = np.atleast_2d(np.asarray(z_current, dtype=np.float64))
    stored = np.atleast_2d(np.asarray(z_stored, dtype=np.float64))
    return 2.0 * (cur - stored) / cur.shape[0]


def backward(net: MlpNet, trace: ForwardTrace, grad_logits: np.ndarray):
    """Exact parameter gradients for a loss whose logit gradient is given.

    Returns [(dW, db), ...] per layer, matching net.weights / net.biases.
    """
    grad_logits = np.atleast_2d(np.asarray(grad_logits, dtype=np.float64))
    grads = [None] * len(net.weights)
    delta = grad_logits
    for i in range(len(net.weights) - 1, -1, -1):
        upstream = trace.inputs if i == 0 else trace.activations[i - 1]
        grads[i] = (upstream.T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ net.weights[i].T) * (trace.pre_activations[i - 1] > 0.0)
    return grads


def add_scaled(total, grads, scale: float):
    """total += scale * grads, allocating on first use."""
    if total is None:
        return [(scale * dw, scale * db) for dw, db in grads]
    return [(tw + scale * dw, tb + scale * db) for (tw, tb), (dw, db) in zip(total, grads)]


def sgd_step(net: MlpNet, grads, lr: float) -> MlpNet:
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for i, (dw, db) in enumerate(grads):
        net.weights[i] -= lr * dw
        net.biases[i] -= lr * db
    return net


def predict(net: MlpNet, features: np.ndarray, allowed: np.ndarray | None = None) -> np.ndarray:
    """Argmax class ids (lowest index wins ties), optionally masked to a label set."""
    logits, _ = forward(net, np.atleast_2d(features))
    if allowed is None:
        return np.argmax(logits, axis=1)
    allowed = np.asarray(sorted(allowed))
    return allowed[np.argmax(logits[:, allowed], axis=1)]


def save_params(net: MlpNet, path) -> None:
    header = {"layer_sizes": net.layer_sizes, "dtype": "<f8"}
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("ascii") + b"\n")
        for p in net.parameters():
            f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_params(path) -> MlpNet:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("ascii"))
        net = MlpNet(header["layer_sizes"], seed=0)
        for i, (fan_in, fan_out) in enumerate(zip(net.layer_sizes[:-1], net.layer_sizes[1:])):
            w = np.frombuffer(f.read(fan_in * fan_out * 8), dtype="<f8").reshape(fan_in, fan_out)
            b = np.frombuffer(f.read(fan_out * 8), dtype="<f8")
            net.weights[i] = w.copy()
            net.biases[i] = b.copy()
    return net

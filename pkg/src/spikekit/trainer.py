"""Minimal built-in trainer for dense ReLU MLP fixtures.

Plain SGD on softmax cross-entropy, He-style fan-in initialization, and a
seeded ``numpy.random.Generator`` (PCG64) so runs are bit-reproducible.
Training math runs in float64; the exported model is float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, SpikekitError
from .graph import Layer, ModelGraph, dense, input_layer, relu


class TrainingDiverged(SpikekitError):
    """Loss became non-finite during training."""


@dataclass
class TrainConfig:
    widths: list  # full layer widths, input through output
    epochs: int = 20
    learning_rate: float = 0.1
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ConfigurationError(f"invalid layer widths {self.widths}")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning rate must be positive")


def make_blobs(
    n_samples: int,
    n_classes: int = 10,
    dim: int = 16,
    noise: float = 0.08,
    seed: int = 0,
    center_seed: int = 1234,
):
    """Gaussian class blobs clipped to [0, 1].

    Centers depend only on ``center_seed`` so train and test splits drawn with
    different ``seed`` values share the same class geometry.
    """
    centers = np.random.default_rng(center_seed).uniform(0.2, 0.8, size=(n_classes, dim))
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, n_classes, size=n_samples)
    x = centers[labels] + rng.normal(0.0, noise, size=(n_samples, dim))
    return np.clip(x, 0.0, 1.0).astype(np.float32), labels.astype(np.int64)


def _init_params(widths, rng):
    params = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        params.append([W, np.zeros(fan_out)])
    return params


def _forward(params, x):
    """Returns (logits, per-layer post-ReLU activations incl. the input)."""
    acts = [x]
    a = x
    for i, (W, b) in enumerate(params):
        z = a @ W.T + b
        a = np.maximum(z, 0.0) if i < len(params) - 1 else z
        acts.append(a)
    return a, acts


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, y):
    p = _softmax(logits)
    return float(-np.mean(np.log(p[np.arange(len(y)), y] + 1e-12)))


def _backward(params, acts, y):
    """Mean-CE gradients for every (W, b)."""
    n = len(y)
    logits = acts[-1]
    delta = _softmax(logits)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = [None] * len(params)
    for i in range(len(params) - 1, -1, -1):
        a_prev = acts[i]
        grads[i] = (delta.T @ a_prev, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ params[i][0]) * (acts[i] > 0)
    return grads


def _params_to_model(params, in_dim) -> ModelGraph:
    layers: list[Layer] = [input_layer((in_dim,))]
    for i, (W, b) in enumerate(params):
        layers.append(dense(W.astype(np.float32), b.astype(np.float32)))
        if i < len(params) - 1:
            layers.append(relu())
    return ModelGraph(input_shape=(in_dim,), layers=layers)


def _model_to_params(model: ModelGraph):
    return [
        [layer.params["W"].astype(np.float64), layer.params["b"].astype(np.float64)]
        for layer in model.layers
        if layer.kind == "dense"
    ]


def accuracy(logits, y) -> float:
    return float(np.mean(np.argmax(logits, axis=-1) == y))


def train_mlp(cfg: TrainConfig, train_set, test_set=None):
    """Train a dense ReLU MLP; returns (model, info).

    ``info`` carries per-epoch losses and final train/test accuracies.
    """
    x, y = train_set
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.shape[1] != cfg.widths[0]:
        raise ConfigurationError(
            f"input dim {x.shape[1]} does not match widths[0]={cfg.widths[0]}"
        )
    rng = np.random.default_rng(cfg.seed)
    params = _init_params(cfg.widths, rng)
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, acts = _forward(params, x[idx])
            grads = _backward(params, acts, y[idx])
            for (W, b), (gW, gb) in zip(params, grads):
                W -= cfg.learning_rate * gW
                b -= cfg.learning_rate * gb
        logits, _ = _forward(params, x)
        loss = cross_entropy(logits, y)
        if not np.isfinite(loss):
            raise TrainingDiverged(
                f"loss became non-finite at epoch {epoch} (seed {cfg.seed})"
            )
        losses.append(loss)
    logits, _ = _forward(params, x)
    info = {"losses": losses, "train_accuracy": accuracy(logits, y)}
    if test_set is not None:
        xt = np.asarray(test_set[0], dtype=np.float64)
        yt = np.asarray(test_set[1], dtype=np.int64)
        info["test_accuracy"] = accuracy(_forward(params, xt)[0], yt)
    return _params_to_model(params, cfg.widths[0]), info


def grad_check(model: ModelGraph, x, y, h: float = 1e-3) -> float:
    """Max relative error of analytic gradients vs central finite differences.

    Runs on float64 shadow parameters; intended for small fixture models.
    """
    params = _model_to_params(model)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _, acts = _forward(params, x)
    grads = _backward(params, acts, y)

    def loss_at():
        logits, _ = _forward(params, x)
        return cross_entropy(logits, y)

    worst = 0.0
    for (W, b), (gW, gb) in zip(params, grads):
        for arr, g in ((W, gW), (b, gb)):
            flat = arr.ravel()
            gflat = np.asarray(g).ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                lp = loss_at()
                flat[i] = orig - h
                lm = loss_at()
                flat[i] = orig
                fd = (lp - lm) / (2 * h)
                denom = max(abs(fd) + abs(gflat[i]), 1e-6)
                worst = max(worst, abs(fd - gflat[i]) / denom)
    return worst

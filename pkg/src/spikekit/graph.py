"""In-memory model graph: layer specs, parameters, and shape propagation."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

LINEAR_KINDS = ("dense", "conv2d")
LAYER_KINDS = (
    "input",
    "dense",
    "conv2d",
    "batchnorm",
    "relu",
    "maxpool2d",
    "avgpool2d",
    "flatten",
    "residual",
)


@dataclass
class Layer:
    """One layer of a model graph.

    ``attrs`` holds kind-specific hyperparameters, ``params`` holds named
    float32 arrays.  Residual layers carry nested ``body`` and ``shortcut``
    lists; an empty shortcut means identity.  ``shortcut_gain`` is the scalar
    applied to the shortcut path (set during weight normalization).
    """

    kind: str
    attrs: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    body: list["Layer"] = field(default_factory=list)
    shortcut: list["Layer"] = field(default_factory=list)
    shortcut_gain: float = 1.0
    # Normalization-point names, filled in by ann.annotate_points.
    in_point: str | None = None
    out_point: str | None = None


def input_layer(shape) -> Layer:
    return Layer("input", attrs={"shape": [int(s) for s in shape]})


def dense(W, b) -> Layer:
    W = np.asarray(W, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    return Layer("dense", attrs={"units": int(W.shape[0])}, params={"W": W, "b": b})


def conv2d(W, b, stride: int = 1, pad: int = 0) -> Layer:
    W = np.asarray(W, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    return Layer(
        "conv2d",
        attrs={
            "out_channels": int(W.shape[0]),
            "kernel": [int(W.shape[2]), int(W.shape[3])],
            "stride": int(stride),
            "pad": int(pad),
        },
        params={"W": W, "b": b},
    )


def batchnorm(gamma, beta, mu, theta) -> Layer:
    params = {
        "gamma": np.asarray(gamma, dtype=np.float32),
        "beta": np.asarray(beta, dtype=np.float32),
        "mu": np.asarray(mu, dtype=np.float32),
        "theta": np.asarray(theta, dtype=np.float32),
    }
    return Layer("batchnorm", params=params)


def relu() -> Layer:
    return Layer("relu")


def maxpool2d(k: int, stride: int | None = None) -> Layer:
    return Layer("maxpool2d", attrs={"k": int(k), "stride": int(stride or k)})


def avgpool2d(k: int, stride: int | None = None) -> Layer:
    return Layer("avgpool2d", attrs={"k": int(k), "stride": int(stride or k)})


def flatten() -> Layer:
    return Layer("flatten")


def residual(body: list[Layer], shortcut: list[Layer] | None = None) -> Layer:
    return Layer("residual", body=list(body), shortcut=list(shortcut or []))


@dataclass
class ModelGraph:
    """Ordered layer description of an ANN plus its parameter blobs."""

    input_shape: tuple
    layers: list[Layer]

    def copy(self) -> "ModelGraph":
        return copy.deepcopy(self)

    def validate(self) -> list[tuple]:
        """Shape-check the whole graph; returns per-layer output shapes."""
        return infer_shapes(self)


_REQUIRED_PARAMS = {
    "dense": ("W", "b"),
    "conv2d": ("W", "b"),
    "batchnorm": ("gamma", "beta", "mu", "theta"),
}


def _layer_out_shape(layer: Layer, shape: tuple, where: str) -> tuple:
    kind = layer.kind
    for pname in _REQUIRED_PARAMS.get(kind, ()):
        if pname not in layer.params:
            raise ValidationError(f"{where}: {kind} is missing parameter blob {pname!r}")
    if kind == "dense":
        W = layer.params["W"]
        if len(shape) != 1 or shape[0] != W.shape[1]:
            raise ValidationError(
                f"{where}: dense expects input ({W.shape[1]},), got {shape}"
            )
        return (W.shape[0],)
    if kind == "conv2d":
        W = layer.params["W"]
        stride, pad = layer.attrs["stride"], layer.attrs["pad"]
        if len(shape) != 3 or shape[0] != W.shape[1]:
            raise ValidationError(
                f"{where}: conv2d expects input ({W.shape[1]}, H, W), got {shape}"
            )
        kh, kw = W.shape[2], W.shape[3]
        h, w = shape[1], shape[2]
        if (h + 2 * pad - kh) % stride or (w + 2 * pad - kw) % stride:
            raise ValidationError(
                f"{where}: conv2d output size is non-integral for input {shape}"
            )
        return (
            W.shape[0],
            (h + 2 * pad - kh) // stride + 1,
            (w + 2 * pad - kw) // stride + 1,
        )
    if kind == "batchnorm":
        c = layer.params["gamma"].shape[0]
        feat = shape[0] if len(shape) >= 1 else None
        if feat != c:
            raise ValidationError(
                f"{where}: batchnorm parameter length {c} does not match input {shape}"
            )
        return shape
    if kind == "relu":
        return shape
    if kind in ("maxpool2d", "avgpool2d"):
        k, stride = layer.attrs["k"], layer.attrs["stride"]
        if len(shape) != 3:
            raise ValidationError(f"{where}: {kind} expects a 3-D input, got {shape}")
        c, h, w = shape
        if k > h or k > w or (h - k) % stride or (w - k) % stride:
            raise ValidationError(
                f"{where}: {kind} window {k}/stride {stride} does not tile input {shape}"
            )
        return (c, (h - k) // stride + 1, (w - k) // stride + 1)
    if kind == "flatten":
        return (int(np.prod(shape)),)
    if kind == "residual":
        body_shape = _seq_out_shape(layer.body, shape, f"{where}.body")
        short_shape = _seq_out_shape(layer.shortcut, shape, f"{where}.shortcut")
        if body_shape != short_shape:
            raise ValidationError(
                f"{where}: residual body output {body_shape} != shortcut output {short_shape}"
            )
        return body_shape
    raise ValidationError(f"{where}: unknown layer kind {kind!r}")


def _seq_out_shape(layers: list[Layer], shape: tuple, where: str) -> tuple:
    for i, layer in enumerate(layers):
        shape = _layer_out_shape(layer, shape, f"{where}[{i}]")
    return shape


def _check_bn_placement(layers: list[Layer], where: str) -> None:
    prev_kind = None
    for i, layer in enumerate(layers):
        if layer.kind == "batchnorm" and prev_kind not in LINEAR_KINDS:
            raise ValidationError(
                f"{where}[{i}]: batchnorm must immediately follow dense or conv2d"
            )
        if layer.kind == "residual":
            _check_bn_placement(layer.body, f"{where}[{i}].body")
            _check_bn_placement(layer.shortcut, f"{where}[{i}].shortcut")
        prev_kind = layer.kind


def infer_shapes(model: ModelGraph) -> list[tuple]:
    """Validate the graph and return the output shape of every top-level layer."""
    if not model.layers:
        raise ValidationError("model must contain an input layer")
    first = model.layers[0]
    if first.kind != "input":
        raise ValidationError("model must start with an input layer")
    shape = tuple(first.attrs["shape"])
    if tuple(model.input_shape) != shape:
        raise ValidationError(
            f"input layer shape {shape} does not match declared {tuple(model.input_shape)}"
        )
    _check_bn_placement(model.layers, "layers")
    shapes = [shape]
    for i, layer in enumerate(model.layers[1:], start=1):
        if layer.kind == "input":
            raise ValidationError(f"layers[{i}]: input layer only allowed first")
        shape = _layer_out_shape(layer, shape, f"layers[{i}]")
        shapes.append(shape)
    return shapes


def iter_layers(layers: list[Layer]):
    """Depth-first iteration over layers, descending into residual blocks."""
    for layer in layers:
        yield layer
        if layer.kind == "residual":
            yield from iter_layers(layer.body)
            yield from iter_layers(layer.shortcut)

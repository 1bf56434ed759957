"""ANN inference with activation capture, plus the conversion-side transforms:
batch-norm folding, quantile calibration, data-based weight normalization, and
residual shortcut scaling.

Normalization points
--------------------
Weight scaling operates on named "points" of the graph: the model input, every
ReLU output (including ReLUs inside residual bodies), every residual block
output (post-add, post-ReLU; the block input reuses the preceding point), and
the final logits ("output").  ``annotate_points`` assigns a deterministic name
to each point and stamps every linear layer with its input/output point.
Residual body layers are normalized against their own body-internal ReLU
points; identity shortcuts instead receive a scalar gain of
``lambda_in / lambda_out``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError, ValidationError
from .graph import LINEAR_KINDS, Layer, ModelGraph, infer_shapes
from .tensor_ops import (
    bn_forward,
    conv2d_forward,
    dense_forward,
    pool2d_forward,
    relu_forward,
)

INPUT_POINT = "input"
OUTPUT_POINT = "output"

# An activation record maps point name -> captured float32 tensor.
ActivationRecord = dict


@dataclass
class CalibrationStats:
    """Per-point activation maxima (p-quantile) collected on a calibration set."""

    lambdas: dict = field(default_factory=dict)
    p_max: float = 1.0

    def to_dict(self) -> dict:
        return {
            "p_max": self.p_max,
            "lambdas": {k: float(v) for k, v in self.lambdas.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationStats":
        return cls(lambdas=dict(d["lambdas"]), p_max=float(d["p_max"]))


# ---------------------------------------------------------------------------
# Point annotation


class _PointCounter:
    def __init__(self):
        self.n = 0
        self.points = [INPUT_POINT]

    def new(self) -> str:
        self.n += 1
        name = f"p{self.n}"
        self.points.append(name)
        return name


def _annotate_seq(layers: list[Layer], entry: str, counter: _PointCounter) -> tuple:
    """Annotate a layer sequence; returns (exit_point, pending_linear)."""
    cur = entry
    pending = None
    for layer in layers:
        kind = layer.kind
        if kind == "input":
            continue
        if kind == "batchnorm":
            raise ConfigurationError(
                "batchnorm layers must be folded before calibration/normalization"
            )
        if kind in LINEAR_KINDS:
            if pending is not None:
                raise ConfigurationError(
                    "consecutive linear layers without an activation between them "
                    "are not supported by weight normalization"
                )
            layer.in_point = cur
            layer.out_point = None
            pending = layer
            cur = None
        elif kind == "relu":
            point = counter.new()
            if pending is not None:
                pending.out_point = point
                pending = None
            layer.out_point = point
            cur = point
        elif kind in ("maxpool2d", "avgpool2d", "flatten"):
            pass  # scale-preserving; the current point carries through
        elif kind == "residual":
            if pending is not None:
                raise ConfigurationError(
                    "a residual block must be preceded by an activation"
                )
            layer.in_point = cur
            out_point = counter.new()
            _, body_pending = _annotate_seq(layer.body, cur, counter)
            if body_pending is None:
                raise ConfigurationError(
                    "residual body must end with a dense/conv2d layer"
                )
            body_pending.out_point = out_point
            if layer.shortcut:
                _, short_pending = _annotate_seq(layer.shortcut, cur, counter)
                if short_pending is None:
                    raise ConfigurationError(
                        "a non-identity shortcut must be a linear projection"
                    )
                short_pending.out_point = out_point
            layer.out_point = out_point
            cur = out_point
        else:
            raise ConfigurationError(f"unsupported layer kind {layer.kind!r}")
    return cur, pending


def annotate_points(model: ModelGraph) -> list:
    """Stamp in/out points on every linear layer; returns all point names."""
    counter = _PointCounter()
    exit_point, pending = _annotate_seq(model.layers, INPUT_POINT, counter)
    if pending is not None:
        pending.out_point = OUTPUT_POINT
        counter.points.append(OUTPUT_POINT)
    elif exit_point is not None:
        # Model ends on an activation; its point doubles as the output point.
        pass
    return counter.points


# ---------------------------------------------------------------------------
# Forward pass


def _forward_layer(layer: Layer, x, record, batched: bool):
    kind = layer.kind
    if kind == "input":
        return x
    if kind == "dense":
        return dense_forward(layer.params["W"], layer.params["b"], x)
    if kind == "conv2d":
        return conv2d_forward(
            layer.params["W"],
            layer.params["b"],
            x,
            stride=layer.attrs["stride"],
            pad=layer.attrs["pad"],
        )
    if kind == "batchnorm":
        p = layer.params
        return bn_forward(x, p["mu"], p["theta"], p["gamma"], p["beta"])
    if kind == "relu":
        y = relu_forward(x)
        if record is not None and layer.out_point is not None:
            record[layer.out_point] = y
        return y
    if kind in ("maxpool2d", "avgpool2d"):
        return pool2d_forward(
            x, "max" if kind == "maxpool2d" else "avg", layer.attrs["k"], layer.attrs["stride"]
        )
    if kind == "flatten":
        return x.reshape(x.shape[0], -1) if batched else x.reshape(-1)
    if kind == "residual":
        body = _forward_seq(layer.body, x, record, batched)
        short = _forward_seq(layer.shortcut, x, record, batched) if layer.shortcut else x
        y = relu_forward(body + np.float32(layer.shortcut_gain) * short)
        if record is not None and layer.out_point is not None:
            record[layer.out_point] = y
        return y
    raise ConfigurationError(f"unsupported layer kind {kind!r}")


def _forward_seq(layers, x, record, batched: bool):
    for layer in layers:
        x = _forward_layer(layer, x, record, batched)
    return x


def run_inference(model: ModelGraph, x, capture: bool = False):
    """Deterministic forward pass; optionally captures every point activation.

    ``x`` may be a single sample matching ``input_shape`` or a batch with one
    extra leading dimension.  Returns ``(logits, record)`` where ``record`` is
    ``None`` unless ``capture`` is set.
    """
    x = np.asarray(x, dtype=np.float32)
    in_shape = tuple(model.input_shape)
    if x.shape != in_shape and x.shape[1:] != in_shape:
        raise ValidationError(
            f"input shape {x.shape} does not match model input {in_shape}"
        )
    batched = x.shape != in_shape
    record = None
    if capture:
        annotate_points(model)
        record = {INPUT_POINT: x}
    y = _forward_seq(model.layers, x, record, batched)
    if record is not None:
        last = model.layers[-1] if model.layers else None
        if last is not None and last.kind not in ("relu", "residual"):
            record[OUTPUT_POINT] = y
    return y, record


# ---------------------------------------------------------------------------
# Batch-norm folding


def _fold_seq(layers: list[Layer], where: str) -> list[Layer]:
    out: list[Layer] = []
    for i, layer in enumerate(layers):
        if layer.kind == "batchnorm":
            if not out or out[-1].kind not in LINEAR_KINDS:
                raise ValidationError(
                    f"{where}[{i}]: batchnorm does not follow a dense/conv2d layer"
                )
            prev = out[-1]
            p = layer.params
            scale = p["gamma"].astype(np.float64) / p["theta"].astype(np.float64)
            W = prev.params["W"].astype(np.float64)
            b = prev.params["b"].astype(np.float64)
            shape = (-1,) + (1,) * (W.ndim - 1)
            prev.params["W"] = (W * scale.reshape(shape)).astype(np.float32)
            prev.params["b"] = (
                scale * (b - p["mu"].astype(np.float64)) + p["beta"].astype(np.float64)
            ).astype(np.float32)
            continue
        new = Layer(
            layer.kind,
            attrs=dict(layer.attrs),
            params={k: v.copy() for k, v in layer.params.items()},
            shortcut_gain=layer.shortcut_gain,
        )
        if layer.kind == "residual":
            new.body = _fold_seq(layer.body, f"{where}[{i}].body")
            new.shortcut = _fold_seq(layer.shortcut, f"{where}[{i}].shortcut")
        out.append(new)
    return out


def fold_batchnorm(model: ModelGraph) -> ModelGraph:
    """Merge every batchnorm into its preceding linear layer.

    The returned graph computes the same forward function but contains no
    batchnorm layers.
    """
    folded = ModelGraph(
        input_shape=tuple(model.input_shape),
        layers=_fold_seq(model.layers, "layers"),
    )
    infer_shapes(folded)
    return folded


# ---------------------------------------------------------------------------
# Calibration and normalization


def nearest_rank_quantile(values: np.ndarray, p: float) -> float:
    """ceil(p*N)-th smallest value of a flat array."""
    if not 0.0 < p <= 1.0:
        raise DomainError(f"quantile level must be in (0, 1], got {p}")
    values = np.asarray(values).ravel()
    if values.size == 0:
        raise DomainError("quantile of an empty value set")
    rank = math.ceil(p * values.size)
    return float(np.partition(values, rank - 1)[rank - 1])


def collect_lambdas(
    model: ModelGraph, calib_inputs, p_max: float = 1.0, batch_size: int = 256
) -> CalibrationStats:
    """Per-point activation quantiles over a calibration set.

    Points whose quantile is zero (dead layers) fall back to lambda = 1 with a
    warning; any positive value is equivalent there.
    """
    calib_inputs = np.asarray(calib_inputs, dtype=np.float32)
    if calib_inputs.shape[0] == 0:
        raise ConfigurationError("calibration set is empty")
    if not 0.0 < p_max <= 1.0:
        raise DomainError(f"p_max must be in (0, 1], got {p_max}")
    points = annotate_points(model)
    buckets: dict[str, list] = {p: [] for p in points}
    for start in range(0, calib_inputs.shape[0], batch_size):
        batch = calib_inputs[start : start + batch_size]
        _, record = run_inference(model, batch, capture=True)
        for point, value in record.items():
            buckets[point].append(np.asarray(value, dtype=np.float32).ravel())
    lambdas = {}
    for point in points:
        values = np.concatenate(buckets[point])
        lam = nearest_rank_quantile(values, p_max)
        if lam <= 0.0:
            warnings.warn(
                f"normalization point {point!r} has a non-positive activation "
                f"quantile; using lambda = 1",
                stacklevel=2,
            )
            lam = 1.0
        lambdas[point] = lam
    return CalibrationStats(lambdas=lambdas, p_max=p_max)


def _lambda(stats: CalibrationStats, point: str) -> float:
    if point not in stats.lambdas:
        raise ValidationError(f"calibration stats are missing point {point!r}")
    return float(stats.lambdas[point])


def _normalize_seq(layers: list[Layer], stats: CalibrationStats) -> None:
    for layer in layers:
        if layer.kind in LINEAR_KINDS:
            lam_in = _lambda(stats, layer.in_point)
            lam_out = _lambda(stats, layer.out_point)
            W = layer.params["W"].astype(np.float64)
            b = layer.params["b"].astype(np.float64)
            layer.params["W"] = (W * (lam_in / lam_out)).astype(np.float32)
            layer.params["b"] = (b / lam_out).astype(np.float32)
        elif layer.kind == "residual":
            _normalize_seq(layer.body, stats)
            if layer.shortcut:
                _normalize_seq(layer.shortcut, stats)
                layer.shortcut_gain = 1.0
            else:
                layer.shortcut_gain = residual_scale(stats, layer)


def normalize_weights(model: ModelGraph, stats: CalibrationStats) -> ModelGraph:
    """Rescale weights so every point activation is at most ~1 on the
    calibration set; positive per-layer scaling preserves the logits argmax."""
    normalized = model.copy()
    annotate_points(normalized)
    _normalize_seq(normalized.layers, stats)
    return normalized


def residual_scale(stats: CalibrationStats, block: Layer) -> float:
    """Shortcut gain lambda_in / lambda_out for a residual block."""
    if block.in_point is None or block.out_point is None:
        raise ValidationError("residual block has no annotated points")
    return _lambda(stats, block.in_point) / _lambda(stats, block.out_point)

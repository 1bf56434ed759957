"""Portable on-disk formats: model manifests, weight blobs, and datasets.

A model directory holds ``model.json`` (UTF-8 manifest) and ``weights.bin``
(concatenated float32 little-endian values, row-major per blob, at the byte
offsets recorded in the manifest's blob index).  Datasets are read either
from IDX files (MNIST's native format) or from BSD fixture files:

    magic "BSD1" | u32 N | u32 rank r | r x u32 dims
    | N * prod(dims) float32 LE samples | N bytes of u8 labels
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError, ModelFormatError, ValidationError
from .graph import Layer, ModelGraph, infer_shapes

MANIFEST_VERSION = 1
MANIFEST_NAME = "model.json"
WEIGHTS_NAME = "weights.bin"

_KEEP_ATTRS = {
    "input": ("shape",),
    "dense": ("units",),
    "conv2d": ("out_channels", "kernel", "stride", "pad"),
    "maxpool2d": ("k", "stride"),
    "avgpool2d": ("k", "stride"),
}


def _layer_to_dict(layer: Layer, prefix: str, blobs: list) -> dict:
    d = {"kind": layer.kind}
    for key in _KEEP_ATTRS.get(layer.kind, ()):
        d[key] = layer.attrs[key]
    if layer.params:
        d["blobs"] = {}
        for pname, arr in layer.params.items():
            blob_name = f"{prefix}.{pname}"
            d["blobs"][pname] = blob_name
            blobs.append((blob_name, arr))
    if layer.kind == "residual":
        d["body"] = [
            _layer_to_dict(sub, f"{prefix}.body{i}", blobs)
            for i, sub in enumerate(layer.body)
        ]
        d["shortcut"] = [
            _layer_to_dict(sub, f"{prefix}.shortcut{i}", blobs)
            for i, sub in enumerate(layer.shortcut)
        ]
        d["shortcut_gain"] = float(layer.shortcut_gain)
    return d


def _layer_from_dict(d: dict, blob_index: dict, blob_data: dict, where: str) -> Layer:
    kind = d.get("kind")
    attrs = {key: d[key] for key in _KEEP_ATTRS.get(kind, ())}
    params = {}
    for pname, blob_name in d.get("blobs", {}).items():
        if blob_name not in blob_index:
            raise ModelFormatError(f"{where}: dangling blob reference {blob_name!r}")
        params[pname] = blob_data[blob_name]
    layer = Layer(kind, attrs=attrs, params=params)
    if kind == "residual":
        layer.body = [
            _layer_from_dict(sub, blob_index, blob_data, f"{where}.body[{i}]")
            for i, sub in enumerate(d.get("body", []))
        ]
        layer.shortcut = [
            _layer_from_dict(sub, blob_index, blob_data, f"{where}.shortcut[{i}]")
            for i, sub in enumerate(d.get("shortcut", []))
        ]
        layer.shortcut_gain = float(d.get("shortcut_gain", 1.0))
    return layer


def save_model(model: ModelGraph, dir_path) -> None:
    """Write ``model.json`` + ``weights.bin`` after validating the graph."""
    infer_shapes(model)  # raises ValidationError before anything is written
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    blobs: list[tuple[str, np.ndarray]] = []
    layer_dicts = [
        _layer_to_dict(layer, f"L{i}", blobs) for i, layer in enumerate(model.layers)
    ]
    blob_index = {}
    offset = 0
    with open(dir_path / WEIGHTS_NAME, "wb") as f:
        for name, arr in blobs:
            arr = np.ascontiguousarray(arr, dtype="<f4")
            blob_index[name] = {"offset": offset, "shape": list(arr.shape)}
            f.write(arr.tobytes())
            offset += arr.nbytes
    manifest = {
        "version": MANIFEST_VERSION,
        "input_shape": [int(s) for s in model.input_shape],
        "layers": layer_dicts,
        "blob_index": blob_index,
    }
    with open(dir_path / MANIFEST_NAME, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1)
        f.write("\n")


def load_model(dir_path) -> ModelGraph:
    """Load and fully validate a model directory."""
    dir_path = Path(dir_path)
    try:
        with open(dir_path / MANIFEST_NAME, encoding="utf-8") as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"unparsable manifest: {e}") from e
    version = manifest.get("version")
    if version != MANIFEST_VERSION:
        raise ModelFormatError(
            f"unsupported manifest version {version!r} (expected {MANIFEST_VERSION})"
        )
    raw = (dir_path / WEIGHTS_NAME).read_bytes()
    blob_index = manifest.get("blob_index", {})
    blob_data = {}
    for name, entry in blob_index.items():
        offset, shape = int(entry["offset"]), tuple(int(s) for s in entry["shape"])
        nbytes = 4 * int(np.prod(shape))
        if offset < 0 or offset + nbytes > len(raw):
            raise ModelFormatError(
                f"weights file truncated: blob {name!r} needs bytes "
                f"[{offset}, {offset + nbytes}) of {len(raw)}"
            )
        blob_data[name] = np.frombuffer(
            raw, dtype="<f4", count=nbytes // 4, offset=offset
        ).reshape(shape).copy()
    layers = [
        _layer_from_dict(d, blob_index, blob_data, f"layers[{i}]")
        for i, d in enumerate(manifest.get("layers", []))
    ]
    model = ModelGraph(
        input_shape=tuple(int(s) for s in manifest.get("input_shape", [])),
        layers=layers,
    )
    infer_shapes(model)  # ValidationError on any structural violation
    return model


# ---------------------------------------------------------------------------
# Datasets


def write_bsd(path, inputs, labels) -> None:
    """Write a BSD fixture file (float32 samples + u8 labels)."""
    inputs = np.ascontiguousarray(inputs, dtype="<f4")
    labels = np.asarray(labels, dtype=np.uint8)
    if inputs.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"sample count {inputs.shape[0]} != label count {labels.shape[0]}"
        )
    dims = inputs.shape[1:]
    with open(path, "wb") as f:
        f.write(b"BSD1")
        f.write(struct.pack("<II", inputs.shape[0], len(dims)))
        f.write(struct.pack(f"<{len(dims)}I", *dims))
        f.write(inputs.tobytes())
        f.write(labels.tobytes())


def load_bsd(path):
    raw = Path(path).read_bytes()
    if raw[:4] != b"BSD1":
        raise DataFormatError(f"{path}: bad magic {raw[:4]!r} (expected b'BSD1')")
    n, rank = struct.unpack_from("<II", raw, 4)
    dims = struct.unpack_from(f"<{rank}I", raw, 12)
    count = n * int(np.prod(dims)) if rank else n
    data_off = 12 + 4 * rank
    expected = data_off + 4 * count + n
    if len(raw) != expected:
        raise DataFormatError(
            f"{path}: element count mismatch (file has {len(raw)} bytes, "
            f"header implies {expected})"
        )
    inputs = np.frombuffer(raw, dtype="<f4", count=count, offset=data_off)
    inputs = inputs.reshape((n,) + dims).copy()
    labels = np.frombuffer(raw, dtype=np.uint8, count=n, offset=data_off + 4 * count)
    return inputs, labels.astype(np.int64)


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def load_idx_images(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic != IDX_IMAGES_MAGIC:
        raise DataFormatError(f"{path}: bad IDX image magic 0x{magic:08x}")
    n, h, w = struct.unpack_from(">III", raw, 4)
    if len(raw) != 16 + n * h * w:
        raise DataFormatError(f"{path}: element count mismatch for {n}x{h}x{w} u8")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16)
    return pixels.reshape(n, h, w).astype(np.float32)


def load_idx_labels(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic != IDX_LABELS_MAGIC:
        raise DataFormatError(f"{path}: bad IDX label magic 0x{magic:08x}")
    (n,) = struct.unpack_from(">I", raw, 4)
    if len(raw) != 8 + n:
        raise DataFormatError(f"{path}: element count mismatch for {n} labels")
    return np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)


def _idx_labels_sibling(images_path: Path) -> Path:
    name = images_path.name.replace("images", "labels").replace("idx3", "idx1")
    sibling = images_path.with_name(name)
    if name == images_path.name or not sibling.exists():
        raise DataFormatError(
            f"cannot locate IDX label file next to {images_path} (looked for {name!r})"
        )
    return sibling


def load_dataset(path, format: str):
    """Load (inputs, labels) from a BSD file or an IDX image/label pair.

    For ``format='idx'`` the path names the image file; the label file is
    found by the conventional images->labels / idx3->idx1 name substitution.
    Inputs are returned raw; any input scaling is applied by the caller.
    """
    path = Path(path)
    if format == "bsd":
        return load_bsd(path)
    if format == "idx":
        images = load_idx_images(path)
        labels = load_idx_labels(_idx_labels_sibling(path))
        if images.shape[0] != labels.shape[0]:
            raise DataFormatError(
                f"{path}: {images.shape[0]} images but {labels.shape[0]} labels"
            )
        return images, labels
    raise DataFormatError(f"unknown dataset format {format!r}")

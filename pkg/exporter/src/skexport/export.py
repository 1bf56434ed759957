"""Torch-to-spikekit export and round-trip verification.

Weight layouts transfer directly: torch Linear stores W[out][in] and Conv2d
stores W[oc][ic][kh][kw], both row-major, which is exactly the blob layout of
the target format.  Batchnorm is exported unfolded with theta = sqrt(var+eps)
so the primary engine's folding step stays testable end-to-end.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from torch import nn

import spikekit as sk

from .recipes import ExportRecipe, Residual, build_net, load_digits_split

REFERENCE_INPUTS = "reference_inputs.bsd"
REFERENCE_OUTPUTS = "reference_outputs.bsd"


class ExportError(Exception):
    """A torch module cannot be represented in the target model format."""


class VerifyError(Exception):
    """Round-trip deviation exceeded the failure threshold."""


def _pool_attrs(mod) -> tuple[int, int]:
    k, stride = mod.kernel_size, mod.stride
    if isinstance(k, tuple):
        if k[0] != k[1]:
            raise ExportError(f"non-square pooling kernel {k} is unsupported")
        k = k[0]
    if isinstance(stride, tuple):
        stride = stride[0]
    if getattr(mod, "padding", 0) not in (0, (0, 0)):
        raise ExportError("padded pooling is unsupported")
    if getattr(mod, "ceil_mode", False):
        raise ExportError("ceil_mode pooling is unsupported")
    if isinstance(mod, nn.MaxPool2d) and stride != k:
        raise ExportError(
            f"overlapping max-pool (kernel {k}, stride {stride}) is unsupported"
        )
    return int(k), int(stride)


def _layer_from_module(mod) -> sk.Layer:
    if isinstance(mod, nn.Conv2d):
        if mod.padding_mode != "zeros":
            raise ExportError(f"padding mode {mod.padding_mode!r} is unsupported")
        W = mod.weight.detach().numpy()
        b = (
            mod.bias.detach().numpy()
            if mod.bias is not None
            else np.zeros(W.shape[0], np.float32)
        )
        return sk.conv2d(W, b, stride=int(mod.stride[0]), pad=int(mod.padding[0]))
    if isinstance(mod, nn.BatchNorm2d):
        theta = torch.sqrt(mod.running_var + mod.eps).detach().numpy()
        return sk.batchnorm(
            mod.weight.detach().numpy(),
            mod.bias.detach().numpy(),
            mod.running_mean.detach().numpy(),
            theta,
        )
    if isinstance(mod, nn.ReLU):
        return sk.relu()
    if isinstance(mod, nn.MaxPool2d):
        k, stride = _pool_attrs(mod)
        return sk.maxpool2d(k, stride)
    if isinstance(mod, nn.AvgPool2d):
        k, stride = _pool_attrs(mod)
        return sk.avgpool2d(k, stride)
    if isinstance(mod, nn.Flatten):
        return sk.flatten()
    if isinstance(mod, nn.Linear):
        return sk.dense(mod.weight.detach().numpy(), mod.bias.detach().numpy())
    if isinstance(mod, Residual):
        body = [_layer_from_module(m) for m in mod.body]
        shortcut = (
            [] if mod.shortcut is None else [_layer_from_module(m) for m in mod.shortcut]
        )
        return sk.residual(body=body, shortcut=shortcut)
    raise ExportError(f"unsupported module {type(mod).__name__}")


def graph_from_torch(net: nn.Sequential, input_shape) -> sk.ModelGraph:
    """Translate a restricted sequential torch net into a validated graph."""
    layers = [sk.input_layer(input_shape)]
    layers += [_layer_from_module(mod) for mod in net]
    graph = sk.ModelGraph(input_shape=tuple(input_shape), layers=layers)
    graph.validate()
    return graph


def train_net(net: nn.Sequential, train_set, epochs: int, seed: int) -> dict:
    """Adam + cross-entropy training loop; returns final train accuracy."""
    torch.manual_seed(seed)
    x = torch.from_numpy(np.asarray(train_set[0]))
    y = torch.from_numpy(np.asarray(train_set[1]))
    opt = torch.optim.Adam(net.parameters(), lr=1e-3)
    loss_fn = nn.CrossEntropyLoss()
    rng = np.random.default_rng(seed)
    net.train()
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), 64):
            idx = order[start : start + 64]
            opt.zero_grad()
            loss = loss_fn(net(x[idx]), y[idx])
            loss.backward()
            opt.step()
    net.eval()
    with torch.no_grad():
        acc = float((net(x).argmax(dim=1) == y).float().mean())
    return {"train_accuracy": acc}


def export_model(recipe: ExportRecipe, out_dir) -> Path:
    """Train the recipe's net and write the full export bundle.

    The bundle holds model.json + weights.bin, the train/test splits as BSD
    files, ``n_reference`` reference input/output pairs (outputs are the
    toolchain's logits, stored as a BSD whose samples are the logit vectors),
    and an export.json with provenance fields.
    """
    out_dir = Path(out_dir)
    torch.manual_seed(recipe.seed)  # weight init happens at construction
    net = build_net(recipe.architecture)
    train, test = load_digits_split(test_size=recipe.test_size, seed=recipe.seed)
    info = train_net(net, train, recipe.epochs, recipe.seed)
    graph = graph_from_torch(net, (1, 8, 8))
    sk.save_model(graph, out_dir)
    sk.write_bsd(out_dir / "train.bsd", train[0], train[1])
    sk.write_bsd(out_dir / "test.bsd", test[0], test[1])
    n_ref = min(recipe.n_reference, len(test[0]))
    ref_x, ref_y = test[0][:n_ref], test[1][:n_ref]
    with torch.no_grad():
        ref_out = net(torch.from_numpy(ref_x)).numpy().astype(np.float32)
    sk.write_bsd(out_dir / REFERENCE_INPUTS, ref_x, ref_y)
    sk.write_bsd(out_dir / REFERENCE_OUTPUTS, ref_out, ref_y)
    with torch.no_grad():
        xt = torch.from_numpy(test[0])
        test_acc = float((net(xt).argmax(dim=1) == torch.from_numpy(test[1])).float().mean())
    payload = {
        "architecture": recipe.architecture,
        "epochs": recipe.epochs,
        "seed": recipe.seed,
        "n_reference": n_ref,
        "train_accuracy": info["train_accuracy"],
        "test_accuracy": test_acc,
    }
    with open(out_dir / "export.json", "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write("\n")
    return out_dir


def verify_roundtrip(model_dir, fail_above: float = 1e-3) -> float:
    """Max abs deviation of the primary engine vs the stored toolchain logits.

    Raises VerifyError (naming the worst sample) when the deviation exceeds
    ``fail_above``.
    """
    model_dir = Path(model_dir)
    model = sk.fold_batchnorm(sk.load_model(model_dir))
    ref_x, _ = sk.load_bsd(model_dir / REFERENCE_INPUTS)
    ref_out, _ = sk.load_bsd(model_dir / REFERENCE_OUTPUTS)
    got, _ = sk.run_inference(model, ref_x)
    dev = np.abs(got - ref_out)
    worst = float(dev.max())
    if worst > fail_above:
        idx = int(np.unravel_index(np.argmax(dev), dev.shape)[0])
        raise VerifyError(
            f"round-trip deviation {worst:.6f} > {fail_above} at sample {idx}"
        )
    return worst

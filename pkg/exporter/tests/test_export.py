import json

import numpy as np
import pytest
import torch
from torch import nn

import spikekit as sk
from skexport import (
    ExportError,
    ExportRecipe,
    Residual,
    VerifyError,
    build_net,
    export_model,
    graph_from_torch,
    load_digits_split,
    train_net,
    verify_roundtrip,
)
from skexport.cli import EXIT_IO, EXIT_USAGE, EXIT_VALIDATION, main


@pytest.fixture(scope="session")
def bundles(tmp_path_factory):
    """Quickly trained exports of both architectures, shared across tests."""
    root = tmp_path_factory.mktemp("bundles")
    paths = {}
    for arch in ("small_cnn", "resnet8"):
        out = root / arch
        export_model(ExportRecipe(arch, epochs=3), out)
        paths[arch] = out
    return paths


# ---------------------------------------------------------------------------
# dataset and recipes


def test_digits_split_shapes_and_range():
    (xtr, ytr), (xte, yte) = load_digits_split()
    assert xtr.shape == (797, 1, 8, 8) and xte.shape == (1000, 1, 8, 8)
    assert xtr.dtype == np.float32 and ytr.dtype == np.int64
    full = np.concatenate([xtr, xte])
    assert full.min() >= 0.0 and full.max() <= 1.0
    assert set(np.unique(yte)) == set(range(10))


def test_digits_split_seeded_and_disjoint():
    a = load_digits_split(seed=0)
    b = load_digits_split(seed=0)
    assert np.array_equal(a[0][0], b[0][0]) and np.array_equal(a[1][1], b[1][1])
    c = load_digits_split(seed=1)
    assert not np.array_equal(a[1][0], c[1][0])
    assert len(a[0][0]) + len(a[1][0]) == 1797


def test_build_net_unknown_architecture():
    with pytest.raises(ValueError, match="unknown architecture"):
        build_net("alexnet")


def test_recipes_forward_shapes():
    x = torch.zeros(2, 1, 8, 8)
    for arch in ("small_cnn", "resnet8"):
        net = build_net(arch)
        net.eval()
        with torch.no_grad():
            assert net(x).shape == (2, 10)


# ---------------------------------------------------------------------------
# graph translation


def test_graph_matches_torch_on_random_weights():
    torch.manual_seed(3)
    for arch in ("small_cnn", "resnet8"):
        net = build_net(arch)
        net.eval()
        graph = graph_from_torch(net, (1, 8, 8))
        x = np.random.default_rng(3).uniform(0, 1, (4, 1, 8, 8)).astype(np.float32)
        with torch.no_grad():
            want = net(torch.from_numpy(x)).numpy()
        got, _ = sk.run_inference(sk.fold_batchnorm(graph), x)
        assert np.abs(got - want).max() <= 1e-4


def test_graph_preserves_residual_structure():
    net = build_net("resnet8")
    graph = graph_from_torch(net, (1, 8, 8))
    res = [l for l in graph.layers if l.kind == "residual"]
    assert len(res) == 3
    # the channel-change block carries a projection shortcut, the others none
    shortcut_lens = sorted(len(l.shortcut) for l in res)
    assert shortcut_lens == [0, 0, 2]


def test_overlapping_maxpool_rejected():
    net = nn.Sequential(nn.MaxPool2d(3, stride=2))
    with pytest.raises(ExportError, match="overlapping max-pool"):
        graph_from_torch(net, (1, 8, 8))


def test_padded_and_ceil_pooling_rejected():
    with pytest.raises(ExportError, match="padded pooling"):
        graph_from_torch(nn.Sequential(nn.AvgPool2d(2, padding=1)), (1, 8, 8))
    with pytest.raises(ExportError, match="ceil_mode"):
        graph_from_torch(nn.Sequential(nn.AvgPool2d(3, ceil_mode=True)), (1, 9, 9))


def test_non_square_pool_rejected():
    with pytest.raises(ExportError, match="non-square"):
        graph_from_torch(nn.Sequential(nn.AvgPool2d((2, 4))), (1, 8, 8))


def test_unsupported_module_rejected():
    with pytest.raises(ExportError, match="unsupported module Sigmoid"):
        graph_from_torch(nn.Sequential(nn.Flatten(), nn.Sigmoid()), (1, 8, 8))


def test_unsupported_module_inside_residual_rejected():
    block = Residual(nn.Sequential(nn.Tanh()))
    with pytest.raises(ExportError, match="unsupported module Tanh"):
        graph_from_torch(nn.Sequential(block), (1, 8, 8))


def test_conv_without_bias_exports_zero_bias():
    conv = nn.Conv2d(1, 2, 3, padding=1, bias=False)
    graph = graph_from_torch(nn.Sequential(conv), (1, 8, 8))
    assert np.array_equal(graph.layers[1].params["b"], np.zeros(2, np.float32))


# ---------------------------------------------------------------------------
# training


def test_train_net_is_seeded():
    data = load_digits_split()
    nets = []
    for _ in range(2):
        torch.manual_seed(7)
        net = build_net("small_cnn")
        train_net(net, data[0], epochs=1, seed=7)
        nets.append(net)
    for p, q in zip(nets[0].parameters(), nets[1].parameters()):
        assert torch.equal(p, q)


def test_train_net_learns():
    data = load_digits_split()
    net = build_net("small_cnn")
    info = train_net(net, data[0], epochs=3, seed=0)
    assert info["train_accuracy"] >= 0.8


# ---------------------------------------------------------------------------
# export bundles and verification


def test_bundle_contents(bundles):
    for out in bundles.values():
        for name in (
            "model.json",
            "weights.bin",
            "train.bsd",
            "test.bsd",
            "reference_inputs.bsd",
            "reference_outputs.bsd",
            "export.json",
        ):
            assert (out / name).exists(), name
        meta = json.loads((out / "export.json").read_text())
        assert meta["n_reference"] == 100
        assert 0.0 < meta["test_accuracy"] <= 1.0


def test_exported_models_load_and_validate(bundles):
    for out in bundles.values():
        model = sk.load_model(out)
        folded = sk.fold_batchnorm(model)
        x, _ = sk.load_bsd(out / "reference_inputs.bsd")
        y, _ = sk.run_inference(folded, x)
        assert y.shape == (100, 10)


def test_fresh_export_roundtrip_within_tolerance(bundles):
    for out in bundles.values():
        assert verify_roundtrip(out) <= 1e-4


def test_reference_labels_match_test_split(bundles):
    (_, _), (xte, yte) = load_digits_split()
    x, y = sk.load_bsd(bundles["small_cnn"] / "reference_inputs.bsd")
    assert np.array_equal(x, xte[:100])
    assert np.array_equal(y, yte[:100].astype(np.uint8))


def test_perturbed_weight_detected(bundles, tmp_path):
    src = bundles["small_cnn"]
    dst = tmp_path / "tampered"
    dst.mkdir()
    for name in src.iterdir():
        (dst / name.name).write_bytes(name.read_bytes())
    blob = np.fromfile(dst / "weights.bin", dtype="<f4")
    blob[0] += 0.5
    blob.tofile(dst / "weights.bin")
    with pytest.raises(VerifyError, match=r"at sample \d+"):
        verify_roundtrip(dst)


def test_identity_model_zero_deviation(tmp_path):
    graph = sk.ModelGraph(
        input_shape=(1, 4, 4), layers=[sk.input_layer((1, 4, 4)), sk.flatten()]
    )
    sk.save_model(graph, tmp_path)
    x = np.random.default_rng(0).uniform(0, 1, (5, 1, 4, 4)).astype(np.float32)
    labels = np.zeros(5, np.uint8)
    sk.write_bsd(tmp_path / "reference_inputs.bsd", x, labels)
    sk.write_bsd(tmp_path / "reference_outputs.bsd", x.reshape(5, 16), labels)
    assert verify_roundtrip(tmp_path) == 0.0


# ---------------------------------------------------------------------------
# cli


def test_cli_export_and_verify(tmp_path, capsys):
    out = tmp_path / "cli_model"
    assert main(["export", "--arch", "small_cnn", "--out", str(out), "--epochs", "1"]) == 0
    assert "round-trip deviation" in capsys.readouterr().out
    assert main(["verify", "--model", str(out)]) == 0
    assert "threshold 1e-3" in capsys.readouterr().out


def test_cli_usage_errors(capsys):
    assert main([]) == EXIT_USAGE
    assert main(["export", "--arch", "vgg", "--out", "/tmp/x"]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE


def test_cli_verify_missing_dir(tmp_path, capsys):
    assert main(["verify", "--model", str(tmp_path / "nope")]) == EXIT_IO


def test_cli_verify_tampered(bundles, tmp_path, capsys):
    src = bundles["resnet8"]
    dst = tmp_path / "bad"
    dst.mkdir()
    for name in src.iterdir():
        (dst / name.name).write_bytes(name.read_bytes())
    blob = np.fromfile(dst / "weights.bin", dtype="<f4")
    blob[:100] -= 1.0
    blob.tofile(dst / "weights.bin")
    assert main(["verify", "--model", str(dst)]) == EXIT_VALIDATION
    assert "deviation" in capsys.readouterr().err

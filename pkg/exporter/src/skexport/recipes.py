"""Reference architectures and the 8x8 digits dataset used for export.

Both nets are plain ``nn.Sequential`` stacks (with a custom ``Residual``
block) restricted to the layer vocabulary of the spikekit model format:
conv, batchnorm, relu, non-overlapping pools, flatten, dense.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn


@dataclass
class ExportRecipe:
    architecture: str  # "small_cnn" or "resnet8"
    epochs: int = 25
    seed: int = 0
    n_reference: int = 100
    test_size: int = 1000


class Residual(nn.Module):
    """relu(body(x) + shortcut(x)); identity shortcut when none is given."""

    def __init__(self, body: nn.Sequential, shortcut: nn.Sequential | None = None):
        super().__init__()
        self.body = body
        self.shortcut = shortcut

    def forward(self, x):
        skip = x if self.shortcut is None else self.shortcut(x)
        return torch.relu(self.body(x) + skip)


def _conv_bn(c_in, c_out, k=3, stride=1, pad=1):
    return [nn.Conv2d(c_in, c_out, k, stride=stride, padding=pad), nn.BatchNorm2d(c_out)]


def small_cnn() -> nn.Sequential:
    return nn.Sequential(
        *_conv_bn(1, 8),
        nn.ReLU(),
        *_conv_bn(8, 16),
        nn.ReLU(),
        nn.MaxPool2d(2),
        *_conv_bn(16, 16),
        nn.ReLU(),
        nn.Flatten(),
        nn.Linear(16 * 4 * 4, 10),
    )


def resnet8() -> nn.Sequential:
    return nn.Sequential(
        *_conv_bn(1, 8),
        nn.ReLU(),
        Residual(nn.Sequential(*_conv_bn(8, 8), nn.ReLU(), *_conv_bn(8, 8))),
        Residual(
            nn.Sequential(*_conv_bn(8, 16), nn.ReLU(), *_conv_bn(16, 16)),
            shortcut=nn.Sequential(*_conv_bn(8, 16, k=1, pad=0)),
        ),
        nn.AvgPool2d(2),
        Residual(nn.Sequential(*_conv_bn(16, 16), nn.ReLU(), *_conv_bn(16, 16))),
        nn.AvgPool2d(4),
        nn.Flatten(),
        nn.Linear(16, 10),
    )


ARCHITECTURES = {"small_cnn": small_cnn, "resnet8": resnet8}


def build_net(architecture: str) -> nn.Sequential:
    if architecture not in ARCHITECTURES:
        raise ValueError(
            f"unknown architecture {architecture!r}; expected one of {sorted(ARCHITECTURES)}"
        )
    return ARCHITECTURES[architecture]()


def load_digits_split(test_size: int = 1000, seed: int = 0):
    """Shuffled train/test split of the sklearn 8x8 digits, pixels in [0, 1].

    Returns ((x_train, y_train), (x_test, y_test)) with x of shape
    (N, 1, 8, 8) float32.
    """
    from sklearn.datasets import load_digits

    digits = load_digits()
    x = (digits.images / 16.0).astype(np.float32)[:, None, :, :]
    y = digits.target.astype(np.int64)
    order = np.random.default_rng(seed).permutation(len(x))
    x, y = x[order], y[order]
    return (x[test_size:], y[test_size:]), (x[:test_size], y[:test_size])

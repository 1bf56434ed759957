"""Dense tensor primitives for ANN inference and spike-current propagation.

All tensors are numpy float32 arrays in row-major order.  Every operation
accumulates in float64 and rounds the result back to float32, so downstream
conservation checks stay tight.  Operations are pure and accept an optional
leading batch dimension.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, DomainError, ShapeMismatchError

BN_EPS = 1e-5


def _f32(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float32)


def dense_forward(W, b, x) -> np.ndarray:
    """y = W @ x + b.  ``x`` may be [in] or [batch, in]."""
    W = _f32(W)
    b = _f32(b)
    x = _f32(x)
    if W.ndim != 2:
        raise ShapeMismatchError(f"dense_forward: W must be 2-D, got shape {W.shape}")
    out_dim, in_dim = W.shape
    if b.shape != (out_dim,):
        raise ShapeMismatchError(
            f"dense_forward: bias shape {b.shape} does not match W rows {out_dim}"
        )
    if x.shape[-1] != in_dim:
        raise ShapeMismatchError(
            f"dense_forward: x shape {x.shape} does not match W columns {in_dim}"
        )
    y = x.astype(np.float64) @ W.T.astype(np.float64) + b.astype(np.float64)
    return y.astype(np.float32)


def conv2d_forward(W, b, x, stride: int = 1, pad: int = 0) -> np.ndarray:
    """2-D cross-correlation with bias and symmetric zero padding.

    W: [Cout, Cin, Kh, Kw]; x: [Cin, H, W] or [batch, Cin, H, W].
    """
    W = _f32(W)
    b = _f32(b)
    x = _f32(x)
    if W.ndim != 4:
        raise ShapeMismatchError(f"conv2d_forward: W must be 4-D, got shape {W.shape}")
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    if x.ndim != 4:
        raise ShapeMismatchError(f"conv2d_forward: x must be 3-D or 4-D, got shape {x.shape}")
    cout, cin, kh, kw = W.shape
    n, xc, h, w = x.shape
    if xc != cin:
        raise ShapeMismatchError(
            f"conv2d_forward: input channels {xc} do not match kernel channels {cin}"
        )
    if b.shape != (cout,):
        raise ShapeMismatchError(f"conv2d_forward: bias shape {b.shape} != ({cout},)")
    if (h + 2 * pad - kh) % stride or (w + 2 * pad - kw) % stride:
        raise ConfigurationError(
            f"conv2d_forward: non-integral output size for input {h}x{w}, "
            f"kernel {kh}x{kw}, stride {stride}, pad {pad}"
        )
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    xd = x.astype(np.float64)
    wd = W.astype(np.float64)
    y = np.zeros((n, cout, oh, ow), dtype=np.float64)
    # Accumulate one kernel offset at a time; kernels are small.
    for i in range(kh):
        for j in range(kw):
            patch = xd[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
            y += np.einsum("ncHW,oc->noHW", patch, wd[:, :, i, j])
    y += b.astype(np.float64)[:, None, None]
    y = y.astype(np.float32)
    return y[0] if squeeze else y


def relu_forward(x) -> np.ndarray:
    """Elementwise max(0, x)."""
    return np.maximum(_f32(x), np.float32(0.0))


def pool2d_forward(x, kind: str, k: int, stride: int | None = None) -> np.ndarray:
    """Windowwise max or mean over [C, H, W] (or batched) input."""
    if kind not in ("max", "avg"):
        raise ConfigurationError(f"pool2d_forward: unknown kind {kind!r}")
    x = _f32(x)
    if stride is None:
        stride = k
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    n, c, h, w = x.shape
    if k > h or k > w:
        raise ConfigurationError(f"pool2d_forward: window {k} exceeds input {h}x{w}")
    if (h - k) % stride or (w - k) % stride:
        raise ConfigurationError(
            f"pool2d_forward: input {h}x{w} not divisible by window {k}, stride {stride}"
        )
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    windows = np.empty((n, c, oh, ow, k * k), dtype=np.float64)
    xd = x.astype(np.float64)
    for i in range(k):
        for j in range(k):
            windows[..., i * k + j] = xd[
                :, :, i : i + stride * oh : stride, j : j + stride * ow : stride
            ]
    y = windows.max(axis=-1) if kind == "max" else windows.mean(axis=-1)
    y = y.astype(np.float32)
    return y[0] if squeeze else y


def bn_forward(x, mu, theta, gamma, beta) -> np.ndarray:
    """Per-channel affine normalization: (gamma/theta) * (x - mu) + beta.

    ``theta`` is the per-channel standard deviation (sqrt(var + eps)); it must
    be strictly positive.  For feature vectors the parameters broadcast per
    element; for [C, H, W] maps they broadcast per channel.
    """
    x = _f32(x)
    mu, theta, gamma, beta = (_f32(v) for v in (mu, theta, gamma, beta))
    if np.any(theta <= 0):
        raise DomainError("bn_forward: theta must be strictly positive")
    c = mu.shape[0]
    if x.ndim >= 3 and x.shape[-3] == c and x.shape[-1] != c:
        shape = (c, 1, 1)
        mu, theta, gamma, beta = (v.reshape(shape) for v in (mu, theta, gamma, beta))
    elif x.shape[-1] != c:
        raise ShapeMismatchError(
            f"bn_forward: parameter length {c} matches neither channel nor feature "
            f"axis of input shape {x.shape}"
        )
    xd = x.astype(np.float64)
    y = (gamma.astype(np.float64) / theta.astype(np.float64)) * (
        xd - mu.astype(np.float64)
    ) + beta.astype(np.float64)
    return y.astype(np.float32)

"""Differentiable layers on NHWC tensors.

Convolutions are cross-correlations (no kernel flip) with kernels laid out as
``(kh, kw, c_in, c_out)``. "same" padding puts the extra pixel on the
bottom/right when the total pad is odd.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, check_finite, record

__all__ = [
    "BatchNormParams",
    "ConvParams",
    "DenseParams",
    "activation",
    "batchnorm",
    "conv2d",
    "conv_transpose2d",
    "dense",
    "mse_loss",
    "relu",
    "same_pad",
    "sigmoid",
]


@dataclass
class ConvParams:
    kernel: Tensor
    bias: Tensor
    stride: int = 1
    padding: str = "same"

    def __post_init__(self):
        kh, kw, _, cout = self.kernel.shape
        if kh < 1 or kw < 1:
            raise ValueError("kernel extents must be >= 1")
        if self.bias.shape != (cout,):
            raise ValueError(f"bias shape {self.bias.shape} does not match c_out={cout}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.padding not in ("same", "valid"):
            raise ValueError(f"padding must be 'same' or 'valid', got {self.padding!r}")


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    momentum: float = 0.9
    epsilon: float = 1e-5

    @classmethod
    def fresh(cls, channels: int, **kw) -> "BatchNormParams":
        return cls(
            gamma=Tensor(np.ones(channels)),
            beta=Tensor(np.zeros(channels)),
            running_mean=Tensor(np.zeros(channels)),
            running_var=Tensor(np.ones(channels)),
            **kw,
        )


@dataclass
class DenseParams:
    weight: Tensor
    bias: Tensor


def same_pad(size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """Return ``(out, pad_before, pad_after)`` for "same" padding."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def _geometry(h: int, w: int, kh: int, kw: int, stride: int, padding: str):
    if padding == "same":
        ho, pt, pb = same_pad(h, kh, stride)
        wo, pl, pr = same_pad(w, kw, stride)
    else:
        ho = (h - kh) // stride + 1 if h >= kh else 0
        wo = (w - kw) // stride + 1 if w >= kw else 0
        pt = pb = pl = pr = 0
    if ho < 1 or wo < 1:
        raise ValueError(f"convolution output extent < 1 for input {h}x{w}, kernel {kh}x{kw}")
    return ho, wo, (pt, pb, pl, pr)


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    b, h, w, cin = x.shape
    kh, kw, kcin, cout = p.kernel.shape
    if cin != kcin:
        raise ValueError(f"conv2d channel mismatch: input has {cin}, kernel expects {kcin}")
    s = p.stride
    ho, wo, (pt, pb, pl, pr) = _geometry(h, w, kh, kw, s, p.padding)
    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    K = p.kernel.data
    out = np.zeros((b, ho, wo, cout), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            window = xp[:, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s, :]
            out += window @ K[i, j]
    out += p.bias.data

    def backward(g):
        gx = np.zeros_like(xp)
        gk = np.zeros_like(K)
        g2 = g.reshape(-1, cout)
        for i in range(kh):
            for j in range(kw):
                sl = (slice(None), slice(i, i + s * (ho - 1) + 1, s), slice(j, j + s * (wo - 1) + 1, s))
                gk[i, j] = xp[sl].reshape(-1, cin).T @ g2
                gx[sl] += g @ K[i, j].T
        gx = gx[:, pt : pt + h, pl : pl + w, :]
        return gx, gk, g2.sum(axis=0)

    return record((x, p.kernel, p.bias), out, backward, "conv2d")


def _transpose_geometry(h: int, kh: int, s: int, padding: str) -> tuple[int, int]:
    """Output extent and crop offset into the full scatter buffer."""
    full = (h - 1) * s + kh
    if padding == "valid":
        return full, 0
    total = full - h * s
    return h * s, max(total, 0) // 2


def conv_transpose2d(x: Tensor, p: ConvParams) -> Tensor:
    """Scatter-add transposed convolution; "same" maps H to H * stride."""
    b, h, w, cin = x.shape
    kh, kw, kcin, cout = p.kernel.shape
    if cin != kcin:
        raise ValueError(f"conv_transpose2d channel mismatch: input has {cin}, kernel expects {kcin}")
    s = p.stride
    ho, top = _transpose_geometry(h, kh, s, p.padding)
    wo, left = _transpose_geometry(w, kw, s, p.padding)
    fh = max((h - 1) * s + kh, top + ho)
    fw = max((w - 1) * s + kw, left + wo)
    K = p.kernel.data
    full = np.zeros((b, fh, fw, cout), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            full[:, i : i + s * (h - 1) + 1 : s, j : j + s * (w - 1) + 1 : s, :] += x.data @ K[i, j]
    out = full[:, top : top + ho, left : left + wo, :] + p.bias.data

    def backward(g):
        gfull = np.zeros((b, fh, fw, cout), dtype=g.dtype)
        gfull[:, top : top + ho, left : left + wo, :] = g
        gx = np.zeros_like(x.data)
        gk = np.zeros_like(K)
        x2 = x.data.reshape(-1, cin)
        for i in range(kh):
            for j in range(kw):
                gs = gfull[:, i : i + s * (h - 1) + 1 : s, j : j + s * (w - 1) + 1 : s, :]
                gx += gs @ K[i, j].T
                gk[i, j] = x2.T @ gs.reshape(-1, cout)
        return gx, gk, g.reshape(-1, cout).sum(axis=0)

    return record((x, p.kernel, p.bias), out, backward, "conv_transpose2d")


def batchnorm(x: Tensor, p: BatchNormParams, mode: str = "train") -> Tensor:
    """Per-channel normalization over every axis but the last.

    Train mode normalizes with the biased batch variance and folds the batch
    statistics into the running ones as ``r = momentum * r + (1 - momentum) * batch``.
    """
    c = x.shape[-1]
    axes = tuple(range(x.data.ndim - 1))
    n = x.size // c
    if mode == "train":
        if n < 2:
            raise ValueError(f"batchnorm in train mode needs >= 2 values per channel, got {n}")
        mean = x.data.mean(axis=axes)
        var = check_finite(x.data.var(axis=axes), "batchnorm variance")
        m = p.momentum
        p.running_mean.data = (m * p.running_mean.data + (1 - m) * mean).astype(p.running_mean.data.dtype)
        p.running_var.data = (m * p.running_var.data + (1 - m) * var).astype(p.running_var.data.dtype)
    elif mode == "eval":
        mean = p.running_mean.data
        var = p.running_var.data
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    inv = 1.0 / np.sqrt(var + p.epsilon)
    xhat = (x.data - mean) * inv
    out = p.gamma.data * xhat + p.beta.data

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * p.gamma.data
        if mode == "train":
            gx = inv / n * (n * gxhat - gxhat.sum(axis=axes) - xhat * (gxhat * xhat).sum(axis=axes))
        else:
            gx = gxhat * inv
        return gx.astype(x.data.dtype), ggamma, gbeta

    return record((x, p.gamma, p.beta), out.astype(x.data.dtype), backward, "batchnorm")


def dense(x: Tensor, p: DenseParams) -> Tensor:
    if x.data.ndim != 2 or x.shape[1] != p.weight.shape[0]:
        raise ValueError(f"dense shape mismatch: input {x.shape}, weight {p.weight.shape}")
    W = p.weight.data
    out = x.data @ W + p.bias.data
    return record(
        (x, p.weight, p.bias),
        out,
        lambda g: (g @ W.T, x.data.T @ g, g.sum(axis=0)),
        "dense",
    )


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record((x,), x.data * mask, lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)
    # keep the open interval even where the float type would round to 0 or 1
    out = np.clip(out, np.finfo(d.dtype).tiny, np.nextafter(d.dtype.type(1), d.dtype.type(0)))
    return record((x,), out, lambda g: (g * out * (1.0 - out),), "sigmoid")


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def mse_loss(prediction: Tensor, target: Tensor) -> Tensor:
    if prediction.shape != target.shape:
        raise ValueError(f"mse_loss shape mismatch {prediction.shape} vs {target.shape}")
    diff = prediction.data - target.data
    n = diff.size
    return record(
        (prediction, target),
        np.asarray((diff * diff).sum() / n),
        lambda g: (g * 2.0 / n * diff, g * -2.0 / n * diff),
        "mse_loss",
    )


def he_normal(shape, fan_in: int, rng) -> np.ndarray:
    """Normal weights scaled by sqrt(2 / fan_in)."""
    return rng.normal(math.prod(shape)).reshape(shape) * math.sqrt(2.0 / fan_in)

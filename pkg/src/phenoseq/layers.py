"""Forward and backward passes for the network building blocks.

Every operation accepts a single sample (channels-first, e.g. ``(C, H, W)``)
or a batch with a leading axis (``(N, C, H, W)``); gradients follow the same
convention. Convolution is computed as the direct cross-correlation sum,
accumulated offset by offset in a fixed order so results are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeMismatchError

__all__ = [
    "Conv2dLayer",
    "DenseLayer",
    "conv2d_forward",
    "conv2d_backward",
    "maxpool2d",
    "maxpool2d_backward",
    "global_average_pool",
    "global_average_pool_backward",
    "dense_forward",
    "dense_backward",
    "relu",
    "relu_backward",
    "sigmoid",
    "sigmoid_backward",
    "tanh",
    "tanh_backward",
    "softmax",
]


@dataclass
class Conv2dLayer:
    """2-d convolution parameters.

    kernels: (out_ch, in_ch, kh, kw); bias: (out_ch,).
    """

    kernels: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kernels.ndim != 4:
            raise ShapeMismatchError(f"kernels must be 4-d, got shape {self.kernels.shape}")
        if self.bias.shape != (self.kernels.shape[0],):
            raise ShapeMismatchError(
                f"bias shape {self.bias.shape} does not match out_ch {self.kernels.shape[0]}"
            )
        if self.stride < 1 or self.padding < 0:
            raise ValueError("stride must be >= 1 and padding >= 0")


@dataclass
class DenseLayer:
    """Affine map y = W x + b with weights (out, in) and bias (out,)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeMismatchError(
                f"inconsistent dense shapes: weights {self.weights.shape}, bias {self.bias.shape}"
            )


@dataclass
class ConvCache:
    x_padded: np.ndarray
    in_shape: tuple
    single: bool


@dataclass
class PoolCache:
    argmax: np.ndarray  # flat index of the max inside each window
    in_shape: tuple
    window: int
    stride: int
    single: bool


@dataclass
class DenseCache:
    x: np.ndarray
    single: bool


def _as_batch(x: np.ndarray, ndim_single: int):
    """Return (batched view, was_single)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == ndim_single:
        return x[None], True
    if x.ndim == ndim_single + 1:
        return x, False
    raise ShapeMismatchError(
        f"expected {ndim_single}-d sample or {ndim_single + 1}-d batch, got shape {x.shape}"
    )


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv2d_out_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d_forward(layer: Conv2dLayer, x: np.ndarray):
    """Cross-correlation plus bias. Returns (out, cache)."""
    xb, single = _as_batch(x, 3)
    n, c, h, w = xb.shape
    out_ch, in_ch, kh, kw = layer.kernels.shape
    if c != in_ch:
        raise ShapeMismatchError(f"input has {c} channels, kernels expect {in_ch}")
    s, p = layer.stride, layer.padding
    oh = conv2d_out_size(h, kh, s, p)
    ow = conv2d_out_size(w, kw, s, p)
    if oh < 1 or ow < 1:
        raise ShapeMismatchError(
            f"input {h}x{w} too small for kernel {kh}x{kw} stride {s} padding {p}"
        )
    xp = np.pad(xb, ((0, 0), (0, 0), (p, p), (p, p))) if p else xb
    out = np.empty((n, out_ch, oh, ow))
    out[:] = layer.bias[:, None, None]
    # Direct sum over kernel offsets; each offset is one GEMM over channels.
    for u in range(kh):
        for v in range(kw):
            xs = xp[:, :, u : u + s * oh : s, v : v + s * ow : s]
            out += np.einsum("nchw,oc->nohw", xs, layer.kernels[:, :, u, v], optimize=True)
    cache = ConvCache(x_padded=xp, in_shape=xb.shape, single=single)
    return (out[0] if single else out), cache


def conv2d_backward(layer: Conv2dLayer, cache: ConvCache, grad_out: np.ndarray):
    """Exact gradients of conv2d_forward. Returns (grad_x, grad_kernels, grad_bias)."""
    go, single = _as_batch(grad_out, 3)
    n, c, h, w = cache.in_shape
    out_ch, in_ch, kh, kw = layer.kernels.shape
    s, p = layer.stride, layer.padding
    oh = conv2d_out_size(h, kh, s, p)
    ow = conv2d_out_size(w, kw, s, p)
    if single != cache.single or go.shape != (n, out_ch, oh, ow):
        raise ShapeMismatchError(
            f"grad_out shape {grad_out.shape} does not match cached forward output "
            f"{(out_ch, oh, ow) if cache.single else (n, out_ch, oh, ow)}"
        )
    xp = cache.x_padded
    grad_k = np.empty_like(layer.kernels)
    grad_xp = np.zeros_like(xp)
    for u in range(kh):
        for v in range(kw):
            xs = xp[:, :, u : u + s * oh : s, v : v + s * ow : s]
            grad_k[:, :, u, v] = np.einsum("nohw,nchw->oc", go, xs, optimize=True)
            grad_xp[:, :, u : u + s * oh : s, v : v + s * ow : s] += np.einsum(
                "nohw,oc->nchw", go, layer.kernels[:, :, u, v], optimize=True
            )
    grad_b = go.sum(axis=(0, 2, 3))
    grad_x = grad_xp[:, :, p : p + h, p : p + w] if p else grad_xp
    return (grad_x[0] if single else grad_x), grad_k, grad_b


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def maxpool2d(x: np.ndarray, window: int, stride: int | None = None):
    """Per-window max; ties go to the first position in row-major scan order."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    stride = window if stride is None else stride
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    xb, single = _as_batch(x, 3)
    n, c, h, w = xb.shape
    if window > h or window > w:
        raise ShapeMismatchError(f"window {window} larger than input {h}x{w}")
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xb, (window, window), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (n, c, oh, ow, window, window)
    flat = win.reshape(n, c, oh, ow, window * window)
    argmax = flat.argmax(axis=-1)  # first max in row-major order
    pooled = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    cache = PoolCache(argmax=argmax, in_shape=xb.shape, window=window, stride=stride, single=single)
    return (pooled[0] if single else pooled), cache


def maxpool2d_backward(cache: PoolCache, grad_out: np.ndarray) -> np.ndarray:
    """Routes each window's gradient to its argmax position."""
    go, single = _as_batch(grad_out, 3)
    n, c, h, w = cache.in_shape
    oh, ow = cache.argmax.shape[2:]
    if single != cache.single or go.shape != (n, c, oh, ow):
        raise ShapeMismatchError(f"grad_out shape {grad_out.shape} does not match pooled output")
    rows = cache.argmax // cache.window
    cols = cache.argmax % cache.window
    ni, ci, oi, oj = np.indices((n, c, oh, ow), sparse=False)
    grad_x = np.zeros((n, c, h, w))
    np.add.at(grad_x, (ni, ci, oi * cache.stride + rows, oj * cache.stride + cols), go)
    return grad_x[0] if single else grad_x


def global_average_pool(x: np.ndarray) -> np.ndarray:
    """Per-channel spatial mean: (C, H, W) -> (C,) or (N, C, H, W) -> (N, C)."""
    xb, single = _as_batch(x, 3)
    out = xb.mean(axis=(2, 3))
    return out[0] if single else out


def global_average_pool_backward(grad_out: np.ndarray, spatial_shape: tuple) -> np.ndarray:
    """Distributes grad / (H * W) uniformly over each channel's map."""
    h, w = spatial_shape
    go = np.asarray(grad_out, dtype=np.float64)
    return np.broadcast_to((go / (h * w))[..., None, None], go.shape + (h, w)).copy()


# ---------------------------------------------------------------------------
# dense
# ---------------------------------------------------------------------------

def dense_forward(layer: DenseLayer, x: np.ndarray):
    """Affine map W x + b. Returns (out, cache)."""
    xb, single = _as_batch(x, 1)
    if xb.shape[1] != layer.weights.shape[1]:
        raise ShapeMismatchError(
            f"input dim {xb.shape[1]} does not match weights {layer.weights.shape}"
        )
    out = xb @ layer.weights.T + layer.bias
    return (out[0] if single else out), DenseCache(x=xb, single=single)


def dense_backward(layer: DenseLayer, cache: DenseCache, grad_out: np.ndarray):
    """Returns (grad_x, grad_weights, grad_bias); batch gradients are summed."""
    go, single = _as_batch(grad_out, 1)
    if single != cache.single or go.shape != (cache.x.shape[0], layer.weights.shape[0]):
        raise ShapeMismatchError(f"grad_out shape {grad_out.shape} does not match dense output")
    grad_w = go.T @ cache.x
    grad_b = go.sum(axis=0)
    grad_x = go @ layer.weights
    return (grad_x[0] if single else grad_x), grad_w, grad_b


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.asarray(grad_out) * (np.asarray(x) > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function, computed branch-wise so exp never overflows."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(grad_out: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Derivative in terms of the forward output y = sigmoid(x)."""
    return np.asarray(grad_out) * y * (1.0 - y)


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(np.asarray(x, dtype=np.float64))


def tanh_backward(grad_out: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Derivative in terms of the forward output y = tanh(x)."""
    return np.asarray(grad_out) * (1.0 - y * y)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax along the last axis; rows sum to 1."""
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] < 2:
        raise ShapeMismatchError(f"softmax needs >= 2 classes, got shape {z.shape}")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)

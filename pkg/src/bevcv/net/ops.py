"""Dense layer primitives on channels-first numpy arrays.

Feature maps are (C, H, W) or batched (N, C, H, W).  Storage is float32;
every reduction accumulates in float64 and the result is cast back to the
input dtype, so float64 inputs stay float64 (used by gradient checks).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch

LEAKY_SLOPE = 0.01


def _out_dtype(*arrays):
    return np.float64 if any(np.asarray(a).dtype == np.float64 for a in arrays) else np.float32


def conv_out_extent(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv2d(x, w, b=None, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Cross-correlation with zero padding.  ``w`` is (C_out, C_in, kh, kw)."""
    x = np.asarray(x)
    w = np.asarray(w)
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeMismatch(f"conv2d expects x (C,H,W) and w (O,C,kh,kw), got {x.shape} and {w.shape}")
    c_in, h, wd = x.shape
    c_out, wc, kh, kw = w.shape
    if wc != c_in:
        raise ShapeMismatch(f"conv2d channel mismatch: input has {c_in}, kernel expects {wc}")
    if b is not None and np.shape(b) != (c_out,):
        raise ShapeMismatch(f"conv2d bias shape {np.shape(b)} != ({c_out},)")
    if stride < 1 or pad < 0:
        raise ShapeMismatch("conv2d stride must be >= 1 and pad >= 0")
    oh, ow = conv_out_extent(h, kh, stride, pad), conv_out_extent(wd, kw, stride, pad)
    if oh < 1 or ow < 1:
        raise ShapeMismatch(f"conv2d output extent not positive for input {h}x{wd}, kernel {kh}x{kw}")
    dtype = _out_dtype(x, w)
    xp = np.pad(x.astype(np.float64), ((0, 0), (pad, pad), (pad, pad)))
    # windows: (C, OH', OW', kh, kw) before striding
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :oh, :ow]
    cols = win.transpose(1, 2, 0, 3, 4).reshape(oh * ow, c_in * kh * kw)
    out = cols @ w.reshape(c_out, -1).astype(np.float64).T
    if b is not None:
        out += np.asarray(b, dtype=np.float64)
    return out.T.reshape(c_out, oh, ow).astype(dtype)


def transposed_conv2d(x, w, stride: int = 1, b=None) -> np.ndarray:
    """Transposed convolution without padding.  ``w`` is (C_in, C_out, kh, kw)."""
    x = np.asarray(x)
    w = np.asarray(w)
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeMismatch(f"transposed_conv2d expects x (C,H,W) and w (C,O,kh,kw), got {x.shape} and {w.shape}")
    c_in, h, wd = x.shape
    wc, c_out, kh, kw = w.shape
    if wc != c_in:
        raise ShapeMismatch(f"transposed_conv2d channel mismatch: input has {c_in}, kernel expects {wc}")
    if stride < 1:
        raise ShapeMismatch("stride must be >= 1")
    if b is not None and np.shape(b) != (c_out,):
        raise ShapeMismatch(f"transposed_conv2d bias shape {np.shape(b)} != ({c_out},)")
    dtype = _out_dtype(x, w)
    oh, ow = (h - 1) * stride + kh, (wd - 1) * stride + kw
    taps = np.einsum("cij,coab->aboij", x.astype(np.float64), w.astype(np.float64))
    out = np.zeros((c_out, oh, ow))
    for a in range(kh):
        for bb in range(kw):
            out[:, a:a + stride * (h - 1) + 1:stride, bb:bb + stride * (wd - 1) + 1:stride] += taps[a, bb]
    if b is not None:
        out += np.asarray(b, dtype=np.float64)[:, None, None]
    return out.astype(dtype)


def maxpool2d(x, k: int = 2, stride: int | None = None) -> np.ndarray:
    x = np.asarray(x)
    stride = k if stride is None else stride
    if x.ndim != 3:
        raise ShapeMismatch(f"maxpool2d expects (C,H,W), got {x.shape}")
    c, h, wd = x.shape
    oh, ow = conv_out_extent(h, k, stride, 0), conv_out_extent(wd, k, stride, 0)
    if oh < 1 or ow < 1:
        raise ShapeMismatch(f"maxpool2d window {k} larger than input {h}x{wd}")
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :oh, :ow]
    return win.max(axis=(3, 4))


def upsample2x_nearest(x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeMismatch(f"upsample2x_nearest expects (C,H,W), got {x.shape}")
    return x.repeat(2, axis=1).repeat(2, axis=2)


def leaky_relu(x, slope: float = LEAKY_SLOPE) -> np.ndarray:
    x = np.asarray(x)
    return np.where(x > 0, x, x * x.dtype.type(slope))


def _channel_axes(x):
    if x.ndim == 2:  # (N, C)
        return (0,), (1, -1)
    if x.ndim == 3:  # (C, H, W)
        return (1, 2), (-1, 1, 1)
    if x.ndim == 4:  # (N, C, H, W)
        return (0, 2, 3), (1, -1, 1, 1)
    raise ShapeMismatch(f"batchnorm expects rank 2-4 input, got {x.shape}")


def batchnorm_apply(x, scale, shift, mean, var, eps: float = 1e-5) -> np.ndarray:
    """Inference-mode batch norm with running statistics, per channel."""
    x = np.asarray(x)
    _, bshape = _channel_axes(x)
    c = x.shape[1] if x.ndim in (2, 4) else x.shape[0]
    for name, p in (("scale", scale), ("shift", shift), ("mean", mean), ("var", var)):
        if np.shape(p) != (c,):
            raise ShapeMismatch(f"batchnorm {name} shape {np.shape(p)} != ({c},)")
    dtype = _out_dtype(x, scale)
    inv = np.asarray(scale, np.float64) / np.sqrt(np.asarray(var, np.float64) + eps)
    out = (x.astype(np.float64) - np.asarray(mean, np.float64).reshape(bshape)) * inv.reshape(bshape)
    return (out + np.asarray(shift, np.float64).reshape(bshape)).astype(dtype)


def batchnorm_train(x, scale, shift, running_mean, running_var, momentum: float = 0.1, eps: float = 1e-5):
    """Training-mode batch norm.

    Normalises with the biased batch variance and returns
    ``(y, new_running_mean, new_running_var)``; the running variance is
    updated with the unbiased estimate.
    """
    x = np.asarray(x)
    axes, bshape = _channel_axes(x)
    n = int(np.prod([x.shape[a] for a in axes]))
    x64 = x.astype(np.float64)
    mu = x64.mean(axis=axes)
    var = x64.var(axis=axes)
    y = batchnorm_apply(x, scale, shift, mu, var, eps)
    unbiased = var * n / max(n - 1, 1)
    new_mean = (1.0 - momentum) * np.asarray(running_mean, np.float64) + momentum * mu
    new_var = (1.0 - momentum) * np.asarray(running_var, np.float64) + momentum * unbiased
    rdtype = np.asarray(running_mean).dtype
    return y, new_mean.astype(rdtype), new_var.astype(rdtype)


def linear(x, w, b=None) -> np.ndarray:
    """Fully connected layer.  ``x`` is (N, in) or (in,), ``w`` is (out, in)."""
    x = np.asarray(x)
    w = np.asarray(w)
    if x.shape[-1] != w.shape[1]:
        raise ShapeMismatch(f"linear input width {x.shape[-1]} != weight in-features {w.shape[1]}")
    if b is not None and np.shape(b) != (w.shape[0],):
        raise ShapeMismatch(f"linear bias shape {np.shape(b)} != ({w.shape[0]},)")
    dtype = _out_dtype(x, w)
    out = x.astype(np.float64) @ w.astype(np.float64).T
    if b is not None:
        out = out + np.asarray(b, np.float64)
    return out.astype(dtype)


def global_maxpool(x) -> np.ndarray:
    """(C, H, W) -> (C,) or (N, C, H, W) -> (N, C)."""
    x = np.asarray(x)
    if x.ndim not in (3, 4):
        raise ShapeMismatch(f"global_maxpool expects rank 3 or 4, got {x.shape}")
    return x.max(axis=(-2, -1))


def l2_normalize(x, eps: float = 1e-12) -> np.ndarray:
    x = np.asarray(x)
    x64 = x.astype(np.float64)
    norm = np.sqrt((x64 * x64).sum(axis=-1, keepdims=True))
    return (x64 / np.maximum(norm, eps)).astype(_out_dtype(x))

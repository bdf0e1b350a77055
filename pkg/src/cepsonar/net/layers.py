"""Layer primitives with paired backward passes.

Activations are laid out (batch, height, width, channels); convolution
filters are (f_h, f_w, in_channels, out_channels). Computation follows the
dtype of the parameters (float32 for training, float64 for gradient checks).
"""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


def _im2col(x: np.ndarray, fh: int, fw: int) -> np.ndarray:
    """Single-channel patches, row (b, i, j) holding x[b, i+di, j+dj] in (di, dj) order."""
    B, H, W, _ = x.shape
    Ho, Wo = H - fh + 1, W - fw + 1
    view = np.lib.stride_tricks.sliding_window_view(x[..., 0], (fh, fw), axis=(1, 2))
    return view.reshape(B * Ho * Wo, fh * fw)


def _tap(x: np.ndarray, i: int, j: int, Ho: int, Wo: int) -> np.ndarray:
    """Input window for filter tap (i, j) as (batch, Ho * Wo, channels); a view when Wo == W."""
    B, _, _, C = x.shape
    return x[:, i:i + Ho, j:j + Wo, :].reshape(B, Ho * Wo, C)


def conv_valid(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Valid cross-correlation, stride 1. Returns (output, cache).

    Single-channel input goes through an explicit patch matrix; multi-channel
    input accumulates one matrix product per filter tap, which avoids copying
    a patch matrix ``f_h * f_w`` times the size of the input.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv_valid expects 4-d input and filters")
    B, H, W, C = x.shape
    fh, fw, fc, F = w.shape
    if fc != C:
        raise ShapeError(f"filter expects {fc} channels, input has {C}")
    if fh > H or fw > W:
        raise ShapeError(f"filter {fh}x{fw} larger than input {H}x{W}")
    if b.shape != (F,):
        raise ShapeError("bias must have one entry per filter")
    Ho, Wo = H - fh + 1, W - fw + 1
    if C == 1:
        cols = _im2col(x, fh, fw)
        out = (cols @ w.reshape(fh * fw, F)).reshape(B, Ho, Wo, F)
        out += b
        return out, (x.shape, cols, w)
    out = np.empty((B, Ho * Wo, F), dtype=np.result_type(x, w))
    out[...] = b
    for i in range(fh):
        for j in range(fw):
            out += _tap(x, i, j, Ho, Wo) @ w[i, j]
    return out.reshape(B, Ho, Wo, F), (x.shape, x, w)


def conv_valid_backward(dout: np.ndarray, cache, need_dx: bool = True):
    """Gradients (dx, dw, db) of :func:`conv_valid`."""
    xshape, saved, w = cache
    B, H, W, C = xshape
    fh, fw, _, F = w.shape
    Ho, Wo = H - fh + 1, W - fw + 1
    d2 = dout.reshape(-1, F)
    db = d2.sum(axis=0)
    if C == 1:
        dw = (saved.T @ d2).reshape(w.shape)
    else:
        d3 = d2.reshape(B, Ho * Wo, F)
        dw = np.empty_like(w)
        for i in range(fh):
            for j in range(fw):
                dw[i, j] = (_tap(saved, i, j, Ho, Wo).transpose(0, 2, 1) @ d3).sum(axis=0)
    dx = None
    if need_dx:
        dx = np.zeros(xshape, dtype=dout.dtype)
        for i in range(fh):
            for j in range(fw):
                dx[:, i:i + Ho, j:j + Wo, :] += (d2 @ w[i, j].T).reshape(B, Ho, Wo, C)
    return dx, dw, db


def relu(x: np.ndarray):
    mask = x > 0
    return np.maximum(x, 0, dtype=x.dtype), mask


def relu_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dout * mask


def fc(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Affine layer ``x @ w + b`` on (batch, features) input."""
    if x.ndim != 2 or w.shape[0] != x.shape[1] or b.shape != (w.shape[1],):
        raise ShapeError(f"fc shapes incompatible: x{x.shape} w{w.shape} b{b.shape}")
    return x @ w + b, (x, w)


def fc_backward(dout: np.ndarray, cache, need_dx: bool = True):
    x, w = cache
    dx = dout @ w.T if need_dx else None
    return dx, x.T @ dout, dout.sum(axis=0)


def dropout(x: np.ndarray, rate: float, mode: str = "train", rng=None):
    """Inverted dropout. Returns (output, scale mask); infer mode is identity."""
    if not 0 <= rate < 1:
        raise ValueError("dropout rate must lie in [0, 1)")
    if mode not in ("train", "infer"):
        raise ValueError("mode must be 'train' or 'infer'")
    if mode == "infer" or rate == 0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    keep = rng.random(x.shape) >= rate
    scale = keep.astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * scale, scale


def dropout_backward(dout: np.ndarray, scale) -> np.ndarray:
    return dout if scale is None else dout * scale


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)

"""Forward/backward kernels for the layers used by the encoder-decoder.

Layout is NCHW throughout. Convolution weights are ``(out, in, kh, kw)``;
transposed-convolution weights are ``(in, out, kh, kw)`` so that a transposed
convolution with weight ``w`` is exactly the adjoint of a convolution with the
same ``w``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible with a layer."""


def _out_size(n: int, k: int, stride: int, padding: int, dilation: int) -> int:
    return (n + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, dilation: int, oh: int, ow: int) -> np.ndarray:
    """Strided view (N, C, oh, ow, kh, kw) over an already padded input."""
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    return as_strided(
        xp,
        shape=(n, c, oh, ow, kh, kw),
        strides=(sn, sc, sh * stride, sw * stride, sh * dilation, sw * dilation),
        writeable=False,
    )


def _scatter_add(canvas: np.ndarray, cols: np.ndarray, stride: int, dilation: int) -> None:
    """col2im: add cols (kh, kw, N, C, oh, ow) into canvas (N, C, H, W) in place.

    Taps are accumulated into one dense buffer per stride phase so every add is
    over contiguous memory; each phase is interleaved into the canvas once.
    """
    kh, kw, n, c, oh, ow = cols.shape
    full_h, full_w = canvas.shape[2:]
    phases = {}
    for i in range(kh):
        a, qi = divmod(i * dilation, stride)[::-1]
        for j in range(kw):
            b, qj = divmod(j * dilation, stride)[::-1]
            buf = phases.get((a, b))
            if buf is None:
                ph = -(-(full_h - a) // stride)
                pw = -(-(full_w - b) // stride)
                buf = phases[(a, b)] = np.zeros((n, c, ph, pw), dtype=canvas.dtype)
            buf[:, :, qi:qi + oh, qj:qj + ow] += cols[i, j]
    for (a, b), buf in phases.items():
        canvas[:, :, a::stride, b::stride] += buf


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d_forward(x, w, b, stride=1, padding=0, dilation=1, name="conv"):
    """Cross-correlation. Returns ``(y, cache)``."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"{name}: input {x.shape} incompatible with weight {w.shape}")
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    oh = _out_size(h, kh, stride, padding, dilation)
    ow = _out_size(wd, kw, stride, padding, dilation)
    if oh < 1 or ow < 1:
        raise ShapeError(f"{name}: input {x.shape} too small for kernel {kh}x{kw}")
    xp = _pad(x, padding)
    win = _windows(xp, kh, kw, stride, dilation, oh, ow)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    y = cols @ w.reshape(f, -1).T
    if b is not None:
        y += b
    y = np.ascontiguousarray(y.reshape(n, oh, ow, f).transpose(0, 3, 1, 2))
    return y, (x.shape, xp.shape, cols, w, stride, padding, dilation)


def conv2d_backward(gy, cache, need_dx=True):
    """Returns ``(dx, dw, db)`` for :func:`conv2d_forward`; ``dx`` is None if not needed."""
    x_shape, xp_shape, cols, w, stride, padding, dilation = cache
    f = w.shape[0]
    gmat = gy.transpose(0, 2, 3, 1).reshape(-1, f)
    dw = (gmat.T @ cols).reshape(w.shape)
    db = gy.sum(axis=(0, 2, 3))
    if not need_dx:
        return None, dw, db
    dcols = np.tensordot(w, gy, axes=([0], [1])).transpose(1, 2, 3, 0, 4, 5)  # (kh, kw, N, C, oh, ow)
    dxp = np.zeros(xp_shape, dtype=gy.dtype)
    _scatter_add(dxp, dcols, stride, dilation)
    h, wd = x_shape[2:]
    dx = dxp[:, :, padding:padding + h, padding:padding + wd]
    return np.ascontiguousarray(dx), dw, db


def deconv_out_size(n: int, k: int, stride: int, padding: int, dilation: int = 1, output_padding: int = 0) -> int:
    return (n - 1) * stride - 2 * padding + dilation * (k - 1) + output_padding + 1


def deconv2d_forward(x, w, b, stride=1, padding=0, dilation=1, output_padding=0, name="deconv"):
    """Transposed convolution (adjoint of :func:`conv2d_forward` w.r.t. its input)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"{name}: input {x.shape} incompatible with weight {w.shape}")
    if output_padding >= max(stride, dilation):
        raise ShapeError(f"{name}: output_padding must be smaller than stride or dilation")
    n, _, h, wd = x.shape
    _, cout, kh, kw = w.shape
    oh = deconv_out_size(h, kh, stride, padding, dilation, output_padding)
    ow = deconv_out_size(wd, kw, stride, padding, dilation, output_padding)
    if oh < 1 or ow < 1:
        raise ShapeError(f"{name}: empty output for input {x.shape}")
    full_h = (h - 1) * stride + dilation * (kh - 1) + 1 + output_padding
    full_w = (wd - 1) * stride + dilation * (kw - 1) + 1 + output_padding
    cols = np.tensordot(w, x, axes=([0], [1])).transpose(1, 2, 3, 0, 4, 5)  # (kh, kw, N, Cout, h, w)
    canvas = np.zeros((n, cout, full_h, full_w), dtype=np.result_type(x, w))
    _scatter_add(canvas, cols, stride, dilation)
    y = canvas[:, :, padding:padding + oh, padding:padding + ow]
    if b is not None:
        y = y + b[None, :, None, None]
    return np.ascontiguousarray(y), (x, w, stride, padding, dilation, (full_h, full_w))


def deconv2d_backward(gy, cache):
    """Returns ``(dx, dw, db)`` for :func:`deconv2d_forward`."""
    x, w, stride, padding, dilation, (full_h, full_w) = cache
    n, cin, h, wd = x.shape
    _, cout, kh, kw = w.shape
    oh, ow = gy.shape[2:]
    gfull = np.zeros((n, cout, full_h, full_w), dtype=gy.dtype)
    gfull[:, :, padding:padding + oh, padding:padding + ow] = gy
    win = _windows(gfull, kh, kw, stride, dilation, h, wd)  # (N, Cout, h, w, kh, kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * wd, cout * kh * kw)
    dx = (cols @ w.reshape(cin, -1).T).reshape(n, h, wd, cin)
    dx = np.ascontiguousarray(dx.transpose(0, 3, 1, 2))
    dw = (x.transpose(0, 2, 3, 1).reshape(-1, cin).T @ cols).reshape(w.shape)
    db = gy.sum(axis=(0, 2, 3))
    return dx, dw, db


def batchnorm_forward(x, scale, shift, running_mean, running_var, training, eps=BN_EPS, momentum=BN_MOMENTUM):
    """Per-channel batch norm. Running statistics are updated in place in training mode."""
    if training:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        count = x.shape[0] * x.shape[2] * x.shape[3]
        unbiased = var * count / max(count - 1, 1)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = scale[None, :, None, None] * xhat + shift[None, :, None, None]
    return y, (xhat, inv_std, scale, training)


def batchnorm_backward(gy, cache):
    """Returns ``(dx, dscale, dshift)``."""
    xhat, inv_std, scale, training = cache
    dshift = gy.sum(axis=(0, 2, 3))
    dscale = (gy * xhat).sum(axis=(0, 2, 3))
    g = gy * scale[None, :, None, None]
    if not training:
        return g * inv_std[None, :, None, None], dscale, dshift
    m = xhat.shape[0] * xhat.shape[2] * xhat.shape[3]
    dx = (inv_std[None, :, None, None] / m) * (
        m * g - g.sum(axis=(0, 2, 3))[None, :, None, None]
        - xhat * (g * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
    )
    return dx, dscale, dshift


def relu_forward(x):
    y = np.maximum(x, 0.0)
    return y, y > 0


def relu_backward(gy, cache):
    return gy * cache


def sigmoid_forward(x):
    # split by sign so exp never overflows
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return y, y


def sigmoid_backward(gy, cache):
    return gy * cache * (1.0 - cache)


def nearest_resize_forward(x, out_hw):
    """Nearest-neighbour resampling of the two spatial axes to ``out_hw``."""
    h, w = x.shape[2:]
    oh, ow = out_hw
    rows = np.minimum((np.arange(oh) * h) // oh, h - 1)
    cols = np.minimum((np.arange(ow) * w) // ow, w - 1)
    return np.ascontiguousarray(x[:, :, rows][:, :, :, cols]), (x.shape, rows, cols)


def nearest_resize_backward(gy, cache):
    shape, rows, cols = cache
    tmp = np.zeros(shape[:3] + (gy.shape[3],), dtype=gy.dtype)
    np.add.at(tmp, (slice(None), slice(None), rows), gy)
    dx = np.zeros(shape, dtype=gy.dtype)
    np.add.at(dx, (slice(None), slice(None), slice(None), cols), tmp)
    return dx


def mse_loss(pred, target):
    """Mean squared error and its gradient w.r.t. ``pred``."""
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def l1_loss(pred, target):
    """Mean absolute error; subgradient 0 at exact ties."""
    diff = pred - target
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size

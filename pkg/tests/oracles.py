"""Independent reference implementations used as test oracles."""
from __future__ import annotations

import math

import numpy as np

from vibroscene.nn import functional as F


# ------------------------------------------------------------ finite differences

def numeric_grad(f, x: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Central differences of the scalar function ``f`` with respect to ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"], op_flags=["readwrite"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def naive_conv2d(x, w, b, stride, padding, dilation):
    n, c, h, wd = x.shape
    co, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    ow = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    y = np.zeros((n, co, oh, ow))
    for i in range(oh):
        for j in range(ow):
            for p in range(kh):
                for q in range(kw):
                    patch = xp[:, :, i * stride + p * dilation, j * stride + q * dilation]
                    y[:, :, i, j] += patch @ w[:, :, p, q].T
    return y + b[None, :, None, None]


def naive_deconv2d(x, w, b, stride, padding, dilation, output_padding):
    """Scatter form of the transposed convolution, one input pixel at a time."""
    n, ci, h, wd = x.shape
    _, co, kh, kw = w.shape
    full_h = (h - 1) * stride + dilation * (kh - 1) + 1 + output_padding
    full_w = (wd - 1) * stride + dilation * (kw - 1) + 1 + output_padding
    canvas = np.zeros((n, co, full_h, full_w))
    for i in range(h):
        for j in range(wd):
            for p in range(kh):
                for q in range(kw):
                    canvas[:, :, i * stride + p * dilation, j * stride + q * dilation] += x[:, :, i, j] @ w[:, :, p, q]
    y = canvas[:, :, padding:full_h - padding, padding:full_w - padding]
    return y + b[None, :, None, None]


# ------------------------------------------------------------ gradient-check cases

def _bounded_away(rng, shape, gap):
    """Random values with |v| >= gap, so kinks (relu, |.|) are not straddled by +-eps."""
    v = rng.normal(size=shape)
    return np.where(np.abs(v) < gap, np.sign(v + 1e-12) * (gap + np.abs(v)), v)


def gradient_cases(seed: int = 0):
    """(name, loss_fn, tensors, analytic_fn) cases covering every differentiable op.

    ``loss_fn()`` returns a scalar computed from the current contents of
    ``tensors``; ``analytic_fn()`` returns analytic gradients in the same order.
    """
    rng = np.random.default_rng(seed)
    cases = []

    def conv_case(n, c, h, w_, co, k, stride, padding, dilation):
        x = rng.normal(size=(n, c, h, w_))
        w = rng.normal(size=(co, c, k, k)) * 0.5
        b = rng.normal(size=co)
        y0, _ = F.conv2d_forward(x, w, b, stride, padding, dilation)
        r = rng.normal(size=y0.shape)

        def loss():
            return float(np.sum(F.conv2d_forward(x, w, b, stride, padding, dilation)[0] * r))

        def grads():
            _, cache = F.conv2d_forward(x, w, b, stride, padding, dilation)
            return F.conv2d_backward(r, cache)

        cases.append((f"conv{(n, c, h, w_, co, k, stride, padding, dilation)}", loss, [x, w, b], grads))

    def deconv_case(n, c, h, w_, co, k, stride, padding, dilation, op):
        x = rng.normal(size=(n, c, h, w_))
        w = rng.normal(size=(c, co, k, k)) * 0.5
        b = rng.normal(size=co)
        y0, _ = F.deconv2d_forward(x, w, b, stride, padding, dilation, op)
        r = rng.normal(size=y0.shape)

        def loss():
            return float(np.sum(F.deconv2d_forward(x, w, b, stride, padding, dilation, op)[0] * r))

        def grads():
            _, cache = F.deconv2d_forward(x, w, b, stride, padding, dilation, op)
            return F.deconv2d_backward(r, cache)

        cases.append((f"deconv{(n, c, h, w_, co, k, stride, padding, dilation, op)}", loss, [x, w, b], grads))

    def bn_case(n, c, h, w_):
        x = rng.normal(size=(n, c, h, w_)) * 2 + 1
        scale = rng.normal(size=c)
        shift = rng.normal(size=c)
        r = rng.normal(size=x.shape)

        def fwd():
            return F.batchnorm_forward(x, scale, shift, np.zeros(c), np.ones(c), True)

        def loss():
            return float(np.sum(fwd()[0] * r))

        def grads():
            return F.batchnorm_backward(r, fwd()[1])

        cases.append((f"batchnorm{(n, c, h, w_)}", loss, [x, scale, shift], grads))

    def unary_case(name, fwd, bwd, shape, gap=0.0):
        x = _bounded_away(rng, shape, gap) if gap else rng.normal(size=shape) * 3
        r = rng.normal(size=shape)

        def loss():
            return float(np.sum(fwd(x)[0] * r))

        def grads():
            return (bwd(r, fwd(x)[1]),)

        cases.append((f"{name}{shape}", loss, [x], grads))

    def resize_case(shape, out_hw):
        x = rng.normal(size=shape)
        y0, _ = F.nearest_resize_forward(x, out_hw)
        r = rng.normal(size=y0.shape)

        def loss():
            return float(np.sum(F.nearest_resize_forward(x, out_hw)[0] * r))

        def grads():
            return (F.nearest_resize_backward(r, F.nearest_resize_forward(x, out_hw)[1]),)

        cases.append((f"resize{shape}->{out_hw}", loss, [x], grads))

    def loss_case(name, fn, shape):
        pred = rng.uniform(size=shape)
        target = pred + _bounded_away(rng, shape, 0.01) * 0.1

        def loss():
            return fn(pred, target)[0]

        def grads():
            return (fn(pred, target)[1],)

        cases.append((f"{name}{shape}", loss, [pred], grads))

    conv_case(1, 2, 6, 6, 3, 3, 1, 1, 1)
    conv_case(2, 3, 7, 5, 2, 4, 2, 1, 1)
    conv_case(1, 2, 8, 8, 2, 4, 3, 1, 1)
    conv_case(2, 1, 8, 6, 3, 3, 1, 0, 2)
    conv_case(1, 4, 5, 5, 4, 1, 1, 0, 1)
    conv_case(3, 2, 4, 4, 2, 4, 2, 1, 1)
    deconv_case(1, 2, 3, 3, 2, 4, 2, 1, 1, 0)
    deconv_case(2, 3, 2, 4, 2, 3, 2, 1, 1, 1)
    deconv_case(1, 2, 1, 1, 3, 4, 2, 1, 1, 0)
    deconv_case(1, 1, 3, 2, 2, 3, 1, 1, 2, 0)
    deconv_case(2, 2, 4, 4, 1, 2, 3, 0, 1, 2)
    bn_case(4, 3, 3, 3)
    bn_case(8, 2, 1, 1)
    bn_case(2, 5, 4, 2)
    unary_case("relu", F.relu_forward, F.relu_backward, (2, 3, 4, 4), gap=0.01)
    unary_case("relu", F.relu_forward, F.relu_backward, (1, 1, 8, 8), gap=0.01)
    unary_case("sigmoid", F.sigmoid_forward, F.sigmoid_backward, (2, 2, 5, 5))
    unary_case("sigmoid", F.sigmoid_forward, F.sigmoid_backward, (3, 1, 2, 7))
    resize_case((1, 2, 3, 3), (4, 4))
    resize_case((2, 1, 5, 4), (2, 3))
    loss_case("mse", F.mse_loss, (2, 3, 4, 4))
    loss_case("l1", F.l1_loss, (2, 1, 4, 4))
    loss_case("mse", F.mse_loss, (1, 3, 3, 5))
    loss_case("l1", F.l1_loss, (3, 1, 2, 6))
    return cases


def check_case(case, eps: float = 1e-3) -> float:
    """Worst relative error over all tensors of one gradient case."""
    _, loss, tensors, grads = case
    analytic = [np.array(g) for g in grads()]
    worst = 0.0
    for t, a in zip(tensors, analytic):
        worst = max(worst, max_rel_err(a, numeric_grad(loss, t, eps)))
    return worst


# ------------------------------------------------------------ rasters and boxes

def supersampled_count(world, shape, pose, res: int, factor: int = 4) -> float:
    """Footprint area in output pixels estimated on a ``factor`` times finer grid."""
    from vibroscene.geometry import footprint_mask

    fine = footprint_mask(world, shape, pose, res * factor)
    return fine.sum() / factor ** 2


def rotation_sweep_box(points: np.ndarray, step_deg: float = 0.1) -> tuple[float, float]:
    """(min area, angle) of the enclosing rectangle over an exhaustive angle sweep."""
    best, best_a = math.inf, 0.0
    for a in np.deg2rad(np.arange(0.0, 90.0, step_deg)):
        c, s = math.cos(a), math.sin(a)
        u = points[:, 0] * c + points[:, 1] * s
        v = -points[:, 0] * s + points[:, 1] * c
        area = (u.max() - u.min()) * (v.max() - v.min())
        if area < best:
            best, best_a = area, a
    return best, best_a


def brute_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = union = 0
    for x, y in zip(a.ravel(), b.ravel()):
        inter += bool(x and y)
        union += bool(x or y)
    return inter / union if union else 0.0


def direct_xcorr_lag(x: np.ndarray, y: np.ndarray, max_lag: int) -> int:
    """Lag maximizing the normalized time-domain cross-correlation sum x[n] y[n - lag]."""
    best, best_lag = -math.inf, 0
    for lag in range(-max_lag, max_lag + 1):
        if lag >= 0:
            a, b = x[lag:], y[: len(y) - lag]
        else:
            a, b = x[: len(x) + lag], y[-lag:]
        v = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b) + 1e-300))
        if v > best:
            best, best_lag = v, lag
    return best_lag


# ------------------------------------------------------------ adam by hand

def adam_by_hand(p0: float, grads, lr: float, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar Adam trace written out as the textbook recurrence."""
    p, m, v, out = p0, 0.0, 0.0, []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p = p - lr * mhat / (math.sqrt(vhat) + eps)
        out.append(p)
    return out

"""Forward and backward passes for the individual layer kinds.

All functions take batched NCHW arrays. Reductions run in float64; callers
decide the storage dtype.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_output_size(H, W, h, w, stride=1, padding=0):
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if h > Hp or w > Wp:
        raise ValueError(f"filter {h}x{w} larger than input {Hp}x{Wp}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return (Hp - h) // stride + 1, (Wp - w) // stride + 1


def count_impacted_outputs(H, W, h, w, stride=1):
    """Number of outputs of one channel touched by a single filter weight."""
    Ho, Wo = conv_output_size(H, W, h, w, stride)
    return Ho * Wo


def _im2col(x, h, w, stride, padding):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (h, w), axis=(2, 3))[:, :, ::stride, ::stride]
    N, C, Ho, Wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * Ho * Wo, C * h * w)
    return cols, Ho, Wo


def conv2d_forward(x, F, stride=1, padding=0):
    """Cross-correlation of x [N, C_in, H, W] (or [C_in, H, W]) with F [C_out, C_in, h, w]."""
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or F.ndim != 4:
        raise ValueError(f"bad conv shapes: input {x.shape}, filter {F.shape}")
    N, C, H, W = x.shape
    Co, Ci, h, w = F.shape
    if Ci != C:
        raise ValueError(f"filter expects {Ci} input channels, got {C}")
    conv_output_size(H, W, h, w, stride, padding)
    cols, Ho, Wo = _im2col(np.asarray(x, dtype=np.float64), h, w, stride, padding)
    out = cols @ np.asarray(F, dtype=np.float64).reshape(Co, -1).T
    out = out.reshape(N, Ho, Wo, Co).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    cache = (cols, x.shape, F, stride, padding)
    return (out[0] if single else out), cache


def conv2d_backward(dout, cache):
    cols, xshape, F, stride, padding = cache
    N, C, H, W = xshape
    Co, Ci, h, w = F.shape
    _, _, Ho, Wo = dout.shape
    dmat = dout.transpose(0, 2, 3, 1).reshape(-1, Co)
    dF = (dmat.T @ cols).reshape(F.shape)
    dcols = (dmat @ np.asarray(F, dtype=np.float64).reshape(Co, -1)).reshape(N, Ho, Wo, C, h, w)
    dxp = np.zeros((N, C, H + 2 * padding, W + 2 * padding))
    for i in range(h):
        for j in range(w):
            dxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += (
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    if padding:
        dxp = dxp[:, :, padding:-padding, padding:-padding]
    return dxp, dF


def _bn_shape(x):
    # per-channel vectors broadcast over N, H, W (or over N for 2-D input)
    return (1, -1) + (1,) * (x.ndim - 2)


def _bn_denominator(var, eps, literal):
    # literal=True divides by the variance itself instead of its square root
    return (var + eps) if literal else np.sqrt(var + eps)


def batchnorm_forward(x, gamma, beta, mean, var, eps=1e-5, literal=False):
    """Inference-mode batch normalization with stored statistics."""
    C = x.shape[1]
    for name, v in (("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)):
        if len(v) != C:
            raise ValueError(f"{name} has length {len(v)}, expected {C} channels")
    if np.any(np.asarray(var) < 0):
        raise ValueError("variance must be non-negative")
    s = _bn_shape(x)
    g = np.asarray(gamma, np.float64).reshape(s)
    b = np.asarray(beta, np.float64).reshape(s)
    m = np.asarray(mean, np.float64).reshape(s)
    d = _bn_denominator(np.asarray(var, np.float64), eps, literal).reshape(s)
    return g * (np.asarray(x, np.float64) - m) / d + b


def batchnorm_train_forward(x, gamma, beta, eps=1e-5, literal=False):
    """Batch-statistics normalization. Returns (out, batch_mean, batch_var, cache)."""
    axes = (0,) + tuple(range(2, x.ndim))
    x = np.asarray(x, np.float64)
    mu = x.mean(axis=axes)
    xc = x - mu.reshape(_bn_shape(x))
    var = (xc * xc).mean(axis=axes)
    d = _bn_denominator(var, eps, literal)
    xhat = xc / d.reshape(_bn_shape(x))
    g = np.asarray(gamma, np.float64)
    out = g.reshape(_bn_shape(x)) * xhat + np.asarray(beta, np.float64).reshape(_bn_shape(x))
    cache = (xc, xhat, var, d, g, eps, literal, axes)
    return out, mu, var, cache


def batchnorm_backward(dout, cache):
    xc, xhat, var, d, g, eps, literal, axes = cache
    s = _bn_shape(xc)
    m = xc.size // xc.shape[1]
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * g.reshape(s)
    # d = (var+eps)^a with a = 1 (literal) or 1/2
    a = 1.0 if literal else 0.5
    ddvar = a * d / (var + eps)
    dvar = (dxhat * xc).sum(axis=axes) * (-1.0 / d**2) * ddvar
    dmu = -(dxhat / d.reshape(s)).sum(axis=axes)
    dx = dxhat / d.reshape(s) + dvar.reshape(s) * 2.0 * xc / m + dmu.reshape(s) / m
    return dx, dgamma, dbeta


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    return dout * (x > 0)


def maxpool_forward(x, size):
    N, C, H, W = x.shape
    Ho, Wo = H // size, W // size
    xr = x[:, :, :Ho * size, :Wo * size].reshape(N, C, Ho, size, Wo, size)
    out = xr.max(axis=(3, 5))
    return out, (x.shape, xr, out, size)


def maxpool_backward(dout, cache):
    xshape, xr, out, size = cache
    mask = xr == out[:, :, :, None, :, None]
    # route the gradient to the first maximum only
    flat = mask.transpose(0, 1, 2, 4, 3, 5).reshape(*out.shape, size * size)
    first = np.zeros_like(flat)
    idx = flat.argmax(axis=-1)
    np.put_along_axis(first, idx[..., None], True, axis=-1)
    first = first.reshape(*out.shape, size, size).transpose(0, 1, 2, 4, 3, 5)
    dxr = first * dout[:, :, :, None, :, None]
    N, C, Ho, _, Wo, _ = xr.shape
    dx = np.zeros(xshape)
    dx[:, :, :Ho * size, :Wo * size] = dxr.reshape(N, C, Ho * size, Wo * size)
    return dx


def global_avg_pool_forward(x):
    return x.mean(axis=(2, 3))


def global_avg_pool_backward(dout, xshape):
    N, C, H, W = xshape
    return np.broadcast_to(dout[:, :, None, None] / (H * W), xshape).copy()


def fc_forward(x, weight, bias):
    return np.asarray(x, np.float64) @ np.asarray(weight, np.float64).T + np.asarray(bias, np.float64)


def fc_backward(dout, x, weight):
    return dout @ np.asarray(weight, np.float64), dout.T @ x, dout.sum(axis=0)


def softmax_cross_entropy(logits, labels):
    """Mean loss and gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n

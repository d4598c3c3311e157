"""Pure-numpy implementations of the hot kernels.

Reference backend: every function here has a compiled twin in
``flowsig._ckernels`` with the same signature and semantics. All arrays
are C-contiguous float64; shapes are documented per function. Reductions
use numpy's pairwise summation, so results may differ from the compiled
backend in the last couple of ulps but never beyond.
"""

import numpy as np

NAME = "python"

_SQRT_2_OVER_PI = 0.7978845608028654
_GELU_C = 0.044715


def conv1d_forward(x, w, stride):
    """Valid cross-correlation. x [B,C,L], w [O,C,K] -> y [B,O,T]."""
    B, C, L = x.shape
    O, _, K = w.shape
    T = (L - K) // stride + 1
    s0, s1, s2 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x, shape=(B, C, T, K), strides=(s0, s1, s2 * stride, s2)
    )
    return np.einsum("bctk,ock->bot", windows, w, optimize=True)


def conv1d_backward(x, w, gy, stride):
    """Gradients of conv1d_forward w.r.t. input and weight."""
    B, C, L = x.shape
    O, _, K = w.shape
    T = gy.shape[2]
    s0, s1, s2 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x, shape=(B, C, T, K), strides=(s0, s1, s2 * stride, s2)
    )
    gw = np.einsum("bot,bctk->ock", gy, windows, optimize=True)
    gx = np.zeros_like(x)
    # scatter: input position t*stride + k receives gy[...,t] * w[...,k]
    for k in range(K):
        contrib = np.einsum("bot,oc->bct", gy, w[:, :, k], optimize=True)
        gx[:, :, k : k + T * stride : stride] += contrib
    return gx, gw


def layer_norm_forward(x, eps):
    """Normalize rows of x [N,D]; returns (y, mean, rstd)."""
    mean = x.mean(axis=1)
    var = x.var(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mean[:, None]) * rstd[:, None]
    return y, mean, rstd


def layer_norm_backward(y, rstd, gy):
    """Input gradient of layer_norm from saved (y, rstd)."""
    g_mean = gy.mean(axis=1, keepdims=True)
    gy_y_mean = (gy * y).mean(axis=1, keepdims=True)
    return rstd[:, None] * (gy - g_mean - y * gy_y_mean)


def softmax_forward(x):
    """Row softmax of x [N,D]."""
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(y, gy):
    dot = (gy * y).sum(axis=1, keepdims=True)
    return y * (gy - dot)


def gelu_forward(x):
    """tanh-approximated GELU, elementwise on a flat array."""
    u = _SQRT_2_OVER_PI * (x + _GELU_C * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_backward(x, gy):
    u = _SQRT_2_OVER_PI * (x + _GELU_C * x * x * x)
    th = np.tanh(u)
    du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * x * x)
    return gy * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du)


def silu_forward(x):
    sig = 1.0 / (1.0 + np.exp(-x))
    return x * sig


def silu_backward(x, gy):
    sig = 1.0 / (1.0 + np.exp(-x))
    return gy * sig * (1.0 + x * (1.0 - sig))


def adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected Adam step, in place on flat arrays."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)

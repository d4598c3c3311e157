# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twins of the kernels in flowsig._kernels_py.

Same signatures, same float64 contract. Loops are written out so the
compiler can keep everything in registers; no OpenMP, the acceptance
budget is single-core.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt, tanh, pow

cnp.import_array()

NAME = "compiled"

cdef double SQRT_2_OVER_PI = 0.7978845608028654
cdef double GELU_C = 0.044715


def conv1d_forward(double[:, :, ::1] x, double[:, :, ::1] w, int stride):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t O = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t T = (L - K) // stride + 1
    y_arr = np.zeros((B, O, T), dtype=np.float64)
    cdef double[:, :, ::1] y = y_arr
    cdef Py_ssize_t b, o, t, c, k, base
    cdef double acc
    for b in range(B):
        for o in range(O):
            for t in range(T):
                base = t * stride
                acc = 0.0
                for c in range(C):
                    for k in range(K):
                        acc += x[b, c, base + k] * w[o, c, k]
                y[b, o, t] = acc
    return y_arr


def conv1d_backward(double[:, :, ::1] x, double[:, :, ::1] w,
                    double[:, :, ::1] gy, int stride):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t O = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t T = gy.shape[2]
    gx_arr = np.zeros((B, C, L), dtype=np.float64)
    gw_arr = np.zeros((O, C, K), dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, :, ::1] gw = gw_arr
    cdef Py_ssize_t b, o, t, c, k, base
    cdef double g
    for b in range(B):
        for o in range(O):
            for t in range(T):
                g = gy[b, o, t]
                base = t * stride
                for c in range(C):
                    for k in range(K):
                        gx[b, c, base + k] += g * w[o, c, k]
                        gw[o, c, k] += g * x[b, c, base + k]
    return gx_arr, gw_arr


def layer_norm_forward(double[:, ::1] x, double eps):
    cdef Py_ssize_t N = x.shape[0], D = x.shape[1]
    y_arr = np.empty((N, D), dtype=np.float64)
    mean_arr = np.empty(N, dtype=np.float64)
    rstd_arr = np.empty(N, dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef double[::1] mean = mean_arr
    cdef double[::1] rstd = rstd_arr
    cdef Py_ssize_t i, j
    cdef double mu, var, d, r
    for i in range(N):
        mu = 0.0
        for j in range(D):
            mu += x[i, j]
        mu /= D
        var = 0.0
        for j in range(D):
            d = x[i, j] - mu
            var += d * d
        var /= D
        r = 1.0 / sqrt(var + eps)
        mean[i] = mu
        rstd[i] = r
        for j in range(D):
            y[i, j] = (x[i, j] - mu) * r
    return y_arr, mean_arr, rstd_arr


def layer_norm_backward(double[:, ::1] y, double[::1] rstd, double[:, ::1] gy):
    cdef Py_ssize_t N = y.shape[0], D = y.shape[1]
    gx_arr = np.empty((N, D), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef Py_ssize_t i, j
    cdef double gm, gym, r
    for i in range(N):
        gm = 0.0
        gym = 0.0
        for j in range(D):
            gm += gy[i, j]
            gym += gy[i, j] * y[i, j]
        gm /= D
        gym /= D
        r = rstd[i]
        for j in range(D):
            gx[i, j] = r * (gy[i, j] - gm - y[i, j] * gym)
    return gx_arr


def softmax_forward(double[:, ::1] x):
    cdef Py_ssize_t N = x.shape[0], D = x.shape[1]
    y_arr = np.empty((N, D), dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef Py_ssize_t i, j
    cdef double mx, s
    for i in range(N):
        mx = x[i, 0]
        for j in range(1, D):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(D):
            y[i, j] = exp(x[i, j] - mx)
            s += y[i, j]
        for j in range(D):
            y[i, j] /= s
    return y_arr


def softmax_backward(double[:, ::1] y, double[:, ::1] gy):
    cdef Py_ssize_t N = y.shape[0], D = y.shape[1]
    gx_arr = np.empty((N, D), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef Py_ssize_t i, j
    cdef double dot
    for i in range(N):
        dot = 0.0
        for j in range(D):
            dot += gy[i, j] * y[i, j]
        for j in range(D):
            gx[i, j] = y[i, j] * (gy[i, j] - dot)
    return gx_arr


def gelu_forward(double[::1] x):
    cdef Py_ssize_t n = x.shape[0]
    y_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] y = y_arr
    cdef Py_ssize_t i
    cdef double v, u
    for i in range(n):
        v = x[i]
        u = SQRT_2_OVER_PI * (v + GELU_C * v * v * v)
        y[i] = 0.5 * v * (1.0 + tanh(u))
    return y_arr


def gelu_backward(double[::1] x, double[::1] gy):
    cdef Py_ssize_t n = x.shape[0]
    gx_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] gx = gx_arr
    cdef Py_ssize_t i
    cdef double v, u, th, du
    for i in range(n):
        v = x[i]
        u = SQRT_2_OVER_PI * (v + GELU_C * v * v * v)
        th = tanh(u)
        du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * v * v)
        gx[i] = gy[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du)
    return gx_arr


def silu_forward(double[::1] x):
    cdef Py_ssize_t n = x.shape[0]
    y_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] y = y_arr
    cdef Py_ssize_t i
    cdef double sig
    for i in range(n):
        sig = 1.0 / (1.0 + exp(-x[i]))
        y[i] = x[i] * sig
    return y_arr


def silu_backward(double[::1] x, double[::1] gy):
    cdef Py_ssize_t n = x.shape[0]
    gx_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] gx = gx_arr
    cdef Py_ssize_t i
    cdef double sig
    for i in range(n):
        sig = 1.0 / (1.0 + exp(-x[i]))
        gx[i] = gy[i] * sig * (1.0 + x[i] * (1.0 - sig))
    return gx_arr


def adam_update(double[::1] p, double[::1] g, double[::1] m, double[::1] v,
                long t, double lr, double beta1, double beta2, double eps):
    cdef Py_ssize_t n = p.shape[0]
    cdef double bc1 = 1.0 - pow(beta1, t)
    cdef double bc2 = 1.0 - pow(beta2, t)
    cdef Py_ssize_t i
    cdef double mhat, vhat
    for i in range(n):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        mhat = m[i] / bc1
        vhat = v[i] / bc2
        p[i] -= lr * mhat / (sqrt(vhat) + eps)

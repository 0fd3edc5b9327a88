# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels. See ``_kernels_py`` for semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def bn_act_forward(double[:, ::1] z, double[::1] gamma, double[::1] beta,
                   double eps, bint relu):
    cdef Py_ssize_t n = z.shape[0], d = z.shape[1], i, j
    out_a = np.empty((n, d))
    xhat_a = np.empty((n, d))
    mean_a = np.zeros(d)
    var_a = np.zeros(d)
    inv_a = np.empty(d)
    cdef double[:, ::1] out = out_a
    cdef double[:, ::1] xhat = xhat_a
    cdef double[::1] mean = mean_a
    cdef double[::1] var = var_a
    cdef double[::1] inv = inv_a
    cdef double t, inv_n = 1.0 / n
    for i in range(n):
        for j in range(d):
            mean[j] += z[i, j]
    for j in range(d):
        mean[j] *= inv_n
    for i in range(n):
        for j in range(d):
            t = z[i, j] - mean[j]
            xhat[i, j] = t
            var[j] += t * t
    for j in range(d):
        var[j] *= inv_n
        inv[j] = 1.0 / sqrt(var[j] + eps)
    for i in range(n):
        for j in range(d):
            t = xhat[i, j] * inv[j]
            xhat[i, j] = t
            t = t * gamma[j] + beta[j]
            if relu and t < 0.0:
                t = 0.0
            out[i, j] = t
    return out_a, xhat_a, inv_a, mean_a, var_a


def bn_act_backward(double[:, ::1] dout, double[:, ::1] out, double[:, ::1] xhat,
                    double[::1] gamma, double[::1] inv_std, bint relu):
    cdef Py_ssize_t n = dout.shape[0], d = dout.shape[1], i, j
    dz_a = np.empty((n, d))
    dgamma_a = np.zeros(d)
    dbeta_a = np.zeros(d)
    cdef double[:, ::1] dz = dz_a
    cdef double[::1] dgamma = dgamma_a
    cdef double[::1] dbeta = dbeta_a
    cdef double g, scale
    for i in range(n):
        for j in range(d):
            g = dout[i, j]
            if relu and not out[i, j] > 0.0:
                g = 0.0
            dz[i, j] = g
            dbeta[j] += g
            dgamma[j] += g * xhat[i, j]
    for i in range(n):
        for j in range(d):
            scale = gamma[j] * inv_std[j] / n
            dz[i, j] = scale * (n * dz[i, j] - dbeta[j] - xhat[i, j] * dgamma[j])
    return dz_a, dgamma_a, dbeta_a


def adam_update(double[::1] params, double[::1] grads, double[::1] m, double[::1] v,
                double lr_t, double beta1, double beta2, double eps):
    cdef Py_ssize_t k, n = params.shape[0]
    cdef double g
    for k in range(n):
        g = grads[k]
        m[k] = beta1 * m[k] + (1.0 - beta1) * g
        v[k] = beta2 * v[k] + (1.0 - beta2) * g * g
        params[k] -= lr_t * m[k] / (sqrt(v[k]) + eps)


def lerp_(double[::1] target, double[::1] source, double mix):
    cdef Py_ssize_t k, n = target.shape[0]
    cdef double keep = 1.0 - mix
    for k in range(n):
        target[k] = keep * target[k] + mix * source[k]


def affine_step(double[:, :, ::1] a, double[:, ::1] b, double[:, ::1] c,
                double[:, ::1] x, double[::1] u, double[::1] w):
    cdef Py_ssize_t n = x.shape[0], k, i, j
    res_a = np.empty((n, 4))
    cdef double[:, ::1] res = res_a
    cdef double s
    for k in range(n):
        for i in range(4):
            s = 0.0
            for j in range(4):
                s += a[k, i, j] * x[k, j]
            res[k, i] = s + b[k, i] * u[k] + c[k, i] * w[k]
    return res_a


def bn_act_eval(double[:, ::1] z, double[::1] gamma, double[::1] beta,
                double[::1] mean, double[::1] var, double eps, bint relu):
    cdef Py_ssize_t n = z.shape[0], d = z.shape[1], i, j
    out_a = np.empty((n, d))
    xhat_a = np.empty((n, d))
    inv_a = np.empty(d)
    cdef double[:, ::1] out = out_a
    cdef double[:, ::1] xhat = xhat_a
    cdef double[::1] inv = inv_a
    cdef double t
    for j in range(d):
        inv[j] = 1.0 / sqrt(var[j] + eps)
    for i in range(n):
        for j in range(d):
            t = (z[i, j] - mean[j]) * inv[j]
            xhat[i, j] = t
            t = t * gamma[j] + beta[j]
            if relu and t < 0.0:
                t = 0.0
            out[i, j] = t
    return out_a, xhat_a, inv_a

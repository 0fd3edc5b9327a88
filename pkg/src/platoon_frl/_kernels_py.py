"""Pure-NumPy reference versions of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and the same in-place semantics. The two must agree to rounding.
"""
import numpy as np


def bn_act_forward(z, gamma, beta, eps, relu):
    """Batch-normalise ``z`` over axis 0 with batch statistics, then activate.

    Returns ``(out, xhat, inv_std, mean, var)``; ``var`` is the biased batch
    variance.
    """
    mean = z.mean(axis=0)
    centered = z - mean
    var = (centered * centered).mean(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma + beta
    if relu:
        np.maximum(out, 0.0, out=out)
    return out, xhat, inv_std, mean, var


def bn_act_backward(dout, out, xhat, gamma, inv_std, relu):
    """Backward of :func:`bn_act_forward`. Returns ``(dz, dgamma, dbeta)``."""
    n = dout.shape[0]
    dy = dout * (out > 0.0) if relu else dout
    dbeta = dy.sum(axis=0)
    dgamma = (dy * xhat).sum(axis=0)
    dz = (gamma * inv_std / n) * (n * dy - dbeta - xhat * dgamma)
    return dz, dgamma, dbeta


def adam_update(params, grads, m, v, lr_t, beta1, beta2, eps):
    """In-place adaptive-moment step; ``lr_t`` already carries bias correction."""
    m *= beta1
    m += (1.0 - beta1) * grads
    v *= beta2
    v += (1.0 - beta2) * grads * grads
    params -= lr_t * m / (np.sqrt(v) + eps)


def lerp_(target, source, mix):
    """``target <- mix * source + (1 - mix) * target`` in place."""
    target *= 1.0 - mix
    target += mix * source


def affine_step(a, b, c, x, u, w):
    """Batched ``x' = A x + B u + C w`` for stacked per-vehicle systems.

    Shapes: ``a`` (n, 4, 4), ``b`` and ``c`` (n, 4), ``x`` (n, 4), ``u`` and
    ``w`` (n,).
    """
    return np.einsum("nij,nj->ni", a, x) + b * u[:, None] + c * w[:, None]


def bn_act_eval(z, gamma, beta, mean, var, eps, relu):
    """Batch-normalise with fixed (running) statistics, then activate.

    Returns ``(out, xhat, inv_std)``.
    """
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (z - mean) * inv_std
    out = xhat * gamma + beta
    if relu:
        np.maximum(out, 0.0, out=out)
    return out, xhat, inv_std

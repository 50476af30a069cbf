"""Pure-numpy implementations of the hot kernels.

This is the fallback backend used when the compiled extension is unavailable
(or explicitly disabled via TRISENT_BACKEND=python). Semantics match the
compiled backend: float32 storage, float64 accumulation inside reductions.
Bit patterns may differ from the compiled backend in the last ulp because
numpy uses pairwise summation; each backend on its own is deterministic.
"""

import numpy as np

NAME = "numpy"

_F32 = np.float32
_F64 = np.float64


def softmax_fwd(x):
    """Row softmax of a (rows, n) float32 array, float64 accumulation."""
    m = x.max(axis=1, keepdims=True)
    e = np.exp((x - m).astype(_F64))
    return (e / e.sum(axis=1, keepdims=True)).astype(_F32)


def softmax_bwd(y, gy):
    """Gradient of row softmax: gx = y * (gy - sum(gy * y))."""
    y64 = y.astype(_F64)
    gy64 = gy.astype(_F64)
    dot = np.sum(gy64 * y64, axis=1, keepdims=True)
    return (y64 * (gy64 - dot)).astype(_F32)


def layernorm_fwd(x, gamma, beta, eps):
    """Layer norm over the last axis of a (rows, n) array.

    Returns (y, mean, rstd) with mean/rstd as float32 per-row statistics,
    saved for the backward pass.
    """
    x64 = x.astype(_F64)
    mean = x64.mean(axis=1, keepdims=True)
    var = np.mean((x64 - mean) ** 2, axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x64 - mean) * rstd
    y = (xhat * gamma.astype(_F64) + beta.astype(_F64)).astype(_F32)
    return y, mean.astype(_F32).reshape(-1), rstd.astype(_F32).reshape(-1)


def layernorm_bwd(x, gamma, mean, rstd, gy):
    """Backward of layernorm_fwd. Returns (gx, dgamma, dbeta)."""
    x64 = x.astype(_F64)
    mean64 = mean.astype(_F64)[:, None]
    rstd64 = rstd.astype(_F64)[:, None]
    xhat = (x64 - mean64) * rstd64
    gy64 = gy.astype(_F64)
    gxhat = gy64 * gamma.astype(_F64)
    m1 = gxhat.mean(axis=1, keepdims=True)
    m2 = (gxhat * xhat).mean(axis=1, keepdims=True)
    gx = (rstd64 * (gxhat - m1 - xhat * m2)).astype(_F32)
    dgamma = np.sum(gy64 * xhat, axis=0).astype(_F32)
    dbeta = np.sum(gy64, axis=0).astype(_F32)
    return gx, dgamma, dbeta


def scatter_add_rows(out, ids, g):
    """out[ids[k]] += g[k] for every k, in index order. In place."""
    np.add.at(out, ids, g)


def adamw_update(w, g, m, v, t, lr, beta1, beta2, eps, wd):
    """One fused AdamW step on flat float32 arrays, in place.

    Moments are stored float32; the per-element step is computed in float64
    so both backends produce identical bits.
    """
    g64 = g.astype(_F64)
    m64 = beta1 * m.astype(_F64) + (1.0 - beta1) * g64
    v64 = beta2 * v.astype(_F64) + (1.0 - beta2) * g64 * g64
    m[:] = m64.astype(_F32)
    v[:] = v64.astype(_F32)
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    mhat = m.astype(_F64) / bc1
    vhat = v.astype(_F64) / bc2
    w64 = w.astype(_F64)
    w[:] = (w64 - lr * mhat / (np.sqrt(vhat) + eps) - lr * wd * w64).astype(_F32)

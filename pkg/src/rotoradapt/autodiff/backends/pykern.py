"""Pure-numpy implementations of the hot rollout kernels.

Signature-compatible with the compiled `_extkern` module; one of the two is
picked at import time (see `rotoradapt.autodiff.backends`).  All arrays are
C-contiguous float64.
"""

from __future__ import annotations

import numpy as np

NAME = "python"


def layer_tanh_fwd(x, W, b):
    return np.tanh(x @ W + b)


def layer_tanh_bwd(x, W, out, g):
    t = g * (1.0 - out * out)
    return t @ W.T, x.T @ t, t.sum(axis=0)


def linear_fwd(x, W, b):
    return x @ W + b


def linear_bwd(x, W, g):
    return g @ W.T, x.T @ g, g.sum(axis=0)


def matrt_fwd(v, M):
    # v [B,n] times M^T for a small square gain matrix M [m,n]
    return v @ M.T


def matrt_bwd(v, M, g):
    return g @ M, g.T @ v


def planar_rotate_fwd(phi, v, transpose):
    c = np.cos(phi)
    s = np.sin(phi)
    out = np.empty_like(v)
    if transpose:
        out[:, 0] = c * v[:, 0] + s * v[:, 1]
        out[:, 1] = -s * v[:, 0] + c * v[:, 1]
    else:
        out[:, 0] = c * v[:, 0] - s * v[:, 1]
        out[:, 1] = s * v[:, 0] + c * v[:, 1]
    out[:, 2] = v[:, 2]
    return out


def planar_rotate_bwd(phi, v, transpose, g):
    c = np.cos(phi)
    s = np.sin(phi)
    gv = np.empty_like(v)
    if transpose:
        # out0 = c v0 + s v1, out1 = -s v0 + c v1
        gphi = g[:, 0] * (-s * v[:, 0] + c * v[:, 1]) + g[:, 1] * (-c * v[:, 0] - s * v[:, 1])
        gv[:, 0] = c * g[:, 0] - s * g[:, 1]
        gv[:, 1] = s * g[:, 0] + c * g[:, 1]
    else:
        # out0 = c v0 - s v1, out1 = s v0 + c v1
        gphi = g[:, 0] * (-s * v[:, 0] - c * v[:, 1]) + g[:, 1] * (c * v[:, 0] - s * v[:, 1])
        gv[:, 0] = c * g[:, 0] + s * g[:, 1]
        gv[:, 1] = -s * g[:, 0] + c * g[:, 1]
    gv[:, 2] = g[:, 2]
    return gphi, gv


def apply_A_fwd(A, y):
    # A [B,n,p] adapted output layer applied to features y [B,p]
    return np.einsum("bnp,bp->bn", A, y)


def apply_A_bwd(A, y, g):
    gA = g[:, :, None] * y[:, None, :]
    gy = np.einsum("bnp,bn->bp", A, g)
    return gA, gy


def outer_fwd(a, b):
    return a[:, :, None] * b[:, None, :]


def outer_bwd(a, b, g):
    ga = np.einsum("bnp,bp->bn", g, b)
    gb = np.einsum("bnp,bn->bp", g, a)
    return ga, gb


def scale_concat2_fwd(a, b, w):
    out = np.concatenate([a, b], axis=1)
    out *= w
    return out


def scale_concat2_bwd(w, g, na):
    gw = g * w
    return np.ascontiguousarray(gw[:, :na]), np.ascontiguousarray(gw[:, na:])


def sumsq_tail_fwd(x):
    return (x.reshape(x.shape[0], -1) ** 2).sum(axis=1)


def sumsq_tail_bwd(x, g):
    return 2.0 * x * g.reshape((-1,) + (1,) * (x.ndim - 1))


def axpy_fwd(x, k, c):
    return x + c * k


def rk4_merge_fwd(x, k1, k2, k3, k4, h):
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def layer_tanh_pb_fwd(x, W, b):
    # per-row weights: x [B,n], W [B,n,m], b [B,m] (frozen model nets)
    return np.tanh(np.matmul(x[:, None, :], W)[:, 0, :] + b)


def layer_tanh_pb_bwd_x(W, out, g):
    t = g * (1.0 - out * out)
    return np.matmul(W, t[:, :, None])[:, :, 0]


def linear_pb_fwd(x, W, b):
    return np.matmul(x[:, None, :], W)[:, 0, :] + b


def linear_pb_bwd_x(W, g):
    return np.matmul(W, g[:, :, None])[:, :, 0]

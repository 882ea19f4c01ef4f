"""Row-wise hot kernels.

Each kernel has a loop implementation compiled with numba and a vectorized
numpy implementation. The public names dispatch to whichever backend is
active (see ``neurik._accel``); both are importable directly for testing and
benchmarking.
"""

import numpy as np

from ._accel import NUMBA_ENABLED, njit

SCALE_FLOOR = 1e-8


# -- numpy reference path -----------------------------------------------------


def layer_norm_fwd_np(x, gamma, beta, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0]


def layer_norm_bwd_np(g, xhat, rstd, gamma):
    d = xhat.shape[1]
    ggamma = (g * xhat).sum(axis=0)
    gbeta = g.sum(axis=0)
    gx_hat = g * gamma
    gx = (
        rstd[:, None]
        / d
        * (
            d * gx_hat
            - gx_hat.sum(axis=1, keepdims=True)
            - xhat * (gx_hat * xhat).sum(axis=1, keepdims=True)
        )
    )
    return gx, ggamma, gbeta


def softmax_rows_np(x):
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_bwd_np(g, y):
    return y * (g - (g * y).sum(axis=1, keepdims=True))


def gram_schmidt_np(r6):
    a = r6[:, 0:3]
    b = r6[:, 3:6]
    na = np.sqrt((a * a).sum(axis=1))
    c1 = a / np.maximum(na, 1e-300)[:, None]
    u = b - (c1 * b).sum(axis=1, keepdims=True) * c1
    nu = np.sqrt((u * u).sum(axis=1))
    c2 = u / np.maximum(nu, 1e-300)[:, None]
    c3 = np.cross(c1, c2)
    out = np.stack([c1, c2, c3], axis=2)
    return out, np.minimum(na, nu)


def fk_np(parents, offsets, rot, trans):
    n, j = rot.shape[0], rot.shape[1]
    world_r = np.empty_like(rot)
    pos = np.empty((n, j, 3), dtype=rot.dtype)
    world_r[:, 0] = rot[:, 0]
    pos[:, 0] = trans
    for k in range(1, j):
        p = parents[k]
        world_r[:, k] = world_r[:, p] @ rot[:, k]
        pos[:, k] = pos[:, p] + np.einsum("nab,nb->na", world_r[:, p], offsets[:, k])
    return pos


def standardize_frames_np(frames):
    centroid = frames.mean(axis=1)
    centered = frames - centroid[:, None, :]
    scale = np.sqrt((centered * centered).mean(axis=(1, 2)))
    out = centered / np.maximum(scale, SCALE_FLOOR)[:, None, None]
    return out, centroid, scale


# -- numba loop path ----------------------------------------------------------


@njit
def layer_norm_fwd_nb(x, gamma, beta, eps):
    n, d = x.shape
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(n, dtype=x.dtype)
    for i in range(n):
        mu = 0.0
        for k in range(d):
            mu += x[i, k]
        mu /= d
        var = 0.0
        for k in range(d):
            c = x[i, k] - mu
            var += c * c
        var /= d
        r = 1.0 / np.sqrt(var + eps)
        rstd[i] = r
        for k in range(d):
            h = (x[i, k] - mu) * r
            xhat[i, k] = h
            y[i, k] = h * gamma[k] + beta[k]
    return y, xhat, rstd


@njit
def layer_norm_bwd_nb(g, xhat, rstd, gamma):
    n, d = g.shape
    gx = np.empty_like(g)
    ggamma = np.zeros(d, dtype=g.dtype)
    gbeta = np.zeros(d, dtype=g.dtype)
    for i in range(n):
        s1 = 0.0
        s2 = 0.0
        for k in range(d):
            gh = g[i, k] * gamma[k]
            s1 += gh
            s2 += gh * xhat[i, k]
            ggamma[k] += g[i, k] * xhat[i, k]
            gbeta[k] += g[i, k]
        for k in range(d):
            gh = g[i, k] * gamma[k]
            gx[i, k] = rstd[i] / d * (d * gh - s1 - xhat[i, k] * s2)
    return gx, ggamma, gbeta


@njit
def softmax_rows_nb(x):
    n, d = x.shape
    y = np.empty_like(x)
    for i in range(n):
        m = x[i, 0]
        for k in range(1, d):
            if x[i, k] > m:
                m = x[i, k]
        s = 0.0
        for k in range(d):
            e = np.exp(x[i, k] - m)
            y[i, k] = e
            s += e
        for k in range(d):
            y[i, k] /= s
    return y


@njit
def softmax_rows_bwd_nb(g, y):
    n, d = g.shape
    gx = np.empty_like(g)
    for i in range(n):
        dot = 0.0
        for k in range(d):
            dot += g[i, k] * y[i, k]
        for k in range(d):
            gx[i, k] = y[i, k] * (g[i, k] - dot)
    return gx


@njit
def gram_schmidt_nb(r6):
    n = r6.shape[0]
    out = np.empty((n, 3, 3), dtype=r6.dtype)
    smallest = np.empty(n, dtype=r6.dtype)
    for i in range(n):
        a0, a1, a2 = r6[i, 0], r6[i, 1], r6[i, 2]
        b0, b1, b2 = r6[i, 3], r6[i, 4], r6[i, 5]
        na = np.sqrt(a0 * a0 + a1 * a1 + a2 * a2)
        inv = 1.0 / max(na, 1e-300)
        c10, c11, c12 = a0 * inv, a1 * inv, a2 * inv
        dot = c10 * b0 + c11 * b1 + c12 * b2
        u0, u1, u2 = b0 - dot * c10, b1 - dot * c11, b2 - dot * c12
        nu = np.sqrt(u0 * u0 + u1 * u1 + u2 * u2)
        inv = 1.0 / max(nu, 1e-300)
        c20, c21, c22 = u0 * inv, u1 * inv, u2 * inv
        out[i, 0, 0], out[i, 1, 0], out[i, 2, 0] = c10, c11, c12
        out[i, 0, 1], out[i, 1, 1], out[i, 2, 1] = c20, c21, c22
        out[i, 0, 2] = c11 * c22 - c12 * c21
        out[i, 1, 2] = c12 * c20 - c10 * c22
        out[i, 2, 2] = c10 * c21 - c11 * c20
        smallest[i] = min(na, nu)
    return out, smallest


@njit
def fk_nb(parents, offsets, rot, trans):
    n, j = rot.shape[0], rot.shape[1]
    world_r = np.empty_like(rot)
    pos = np.empty((n, j, 3), dtype=rot.dtype)
    for s in range(n):
        for a in range(3):
            pos[s, 0, a] = trans[s, a]
            for b in range(3):
                world_r[s, 0, a, b] = rot[s, 0, a, b]
        for k in range(1, j):
            p = parents[k]
            for a in range(3):
                acc = pos[s, p, a]
                for b in range(3):
                    acc += world_r[s, p, a, b] * offsets[s, k, b]
                    v = 0.0
                    for c in range(3):
                        v += world_r[s, p, a, c] * rot[s, k, c, b]
                    world_r[s, k, a, b] = v
                pos[s, k, a] = acc
    return pos


@njit
def standardize_frames_nb(frames):
    n, k = frames.shape[0], frames.shape[1]
    out = np.empty_like(frames)
    centroid = np.zeros((n, 3), dtype=frames.dtype)
    scale = np.empty(n, dtype=frames.dtype)
    for i in range(n):
        for p in range(k):
            for a in range(3):
                centroid[i, a] += frames[i, p, a]
        for a in range(3):
            centroid[i, a] /= k
        ss = 0.0
        for p in range(k):
            for a in range(3):
                c = frames[i, p, a] - centroid[i, a]
                ss += c * c
        s = np.sqrt(ss / (3 * k))
        scale[i] = s
        inv = 1.0 / max(s, SCALE_FLOOR)
        for p in range(k):
            for a in range(3):
                out[i, p, a] = (frames[i, p, a] - centroid[i, a]) * inv
    return out, centroid, scale


# -- dispatch -----------------------------------------------------------------

if NUMBA_ENABLED:
    layer_norm_fwd = layer_norm_fwd_nb
    layer_norm_bwd = layer_norm_bwd_nb
    softmax_rows = softmax_rows_nb
    softmax_rows_bwd = softmax_rows_bwd_nb
    _gram_schmidt = gram_schmidt_nb
    _fk = fk_nb
    _standardize = standardize_frames_nb
else:
    layer_norm_fwd = layer_norm_fwd_np
    layer_norm_bwd = layer_norm_bwd_np
    softmax_rows = softmax_rows_np
    softmax_rows_bwd = softmax_rows_bwd_np
    _gram_schmidt = gram_schmidt_np
    _fk = fk_np
    _standardize = standardize_frames_np

BACKEND = "numba" if NUMBA_ENABLED else "numpy"


def gram_schmidt(r6):
    """(N, 6) -> ((N, 3, 3) matrices, (N,) smallest pre-normalization norm)."""
    return _gram_schmidt(np.ascontiguousarray(r6))


def forward_kinematics(parents, offsets, rot, trans):
    """Joint world positions (N, J, 3) from local rotations (N, J, 3, 3).

    ``offsets`` is (J, 3) or (N, J, 3).
    """
    rot = np.ascontiguousarray(rot)
    offsets = np.broadcast_to(offsets, (rot.shape[0],) + offsets.shape[-2:])
    return _fk(
        np.asarray(parents, dtype=np.int64),
        np.ascontiguousarray(offsets, dtype=rot.dtype),
        rot,
        np.ascontiguousarray(trans, dtype=rot.dtype),
    )


def standardize_frames(frames):
    """Per-frame centering and combined-std scaling of (N, K, 3) keypoints."""
    return _standardize(np.ascontiguousarray(frames))

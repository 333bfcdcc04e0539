"""Fused differentiable operations used by the graph models.

Tensors with spatial-temporal layout follow ``[B, C, T, V]``: batch, channels,
frames and graph nodes. Single samples ``[C, T, V]`` are accepted wherever a
batch is and come back unbatched.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit as _expit

from ..errors import ConfigError, LabelError, ShapeError
from .tensor import Tensor, make_result


def softmax(logits: Tensor) -> Tensor:
    if logits.shape[-1] < 1:
        raise ShapeError("softmax over an empty axis")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return make_result(s, (logits,), fn, "softmax")


def log_softmax(logits: Tensor) -> Tensor:
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def fn(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return make_result(out, (logits,), fn, "log_softmax")


def pick(x: Tensor, index) -> Tensor:
    """``x[i, index[i]]`` for a 2-D ``x``; returns shape ``[N]``."""
    index = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or index.shape != (x.shape[0],):
        raise ShapeError(f"pick: index shape {index.shape} does not fit {x.shape}")
    if index.size and (index.min() < 0 or index.max() >= x.shape[1]):
        raise LabelError(f"pick: index out of range [0, {x.shape[1]})")
    rows = np.arange(x.shape[0])

    def fn(g):
        full = np.zeros_like(x.data)
        full[rows, index] = g
        return (full,)

    return make_result(x.data[rows, index], (x,), fn, "pick")


def _batched(x: Tensor) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise ShapeError(f"expected [C, T, V] or [B, C, T, V], got {x.shape}")


def temporal_conv1d(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """Zero-padded 'same' convolution along the frame axis, per node.

    ``w`` is ``[C_out, C_in, K]`` with odd ``K``; the output has
    ``ceil(T / stride)`` frames.
    """
    if w.ndim != 3:
        raise ShapeError(f"temporal_conv1d: weight must be [C_out, C_in, K], got {w.shape}")
    c_out, c_in, k = w.shape
    if k % 2 == 0:
        raise ConfigError(f"temporal kernel must be odd, got {k}")
    if stride not in (1, 2):
        raise ConfigError(f"temporal stride must be 1 or 2, got {stride}")
    xb, squeeze = _batched(x)
    b, c, t, v = xb.shape
    if c != c_in:
        raise ShapeError(f"temporal_conv1d: input has {c} channels, weight expects {c_in}")
    pad = (k - 1) // 2
    t_out = -(-t // stride)
    span = stride * (t_out - 1) + 1
    # channel-major padded copy [C, B, T + 2 pad, V] so im2col is one 2-D matmul
    xp = np.zeros((c, b, t + 2 * pad, v), dtype=xb.dtype)
    xp[:, :, pad:pad + t, :] = xb.transpose(1, 0, 2, 3)
    cols = np.stack([xp[:, :, j:j + span:stride, :] for j in range(k)])  # [K, C, B, T_out, V]
    cols = cols.reshape(k * c, b * t_out * v)
    wmat = np.ascontiguousarray(w.data.transpose(0, 2, 1).reshape(c_out, k * c))
    out = (wmat @ cols).reshape(c_out, b, t_out, v).transpose(1, 0, 2, 3)
    out = np.ascontiguousarray(out)

    def fn(g):
        gb = g[None] if squeeze else g
        g2 = np.ascontiguousarray(gb.transpose(1, 0, 2, 3)).reshape(c_out, b * t_out * v)
        dw = (g2 @ cols.T).reshape(c_out, k, c).transpose(0, 2, 1)
        dcols = (wmat.T @ g2).reshape(k, c, b, t_out, v)
        dxp = np.zeros_like(xp)
        for j in range(k):
            dxp[:, :, j:j + span:stride, :] += dcols[j]
        dx = np.ascontiguousarray(dxp[:, :, pad:pad + t, :].transpose(1, 0, 2, 3))
        return (dx[0] if squeeze else dx, dw)

    return make_result(out[0] if squeeze else out, (x, w), fn, "temporal_conv1d")


def graph_conv(x: Tensor, w: Tensor, adjacency: np.ndarray) -> Tensor:
    """Per-frame spatial graph convolution ``X' = W^T X A``.

    ``x`` is ``[B, C_in, T, V]``, ``w`` is ``[C_in, C_out]`` and ``adjacency``
    is a constant ``[V, V]`` array (symmetric in practice).
    """
    xb, squeeze = _batched(x)
    b, c, t, v = xb.shape
    if w.ndim != 2 or w.shape[0] != c:
        raise ShapeError(f"graph_conv: weight {w.shape} does not fit {c} input channels")
    a = np.asarray(adjacency, dtype=xb.dtype)
    if a.shape != (v, v):
        raise ShapeError(f"graph_conv: adjacency {a.shape} does not fit {v} nodes")
    c_out = w.shape[1]
    xa = (xb.reshape(-1, v) @ a).reshape(b, c, t * v)
    wt = np.ascontiguousarray(w.data.T)
    out = np.matmul(wt, xa).reshape(b, c_out, t, v)

    def fn(g):
        gb = (g[None] if squeeze else g).reshape(b, c_out, t * v)
        dw = np.matmul(xa, gb.transpose(0, 2, 1)).sum(axis=0)
        dxa = np.matmul(w.data, gb)
        dx = (dxa.reshape(-1, v) @ a.T).reshape(b, c, t, v)
        return (dx[0] if squeeze else dx, dw)

    return make_result(out[0] if squeeze else out, (x, w), fn, "graph_conv")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Channel-wise normalization over every axis except axis 1.

    In training mode batch statistics are used and the running buffers are
    updated in place (unbiased variance); otherwise the buffers are used.
    """
    if x.ndim < 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batch_norm: parameters {gamma.shape} do not fit {x.shape}")
    b, c = x.shape[0], x.shape[1]
    n = x.size // c
    x3 = x.data.reshape(b, c, -1)
    if training:
        mu = np.einsum("bcn->c", x3) / n
        xc = x3 - mu[None, :, None]
        var = np.einsum("bcn,bcn->c", xc, xc) / n
        if n > 1:
            running_mean *= 1 - momentum
            running_mean += momentum * mu
            running_var *= 1 - momentum
            running_var += momentum * var * n / (n - 1)
    else:
        mu, var = running_mean, running_var
        xc = x3 - mu[None, :, None]
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = xc * inv[None, :, None]
    out = (xhat * gamma.data[None, :, None] + beta.data[None, :, None]).reshape(x.shape)

    def fn(g):
        g3 = g.reshape(b, c, -1)
        dgamma = np.einsum("bcn,bcn->c", g3, xhat)
        dbeta = np.einsum("bcn->c", g3)
        scale = (gamma.data * inv)[None, :, None]
        if training:
            dx = (scale / n) * (n * g3 - dbeta[None, :, None] - xhat * dgamma[None, :, None])
        else:
            dx = g3 * scale
        return (dx.reshape(x.shape), dgamma, dbeta)

    return make_result(out.astype(x.dtype, copy=False), (x, gamma, beta), fn, "batch_norm")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity outside training or at rate 0."""
    if not training or rate <= 0.0:
        return x
    if rate >= 1.0:
        raise ConfigError("dropout rate must be below 1")
    if rng is None:
        raise ConfigError("dropout in training mode needs a random generator")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return make_result(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def gru_scan(gx: Tensor, w_hh: Tensor) -> Tensor:
    """Run GRU recurrences from a zero state given precomputed input gates.

    ``gx`` is ``[N, T, 3H]`` holding ``x W + b`` with gate columns
    ``[z | r | candidate]``; ``w_hh`` is ``[H, 3H]``. Returns all hidden
    states ``[N, T, H]``. Same math as stepping the composed cell, but the
    whole sequence is one tape entry with a hand-written backward.
    """
    if gx.ndim != 3 or w_hh.ndim != 2 or w_hh.shape[1] != 3 * w_hh.shape[0] or gx.shape[2] != w_hh.shape[1]:
        raise ShapeError(f"gru_scan: gates {gx.shape} do not fit recurrent weight {w_hh.shape}")
    n, t, _ = gx.shape
    hid = w_hh.shape[0]
    u_zr = np.ascontiguousarray(w_hh.data[:, :2 * hid])
    u_h = np.ascontiguousarray(w_hh.data[:, 2 * hid:])
    dtype = gx.dtype
    h = np.zeros((n, hid), dtype=dtype)
    hs, zs, rs, cs = [], [], [], []
    for step in range(t):
        g = gx.data[:, step]
        zr = _expit(g[:, :2 * hid] + h @ u_zr)
        z, r = zr[:, :hid], zr[:, hid:]
        c = np.tanh(g[:, 2 * hid:] + (r * h) @ u_h)
        hs.append(h)
        zs.append(z)
        rs.append(r)
        cs.append(c)
        h = h + z * (c - h)
    states = np.stack(hs[1:] + [h], axis=1)

    def fn(gout):
        dgx = np.empty_like(gx.data)
        du_zr = np.zeros_like(u_zr)
        du_h = np.zeros_like(u_h)
        dh = np.zeros((n, hid), dtype=dtype)
        for step in range(t - 1, -1, -1):
            dh = dh + gout[:, step]
            h_prev, z, r, c = hs[step], zs[step], rs[step], cs[step]
            dpc = dh * z * (1 - c * c)
            dpz = dh * (c - h_prev) * z * (1 - z)
            a = r * h_prev
            da = dpc @ u_h.T
            dpr = da * h_prev * r * (1 - r)
            dzr = np.concatenate([dpz, dpr], axis=1)
            dgx[:, step, :2 * hid] = dzr
            dgx[:, step, 2 * hid:] = dpc
            du_h += a.T @ dpc
            du_zr += h_prev.T @ dzr
            dh = dh * (1 - z) + da * r + dzr @ u_zr.T
        return (dgx, np.concatenate([du_zr, du_h], axis=1))

    return make_result(states, (gx, w_hh), fn, "gru_scan")

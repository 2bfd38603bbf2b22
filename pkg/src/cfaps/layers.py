"""Neural building blocks on the autodiff engine.

The GRU, linear, and layer-norm layers run as fused ops with
hand-written backward passes: elementwise memory traffic, not GEMM
throughput, dominates on the target hardware, so gate math is fused
into single-pass numba kernels. Gradient correctness of every fused op
is pinned by finite-difference tests.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

from .autodiff import Tensor, custom_op
from .autodiff import tensor as T


def orthogonal(rng: np.random.Generator, shape, gain: float = 1.0) -> np.ndarray:
    """Orthogonal init; rows or columns orthonormal depending on shape."""
    rows, cols = shape
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


@njit(cache=True, parallel=True)
def _gru_pre_kernel(pre, uh, zr_arg, un, pre_n):
    """zr_arg = 0.5 (pre + uh) for the z and r gate columns; keep the
    hidden contribution and input preactivation of the candidate gate."""
    bsz, hidden = un.shape
    for i in prange(bsz):
        for j in range(hidden):
            zr_arg[0, i, j] = 0.5 * (pre[i, j] + uh[i, j])
            zr_arg[1, i, j] = 0.5 * (pre[i, hidden + j] + uh[i, hidden + j])
            un[i, j] = uh[i, 2 * hidden + j]
            pre_n[i, j] = pre[i, 2 * hidden + j]


@njit(cache=True, parallel=True)
def _gru_gate_kernel(zr_tanh, un, pre_n, z, r, narg):
    """Finish the sigmoid affine and build the candidate preactivation."""
    bsz, hidden = un.shape
    for i in prange(bsz):
        for j in range(hidden):
            zz = 0.5 + 0.5 * zr_tanh[0, i, j]
            rr = 0.5 + 0.5 * zr_tanh[1, i, j]
            z[i, j] = zz
            r[i, j] = rr
            narg[i, j] = pre_n[i, j] + rr * un[i, j]


@njit(cache=True, parallel=True)
def _gru_mix_kernel(z, n, h_prev, h_out):
    """h' = (1 - z) n + z h, one pass."""
    bsz, hidden = h_prev.shape
    for i in prange(bsz):
        for j in range(hidden):
            zz = z[i, j]
            h_out[i, j] = (1.0 - zz) * n[i, j] + zz * h_prev[i, j]


@njit(cache=True, parallel=True)
def _gru_bwd_kernel(gh, h_prev, z, r, n, un, da, duh, gh_direct):
    bsz, hidden = h_prev.shape
    for i in prange(bsz):
        for j in range(hidden):
            g = gh[i, j]
            zz = z[i, j]
            rr = r[i, j]
            nn = n[i, j]
            dz = g * (h_prev[i, j] - nn) * zz * (1.0 - zz)
            dn = g * (1.0 - zz) * (1.0 - nn * nn)
            dr = dn * un[i, j] * rr * (1.0 - rr)
            da[i, j] = dz
            da[i, hidden + j] = dr
            da[i, 2 * hidden + j] = dn
            duh[i, j] = dz
            duh[i, hidden + j] = dr
            duh[i, 2 * hidden + j] = dn * rr
            gh_direct[i, j] = g * zz


# Scratch buffers reused across gru_sequence calls, keyed by problem
# size. Safe because every recorded forward completes its backward before
# the next forward of the same size begins (the training loops are
# strictly forward-then-backward); freshly allocated pages would
# otherwise dominate runtime on the step loop.
_GRU_POOL: dict[tuple, dict] = {}


def _gru_scratch(bsz: int, steps: int, hidden: int) -> dict:
    key = (bsz, steps, hidden)
    pool = _GRU_POOL.get(key)
    if pool is None:
        pool = {
            "pre_all": np.empty((steps, bsz, 3 * hidden)),
            "uh": np.empty((bsz, 3 * hidden)),
            "zr_arg": np.empty((2, bsz, hidden)),
            "pre_n": np.empty((bsz, hidden)),
            "saved": np.empty((steps, 5, bsz, hidden)),
            "da": np.empty((bsz, 3 * hidden)),
            "duh": np.empty((bsz, 3 * hidden)),
            "gh_a": np.empty((bsz, hidden)),
            "gh_b": np.empty((bsz, hidden)),
        }
        if len(_GRU_POOL) > 8:
            _GRU_POOL.clear()
        _GRU_POOL[key] = pool
    return pool


def gru_sequence(history: np.ndarray, w: Tensor, u: Tensor, b: Tensor) -> Tensor:
    """Run a GRU over the last axis of `history` ([B, H] scalar inputs).

    Gate layout along the fused weight columns is (z, r, n):
        z = sigmoid(x W_z + b_z + h U_z)
        r = sigmoid(x W_r + b_r + h U_r)
        n = tanh(x W_n + b_n + r * (h U_n))
        h' = (1 - z) * n + z * h
    Returns the final hidden state [B, hidden]. The input sequence is
    treated as constant (no gradient to the history).
    """
    hidden = u.data.shape[0]
    if w.data.shape[0] != 1 or w.data.shape[1] != 3 * hidden or u.data.shape[1] != 3 * hidden:
        raise T.AutodiffError(
            f"gru_sequence: weight shapes {w.data.shape}, {u.data.shape} disagree")
    bsz, steps = history.shape
    wd = np.ascontiguousarray(w.data[0])
    ud = u.data
    bd = np.ascontiguousarray(b.data.reshape(-1))
    hist = np.ascontiguousarray(history)
    scratch = _gru_scratch(bsz, steps, hidden)

    # input contributions, step-major so each step's block is contiguous
    pre_all = scratch["pre_all"]
    np.multiply(hist.T[:, :, None], wd[None, None, :], out=pre_all)
    pre_all += bd

    h = np.zeros((bsz, hidden))
    uh = scratch["uh"]
    zr_arg = scratch["zr_arg"]
    pre_n = scratch["pre_n"]
    saved = scratch["saved"]
    for t in range(steps):
        np.matmul(h, ud, out=uh)
        step_buf = saved[t]
        z, r, n, un, h_out = step_buf[0], step_buf[1], step_buf[2], step_buf[3], step_buf[4]
        _gru_pre_kernel(pre_all[t], uh, zr_arg, un, pre_n)
        np.tanh(zr_arg, out=zr_arg)
        _gru_gate_kernel(zr_arg, un, pre_n, z, r, n)
        np.tanh(n, out=n)
        _gru_mix_kernel(z, n, h, h_out)
        h = h_out
    h_final = h.copy()  # detach the result from the reused pool

    def back(g):
        dw = np.zeros_like(wd)
        du = np.zeros_like(ud)
        db = np.zeros_like(bd)
        gh = scratch["gh_a"]
        np.copyto(gh, g)
        gh_direct = scratch["gh_b"]
        da = scratch["da"]
        duh = scratch["duh"]
        ut = np.ascontiguousarray(ud.T)
        for t in range(steps - 1, -1, -1):
            h_prev = saved[t - 1][4] if t > 0 else np.zeros((bsz, hidden))
            z, r, n, un = saved[t][0], saved[t][1], saved[t][2], saved[t][3]
            _gru_bwd_kernel(gh, h_prev, z, r, n, un, da, duh, gh_direct)
            dw += hist[:, t] @ da
            db += da.sum(axis=0)
            du += h_prev.T @ duh
            np.matmul(duh, ut, out=gh)
            gh += gh_direct
        return None, dw.reshape(w.data.shape), du, db.reshape(b.data.shape)

    return custom_op("gru_sequence", h_final, [Tensor(hist), w, u, b],
                     lambda g: back(g))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Fused x @ w + b; the bias broadcast never materializes."""
    if b is None:
        return T.matmul(x, w)
    if x.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise T.AutodiffError(f"linear: incompatible shapes {x.data.shape}, {w.data.shape}")
    out = x.data @ w.data
    out += b.data.reshape(1, -1)
    xd, wd = x.data, w.data

    def back(g):
        gx = g @ wd.T if x._needs_grad else None
        gw = xd.T @ g
        gb = g.sum(axis=0).reshape(b.data.shape)
        return gx, gw, gb

    return custom_op("linear", out, [x, w, b], back)


@njit(cache=True, parallel=True)
def _ln_fwd_kernel(x, gain, bias, ynorm, out, inv):
    bsz, dim = x.shape
    for i in prange(bsz):
        s = 0.0
        for j in range(dim):
            s += x[i, j]
        m = s / dim
        v = 0.0
        for j in range(dim):
            d = x[i, j] - m
            v += d * d
        iv = 1.0 / math.sqrt(v / dim + 1e-5)
        inv[i] = iv
        for j in range(dim):
            y = (x[i, j] - m) * iv
            ynorm[i, j] = y
            out[i, j] = y * gain[j] + bias[j]


@njit(cache=True, parallel=True)
def _ln_bwd_dx_kernel(g, gain, ynorm, inv, dx):
    bsz, dim = ynorm.shape
    for i in prange(bsz):
        gm = 0.0
        gy = 0.0
        for j in range(dim):
            gg = g[i, j] * gain[j]
            gm += gg
            gy += gg * ynorm[i, j]
        gm /= dim
        gy /= dim
        iv = inv[i]
        for j in range(dim):
            dx[i, j] = (g[i, j] * gain[j] - gm - ynorm[i, j] * gy) * iv


def affine_layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Layer norm over the last dim with learnable gain/bias, fused."""
    xd = np.ascontiguousarray(x.data)
    bsz, dim = xd.shape
    gd = np.ascontiguousarray(gain.data.reshape(-1))
    bd = np.ascontiguousarray(bias.data.reshape(-1))
    out = np.empty_like(xd)
    ynorm = np.empty_like(xd)
    inv = np.empty(bsz)
    _ln_fwd_kernel(xd, gd, bd, ynorm, out, inv)

    def back(g):
        g = np.ascontiguousarray(g)
        dx = np.empty_like(xd)
        _ln_bwd_dx_kernel(g, gd, ynorm, inv, dx)
        dgain = np.einsum("ij,ij->j", g, ynorm)
        dbias = g.sum(axis=0)
        return dx, dgain.reshape(gain.data.shape), dbias.reshape(bias.data.shape)

    return custom_op("affine_layer_norm", out, [x, gain, bias], back)


def grouped_attention(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor,
                      perm: np.ndarray | None, inv_perm: np.ndarray | None,
                      groups: int, size: int, include_self: bool) -> Tensor:
    """Single-head scaled dot-product attention within disjoint groups.

    `x` is [N, E] node features whose rows, after applying `perm`, are
    contiguous groups of `size` rows. With include_self=False the
    diagonal is masked out, which requires size >= 2.
    """
    n, e = x.data.shape
    if not include_self and size < 2:
        raise T.AutodiffError("attention neighborhood is empty without self edges")
    xg = T.gather_rows(x, perm) if perm is not None else x
    q = T.reshape(T.matmul(xg, wq), (groups, size, e))
    k = T.reshape(T.matmul(xg, wk), (groups, size, e))
    v = T.reshape(T.matmul(xg, wv), (groups, size, e))
    scores = T.scale(T.matmul(q, _transpose_last(k)), 1.0 / np.sqrt(e))
    if not include_self:
        mask = np.zeros((1, size, size))
        np.fill_diagonal(mask[0], -1e30)
        scores = T.add(scores, T.broadcast_to(Tensor(mask), scores.data.shape))
    weights = T.softmax_lastdim(scores)
    msg = T.reshape(T.matmul(weights, v), (n, e))
    if inv_perm is not None:
        msg = T.gather_rows(msg, inv_perm)
    return msg


def _transpose_last(x: Tensor) -> Tensor:
    """Swap the last two axes of a 3D tensor."""
    data = np.ascontiguousarray(x.data.swapaxes(-1, -2))
    return custom_op("transpose_last", data, [x],
                     lambda g: (np.ascontiguousarray(g.swapaxes(-1, -2)),))

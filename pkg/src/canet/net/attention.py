"""Axial self-attention and the axial attention catching (AAC) block.

An axial attention pass treats every 1D line of voxels along one spatial
axis as an independent token sequence. The AAC block runs three such passes
(height, width, depth), concatenates them on the channel axis, merges back
with a 1x1x1 convolution and adds the block input.
"""
from __future__ import annotations

import numpy as np

from .ops import conv3d, conv3d_backward

AXES = {"depth": 2, "height": 3, "width": 4}
# branch order inside the block: vertical, horizontal, depth
BRANCHES = ("height", "width", "depth")


def _to_lines(x, axis):
    """(B, C, D, H, W) -> (..., L, C) with the attended axis second to last."""
    return np.ascontiguousarray(np.moveaxis(x, (axis, 1), (-2, -1)))


def _from_lines(t, axis):
    return np.moveaxis(t, (-2, -1), (axis, 1))


def _split_heads(t, heads):
    if heads == 1:
        return t[..., None, :, :]
    *lead, L, C = t.shape
    return np.ascontiguousarray(t.reshape(*lead, L, heads, C // heads).swapaxes(-2, -3))


def _merge_heads(t):
    *lead, h, L, dh = t.shape
    if h == 1:
        return t[..., 0, :, :]
    return t.swapaxes(-2, -3).reshape(*lead, L, h * dh)


def _softmax_last(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def axial_attention(x, axis, wq, wk, wv, pos, heads=1):
    """Multi-head self-attention along ``axis`` ('depth'|'height'|'width').

    ``wq/wk/wv`` are (C, C) maps applied as ``token @ w.T``; ``pos`` is a
    (L_cap, C) additive positional table. Returns (output, cache).
    """
    ax = AXES[axis] if isinstance(axis, str) else int(axis)
    C, L = x.shape[1], x.shape[ax]
    if C % heads:
        raise ValueError(f"channels {C} not divisible by {heads} heads")
    if L > pos.shape[0]:
        raise ValueError(f"axis length {L} exceeds positional embedding capacity {pos.shape[0]}")
    shape = [1] * 5
    shape[1], shape[ax] = C, L
    xe = x + pos[:L].T.reshape(shape)
    tok = _to_lines(xe, ax)
    q = _split_heads(tok @ wq.T, heads)
    k = _split_heads(tok @ wk.T, heads)
    v = _split_heads(tok @ wv.T, heads)
    inv_sqrt = float(1.0 / np.sqrt(C // heads))
    attn = _softmax_last((q @ k.swapaxes(-1, -2)) * inv_sqrt)
    out = _from_lines(_merge_heads(attn @ v), ax)
    return np.ascontiguousarray(out), (ax, tok, q, k, v, attn, inv_sqrt, heads, wq, wk, wv, L)


def axial_attention_backward(g, cache):
    """Returns (grad_x, grad_wq, grad_wk, grad_wv, grad_pos_rows) where the
    positional gradient covers only the first L rows of the table."""
    ax, tok, q, k, v, attn, inv_sqrt, heads, wq, wk, wv, L = cache
    go = _split_heads(_to_lines(g, ax), heads)
    gattn = go @ v.swapaxes(-1, -2)
    gv = attn.swapaxes(-1, -2) @ go
    gs = attn * (gattn - (gattn * attn).sum(axis=-1, keepdims=True)) * inv_sqrt
    gq = gs @ k
    gk = gs.swapaxes(-1, -2) @ q
    gq, gk, gv = _merge_heads(gq), _merge_heads(gk), _merge_heads(gv)
    C = tok.shape[-1]
    flat_tok = tok.reshape(-1, C)
    gwq = gq.reshape(-1, C).T @ flat_tok
    gwk = gk.reshape(-1, C).T @ flat_tok
    gwv = gv.reshape(-1, C).T @ flat_tok
    gtok = gq @ wq + gk @ wk + gv @ wv
    gpos = gtok.reshape(-1, L, C).sum(axis=0)
    gx = np.ascontiguousarray(_from_lines(gtok, ax))
    return gx, gwq, gwk, gwv, gpos


def aac_forward(x, params, heads=1, sequential=False):
    """AAC block. ``params`` maps '<branch>.q|k|v|pos' and 'merge.w|b'.

    Parallel mode feeds the same input to all three branches. Sequential
    mode chains them (height -> width -> depth) and still concatenates the
    three intermediate outputs. Returns (output, cache).
    """
    C = x.shape[1]
    if params["merge.w"].shape[:2] != (C, 3 * C):
        raise ValueError(f"AAC block expects {params['merge.w'].shape[0]} channels, got {C}")
    outs, caches = [], []
    h = x
    for name in BRANCHES:
        src = h if sequential else x
        o, c = axial_attention(src, name, params[f"{name}.q"], params[f"{name}.k"],
                               params[f"{name}.v"], params[f"{name}.pos"], heads)
        outs.append(o)
        caches.append(c)
        h = o
    cat = np.concatenate(outs, axis=1)
    merged = conv3d(cat, params["merge.w"], params["merge.b"], padding=0)
    return x + merged, (cat, caches, sequential, params)


def aac_backward(g, cache):
    """Returns (grad_x, {param name: grad})."""
    cat, caches, sequential, params = cache
    C = g.shape[1]
    gcat, gw, gb = conv3d_backward(g, cat, params["merge.w"], padding=0, with_bias=True)
    grads = {"merge.w": gw, "merge.b": gb}
    gx = g.copy()
    carry = None
    for i in reversed(range(3)):
        name = BRANCHES[i]
        go = gcat[:, i * C:(i + 1) * C]
        if carry is not None:
            go = go + carry
        gin, gq, gk, gv, gpos = axial_attention_backward(go, caches[i])
        grads[f"{name}.q"], grads[f"{name}.k"], grads[f"{name}.v"] = gq, gk, gv
        full = np.zeros_like(params[f"{name}.pos"])
        full[:gpos.shape[0]] = gpos
        grads[f"{name}.pos"] = full
        if sequential and i > 0:
            carry = gin
        else:
            gx += gin
    return gx, grads


def attention_flops(dims, channels=1, mode="axial"):
    """Multiply-accumulate count of one AAC block on a (D, H, W) grid.

    With N = D*H*W tokens and C channels:

    * projections (both modes): 3 branches x 3 maps x N*C^2, plus the
      3C -> C merge, N*3C*C. Total 12*N*C^2.
    * axial: each branch along an axis of length L scores N*L*C (Q.K) and
      mixes N*L*C (A.V): 2*N*(D + H + W)*C over the three branches.
    * full: each branch attends over all N tokens: 3 * 2*N^2*C.

    Returns a dict with ``projection``, ``score`` (Q.K terms), ``mix``
    (A.V terms), ``per_axis_score`` (per-axis Q.K totals, axial mode) and
    ``total``.
    """
    D, H, W = (int(n) for n in dims)
    if min(D, H, W) < 1 or channels < 1:
        raise ValueError("dims and channels must be positive")
    C = int(channels)
    N = D * H * W
    projection = 12 * N * C * C
    if mode == "axial":
        per_axis = {"depth": N * D * C, "height": N * H * C, "width": N * W * C}
        score = sum(per_axis.values())
    elif mode == "full":
        per_axis = {}
        score = 3 * N * N * C
    else:
        raise ValueError(f"mode must be 'axial' or 'full', got {mode!r}")
    return {"projection": projection, "score": score, "mix": score,
            "per_axis_score": per_axis, "total": projection + 2 * score}


def full_attention_branch(x, wq, wk, wv, heads=1):
    """Dense self-attention over all voxels; benchmark counterpart of one branch."""
    B, C = x.shape[:2]
    tok = x.reshape(B, C, -1).swapaxes(1, 2)
    q = _split_heads(tok @ wq.T, heads)
    k = _split_heads(tok @ wk.T, heads)
    v = _split_heads(tok @ wv.T, heads)
    attn = _softmax_last((q @ k.swapaxes(-1, -2)) / np.sqrt(C // heads))
    return _merge_heads(attn @ v).swapaxes(1, 2).reshape(x.shape)

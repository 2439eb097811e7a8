"""Convolution and normalization kernels with hand-written backward passes.

Tensors are (B, C, D, H, W). Convolution weights are (C_out, C_in, k, k, k).
Every function keeps the dtype of its inputs, so float64 copies of a network
evaluate in double precision for gradient checks.
"""
from __future__ import annotations

import itertools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LEAKY_SLOPE = 0.01


def _check5(x, name="input"):
    if x.ndim != 5:
        raise ValueError(f"{name} must be 5D (B, C, D, H, W), got shape {x.shape}")


def conv_output_dims(spatial, k, stride, padding):
    return tuple((n + 2 * padding - k) // stride + 1 for n in spatial)


def _check_weights(x, w):
    if w.ndim != 5 or w.shape[2:] != (w.shape[2],) * 3:
        raise ValueError(f"weights must be (C_out, C_in, k, k, k), got {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, weights expect {w.shape[1]}")


def _im2col(x, k, stride, padding):
    """(B, C, D, H, W) -> ((B*N, C*k^3) patch matrix, output dims).

    Columns are ordered (a, b, c, channel) to match ``_wmat(w)``; keeping
    channels innermost makes the copy out of the window view much cheaper.
    """
    out_dims = conv_output_dims(x.shape[2:], k, stride, padding)
    if min(out_dims) < 1:
        raise ValueError(f"input {x.shape[2:]} too small for kernel {k}, stride {stride}")
    p = padding
    xl = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p))) if p else x
    xl = np.ascontiguousarray(xl.transpose(0, 2, 3, 4, 1))
    if k == 1:
        win = xl[:, ::stride, ::stride, ::stride, :]
        return win.reshape(-1, x.shape[1]), out_dims
    win = sliding_window_view(xl, (k, k, k), axis=(1, 2, 3))
    win = win[:, ::stride, ::stride, ::stride][:, :out_dims[0], :out_dims[1], :out_dims[2]]
    return win.transpose(0, 1, 2, 3, 5, 6, 7, 4).reshape(-1, x.shape[1] * k ** 3), out_dims


def _wmat(w):
    """(C_out, C_in, k, k, k) -> (C_out, k^3 * C_in) in im2col column order."""
    return w.transpose(0, 2, 3, 4, 1).reshape(w.shape[0], -1)


def _wmat_inverse(m, c_in, k):
    return np.ascontiguousarray(m.reshape(m.shape[0], k, k, k, c_in).transpose(0, 4, 1, 2, 3))


def _to_channels_first(m, batch, dims):
    return np.ascontiguousarray(m.reshape((batch,) + tuple(dims) + (-1,)).transpose(0, 4, 1, 2, 3))


def _to_rows(g):
    """(B, C, D, H, W) -> (B*D*H*W, C)."""
    return np.ascontiguousarray(g.transpose(0, 2, 3, 4, 1)).reshape(-1, g.shape[1])


def conv3d(x, w, b=None, stride=1, padding=None, return_cols=False):
    """Cross-correlation. ``padding`` defaults to k // 2 ('same' at stride 1).

    With ``return_cols`` the patch matrix is returned as well so a later
    ``conv3d_backward`` can skip rebuilding it.
    """
    _check5(x)
    _check_weights(x, w)
    k = w.shape[2]
    padding = k // 2 if padding is None else padding
    cols, out_dims = _im2col(x, k, stride, padding)
    out = cols @ _wmat(w).T
    if b is not None:
        out += b
    out = _to_channels_first(out, x.shape[0], out_dims)
    return (out, cols) if return_cols else out


def _col2im(gcols, in_shape, k, stride, padding, out_dims):
    B, C = in_shape[:2]
    dt = gcols.dtype
    if k == stride and padding == 0:
        # non-overlapping windows: a pure reshuffle
        d, h, w = out_dims
        t = gcols.reshape(B, d, h, w, k, k, k, C).transpose(0, 7, 1, 4, 2, 5, 3, 6)
        full = t.reshape(B, C, d * k, h * k, w * k)
        gx = np.zeros(in_shape, dtype=dt)
        gx[:, :, :d * k, :h * k, :w * k] = full
        return gx
    padded = tuple(n + 2 * padding for n in in_shape[2:])
    gxp = np.zeros((B,) + padded + (C,), dtype=dt)
    t = gcols.reshape((B,) + tuple(out_dims) + (k, k, k, C))
    d, h, w = out_dims
    for a, bb, c in itertools.product(range(k), repeat=3):
        gxp[:, a:a + stride * (d - 1) + 1:stride,
            bb:bb + stride * (h - 1) + 1:stride,
            c:c + stride * (w - 1) + 1:stride, :] += t[:, :, :, :, a, bb, c]
    p = padding
    if p:
        gxp = gxp[:, p:-p, p:-p, p:-p]
    return np.ascontiguousarray(gxp.transpose(0, 4, 1, 2, 3))


def conv3d_grad_input(g, w, in_shape, stride=1, padding=None):
    """Adjoint of ``conv3d`` with respect to its input."""
    k = w.shape[2]
    padding = k // 2 if padding is None else padding
    if stride == 1 and padding <= k - 1:
        # stride-1 adjoint is a 'full' correlation with the flipped, transposed kernel
        wf = np.ascontiguousarray(w[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4))
        gx = conv3d(g, wf, stride=1, padding=k - 1 - padding)
        if gx.shape != tuple(in_shape):
            raise ValueError(f"adjoint shape {gx.shape} does not match input {tuple(in_shape)}")
        return gx
    gcols = _to_rows(g) @ _wmat(w)
    return _col2im(gcols, tuple(in_shape), k, stride, padding, g.shape[2:])


def conv3d_grad_weight(g, x, k, stride=1, padding=None, cols=None):
    padding = k // 2 if padding is None else padding
    if cols is None:
        cols, _ = _im2col(x, k, stride, padding)
    return _wmat_inverse(_to_rows(g).T @ cols, x.shape[1], k)


def conv3d_backward(g, x, w, stride=1, padding=None, with_bias=False, cols=None, need_input=True):
    """Returns (grad_x, grad_w[, grad_b]); grad_x is None when not needed."""
    gx = conv3d_grad_input(g, w, x.shape, stride, padding) if need_input else None
    gw = conv3d_grad_weight(g, x, w.shape[2], stride, padding, cols)
    if with_bias:
        return gx, gw, g.sum(axis=(0, 2, 3, 4))
    return gx, gw


def _transposed_padding(k):
    # k=2 -> 0, k=3 -> 1: the paired stride-2 conv maps 2n -> n in both cases
    return (k - 1) // 2


def transposed_conv3d(x, w, stride=2):
    """Stride-2 transposed convolution; spatial dims double.

    ``w`` has shape (C_in, C_out, k, k, k): the weights of the stride-2
    convolution (C_out -> C_in) whose adjoint this is.
    """
    _check5(x)
    if w.ndim != 5 or x.shape[1] != w.shape[0]:
        raise ValueError(f"channel mismatch: input {x.shape}, weights {w.shape}")
    k = w.shape[2]
    out_shape = (x.shape[0], w.shape[1]) + tuple(stride * n for n in x.shape[2:])
    return conv3d_grad_input(x, w, out_shape, stride, _transposed_padding(k))


def transposed_conv3d_backward(g, x, w, stride=2):
    """Returns (grad_x, grad_w)."""
    k = w.shape[2]
    p = _transposed_padding(k)
    gx = conv3d(g, w, stride=stride, padding=p)
    gw = conv3d_grad_weight(x, g, k, stride, p)
    return gx, gw


def instance_norm_act(x, scale, shift, eps=1e-5, negative_slope=LEAKY_SLOPE):
    """Per-(sample, channel) spatial standardization, affine, leaky ReLU.

    Returns (output, cache).
    """
    _check5(x)
    axes = (2, 3, 4)
    mean = x.mean(axis=axes, keepdims=True)
    xc = x - mean
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axes, keepdims=True) + eps)
    xhat = xc * inv
    y = xhat * scale.reshape(1, -1, 1, 1, 1) + shift.reshape(1, -1, 1, 1, 1)
    pos = y > 0
    out = np.where(pos, y, negative_slope * y)
    return out, (xhat, inv, pos, scale, negative_slope)


def instance_norm_act_backward(g, cache):
    """Returns (grad_x, grad_scale, grad_shift)."""
    xhat, inv, pos, scale, slope = cache
    gy = np.where(pos, g, slope * g)
    gscale = (gy * xhat).sum(axis=(0, 2, 3, 4))
    gshift = gy.sum(axis=(0, 2, 3, 4))
    gxhat = gy * scale.reshape(1, -1, 1, 1, 1)
    axes = (2, 3, 4)
    gx = inv * (gxhat - gxhat.mean(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
    return gx, gscale, gshift

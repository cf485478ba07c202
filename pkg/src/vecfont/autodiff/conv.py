"""2-D convolution and its transpose (NCHW layout, square kernels)."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, _accum, _result, as_tensor


def _windows(xp: np.ndarray, k: int, s: int, ho: int, wo: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> (N, Ho, Wo, C, k, k) patches."""
    n, c = xp.shape[:2]
    out = np.empty((n, c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i, j] = xp[:, :, i:i + s * ho:s, j:j + s * wo:s]
    return out.transpose(0, 4, 5, 1, 2, 3)


def _scatter_windows(cols: np.ndarray, hp: int, wp: int, s: int) -> np.ndarray:
    """Adjoint of :func:`_windows`: (N, Ho, Wo, C, k, k) -> (N, C, Hp, Wp)."""
    n, ho, wo, c, k, _ = cols.shape
    cols = cols.transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + s * ho:s, j:j + s * wo:s] += cols[:, :, i, j]
    return out


def _check(op, x, w, w_in_axis):
    if x.ndim != 4 or w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"{op}: expected NCHW input and square 4-D kernel, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[w_in_axis]:
        raise ShapeError(f"{op}: channel mismatch between input {x.shape} and kernel {w.shape}")


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """``x`` (N, C, H, W), ``w`` (O, C, k, k), ``b`` (O,) -> (N, O, Ho, Wo)."""
    x, w = as_tensor(x), as_tensor(w)
    _check("conv2d", x, w, 1)
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    s, p = stride, padding
    ho = (h + 2 * p - k) // s + 1
    wo = (wd + 2 * p - k) // s + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: kernel {k} too large for input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    cols = _windows(xp, k, s, ho, wo).reshape(n * ho * wo, c * k * k)
    wmat = w.data.reshape(o, c * k * k)
    out = (cols @ wmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def backward(g):
        gf = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        if w.requires_grad:
            _accum(w, (gf.T @ cols).reshape(w.shape))
        if x.requires_grad:
            dcols = (gf @ wmat).reshape(n, ho, wo, c, k, k)
            dxp = _scatter_windows(dcols, xp.shape[2], xp.shape[3], s)
            _accum(x, dxp[:, :, p:p + h, p:p + wd] if p else dxp)

    y = _result(np.ascontiguousarray(out), (x, w), backward)
    if b is not None:
        y = y + as_tensor(b).reshape(1, o, 1, 1)
    return y


def transposed_conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """``x`` (N, Cin, H, W), ``w`` (Cin, Cout, k, k) -> (N, Cout, Ho, Wo).

    ``Ho = (H - 1) * stride - 2 * padding + k``; the adjoint of :func:`conv2d`
    with the same kernel geometry.
    """
    x, w = as_tensor(x), as_tensor(w)
    _check("transposed_conv2d", x, w, 0)
    n, cin, h, wd = x.shape
    _, cout, k, _ = w.shape
    s, p = stride, padding
    hp, wp = (h - 1) * s + k, (wd - 1) * s + k
    ho, wo = hp - 2 * p, wp - 2 * p
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"transposed_conv2d: padding {p} too large for input {x.shape}")
    xf = x.data.transpose(0, 2, 3, 1).reshape(n * h * wd, cin)
    wmat = w.data.reshape(cin, cout * k * k)
    cols = (xf @ wmat).reshape(n, h, wd, cout, k, k)
    full = _scatter_windows(cols, hp, wp, s)
    out = full[:, :, p:p + ho, p:p + wo]

    def backward(g):
        gp = np.pad(g, ((0, 0), (0, 0), (p, p), (p, p))) if p else g
        dcols = _windows(gp, k, s, h, wd).reshape(n * h * wd, cout * k * k)
        if x.requires_grad:
            _accum(x, (dcols @ wmat.T).reshape(n, h, wd, cin).transpose(0, 3, 1, 2))
        if w.requires_grad:
            _accum(w, (xf.T @ dcols).reshape(w.shape))

    y = _result(np.ascontiguousarray(out), (x, w), backward)
    if b is not None:
        y = y + as_tensor(b).reshape(1, cout, 1, 1)
    return y

"""3x3 convolution, transposed convolution and batch normalization."""

from __future__ import annotations

import numpy as np

from .tensor import DTYPE, DimensionError, NumericError, Tensor, record

KERNEL = 3


def _out_size(n: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - KERNEL) // stride + 1


def _im2col(x: np.ndarray, stride: int, padding: int, ho: int, wo: int) -> np.ndarray:
    """Return columns of shape [N, Cin*9, ho*wo]."""
    n, c = x.shape[:2]
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    cols = np.empty((n, c, KERNEL, KERNEL, ho, wo), dtype=DTYPE)
    for ki in range(KERNEL):
        for kj in range(KERNEL):
            cols[:, :, ki, kj] = xp[:, :, ki:ki + stride * (ho - 1) + 1:stride,
                                    kj:kj + stride * (wo - 1) + 1:stride]
    return cols.reshape(n, c * KERNEL * KERNEL, ho * wo)


def _col2im(dcols: np.ndarray, shape: tuple, stride: int, padding: int, ho: int, wo: int):
    n, c, h, w = shape
    hp = max(h + 2 * padding, KERNEL + stride * (ho - 1))
    wp = max(w + 2 * padding, KERNEL + stride * (wo - 1))
    gxp = np.zeros((n, c, hp, wp), dtype=DTYPE)
    dcols = dcols.reshape(n, c, KERNEL, KERNEL, ho, wo)
    for ki in range(KERNEL):
        for kj in range(KERNEL):
            gxp[:, :, ki:ki + stride * (ho - 1) + 1:stride,
                kj:kj + stride * (wo - 1) + 1:stride] += dcols[:, :, ki, kj]
    return gxp[:, :, padding:padding + h, padding:padding + w]


# The matrix products below accumulate in double and round once to float32:
# long reductions with cancellation otherwise lose ~1e-3 relative accuracy.

def _correlate(x, w, stride, padding):
    """Plain cross-correlation; returns (y, cols) with y shaped [N, Cout, Ho, Wo]."""
    n, _, h, wd = x.shape
    ho, wo = _out_size(h, stride, padding), _out_size(wd, stride, padding)
    if ho < 1 or wo < 1:
        raise DimensionError(f"input {x.shape[2:]} too small for stride {stride}")
    cols = _im2col(x, stride, padding, ho, wo)
    y = np.matmul(w.reshape(w.shape[0], -1).astype(np.float64), cols.astype(np.float64))
    return y.astype(DTYPE).reshape(n, w.shape[0], ho, wo), cols


def _correlate_input_grad(gy, w, x_shape, stride, padding):
    n, cout, ho, wo = gy.shape
    dcols = np.matmul(w.reshape(cout, -1).T.astype(np.float64),
                      gy.reshape(n, cout, ho * wo).astype(np.float64))
    return _col2im(dcols.astype(DTYPE), x_shape, stride, padding, ho, wo)


def _correlate_weight_grad(gy, cols, w_shape):
    n, cout = gy.shape[:2]
    g64 = gy.reshape(n, cout, -1).astype(np.float64)
    gw = np.matmul(g64, cols.astype(np.float64).transpose(0, 2, 1)).sum(axis=0)
    return gw.astype(DTYPE).reshape(w_shape)


def _check_weight(x: Tensor, weight: Tensor, in_axis: int) -> None:
    if x.ndim != 4:
        raise DimensionError(f"expected NCHW input, got shape {x.shape}")
    if weight.ndim != 4 or weight.shape[2:] != (KERNEL, KERNEL):
        raise DimensionError(f"expected 3x3 kernel, got weight shape {weight.shape}")
    if weight.shape[in_axis] != x.shape[1]:
        raise DimensionError(
            f"weight expects {weight.shape[in_axis]} input channels, input has {x.shape[1]}"
        )


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 1) -> Tensor:
    """3x3 cross-correlation. ``weight`` is [Cout, Cin, 3, 3]."""
    _check_weight(x, weight, 1)
    if bias.shape != (weight.shape[0],):
        raise DimensionError(f"bias shape {bias.shape} does not match {weight.shape[0]} outputs")
    y, cols = _correlate(x.data, weight.data, stride, padding)
    y += bias.data[None, :, None, None]

    def grad_fn(g):
        gx = _correlate_input_grad(g, weight.data, x.shape, stride, padding)
        gw = _correlate_weight_grad(g, cols, weight.shape)
        return gx, gw, g.sum(axis=(0, 2, 3))

    return record(y, (x, weight, bias), grad_fn, "conv2d")


def conv_transpose2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor,
    stride: int = 1,
    padding: int = 1,
    output_padding: int = 0,
) -> Tensor:
    """Adjoint of :func:`conv2d`. ``weight`` is [Cin, Cout, 3, 3]."""
    _check_weight(x, weight, 0)
    if bias.shape != (weight.shape[1],):
        raise DimensionError(f"bias shape {bias.shape} does not match {weight.shape[1]} outputs")
    if output_padding >= max(stride, 1) and output_padding > 0:
        raise DimensionError("output_padding must be smaller than stride")
    n, _, h, w = x.shape
    ho = (h - 1) * stride - 2 * padding + KERNEL + output_padding
    wo = (w - 1) * stride - 2 * padding + KERNEL + output_padding
    if ho < 1 or wo < 1:
        raise DimensionError(f"transposed output size {(ho, wo)} is empty")
    out_shape = (n, weight.shape[1], ho, wo)
    y = _correlate_input_grad(x.data, weight.data, out_shape, stride, padding)
    y = y + bias.data[None, :, None, None]

    def grad_fn(g):
        gx, cols = _correlate(g, weight.data, stride, padding)
        gw = _correlate_weight_grad(x.data, cols, weight.shape)
        return gx, gw, g.sum(axis=(0, 2, 3))

    return record(y, (x, weight, bias), grad_fn, "conv_transpose2d")


def batch_norm2d(x: Tensor, gamma: Tensor, beta_shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel standardization with current-batch statistics, then affine."""
    if x.ndim != 4:
        raise DimensionError(f"expected NCHW input, got shape {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta_shift.shape != (c,):
        raise DimensionError("gamma/beta_shift must have one entry per channel")
    if eps <= 0:
        raise ValueError("eps must be positive")
    m = x.shape[0] * x.shape[2] * x.shape[3]
    if m < 2:
        raise NumericError("batch_norm2d needs at least two values per channel")
    axes = (0, 2, 3)
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + DTYPE(eps))
    xhat = xc * inv_std
    g4 = gamma.data[None, :, None, None]
    y = xhat * g4 + beta_shift.data[None, :, None, None]

    def grad_fn(g):
        dbeta = g.sum(axis=axes)
        dgamma = (g * xhat).sum(axis=axes)
        dxhat = g * g4
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=axes, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True)
        )
        return dx, dgamma, dbeta

    return record(y, (x, gamma, beta_shift), grad_fn, "batch_norm2d")

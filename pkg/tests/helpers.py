"""Float64 reference implementations and finite-difference utilities for tests.

The references are written straight from the definitions (explicit loops or
scipy) and never call into the package, so gradient checks compare the
engine's backward pass against an independent forward.
"""

import itertools

import numpy as np
import scipy.fft

from audiostego.engine import Tape, Tensor, backward, mul, sum_all


def conv2d_ref(x, w, b, stride, padding):
    n, cin, h, wd = x.shape
    cout = w.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - 3) // stride + 1
    wo = (wd + 2 * padding - 3) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride:i * stride + 3, j * stride:j * stride + 3]
            out[:, :, i, j] = np.einsum("nchw,ochw->no", patch, w)
    return out + b[None, :, None, None]


def conv_transpose2d_ref(x, w, b, stride, padding, output_padding):
    """Scatter definition: each input pixel stamps its weighted kernel into the output."""
    n, cin, h, wd = x.shape
    cout = w.shape[1]
    ho = (h - 1) * stride - 2 * padding + 3 + output_padding
    wo = (wd - 1) * stride - 2 * padding + 3 + output_padding
    full = np.zeros((n, cout, (h - 1) * stride + 3 + output_padding + padding,
                     (wd - 1) * stride + 3 + output_padding + padding))
    for i in range(h):
        for j in range(wd):
            full[:, :, i * stride:i * stride + 3, j * stride:j * stride + 3] += np.einsum(
                "nc,cokl->nokl", x[:, :, i, j], w
            )
    return full[:, :, padding:padding + ho, padding:padding + wo] + b[None, :, None, None]


def batch_norm_ref(x, gamma, beta, eps):
    mu = x.mean(axis=(0, 2, 3), keepdims=True)
    var = x.var(axis=(0, 2, 3), keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma[None, :, None, None] + beta[None, :, None, None]


def leaky_relu_ref(x, alpha):
    return np.where(x >= 0, x, alpha * x)


def stdct_ref(samples, frame_len, hop, num_frames):
    cols = [samples[t * hop:t * hop + frame_len] for t in range(num_frames)]
    return scipy.fft.dct(np.stack(cols, axis=1), type=2, norm="ortho", axis=0)


def istdct_ref(grid, frame_len, hop):
    frames = scipy.fft.idct(grid, type=2, norm="ortho", axis=0)
    n = grid.shape[1]
    out = np.zeros(frame_len + (n - 1) * hop)
    cov = np.zeros_like(out)
    for t in range(n):
        out[t * hop:t * hop + frame_len] += frames[:, t]
        cov[t * hop:t * hop + frame_len] += 1
    return out / cov


def soft_dtw_ref(a, b, gamma):
    """Plain-python soft-DTW recursion in float64."""
    n, m = len(a), len(b)
    R = np.full((n + 1, m + 1), np.inf)
    R[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            prev = np.array([R[i - 1, j], R[i, j - 1], R[i - 1, j - 1]])
            mn = prev.min()
            soft = mn - gamma * np.log(np.sum(np.exp(-(prev - mn) / gamma)))
            R[i, j] = (a[i - 1] - b[j - 1]) ** 2 + soft
    return R[n, m]


def alignment_paths(n, m):
    """All monotone DTW alignment paths from (0, 0) to (n-1, m-1)."""
    def walk(i, j):
        if (i, j) == (n - 1, m - 1):
            yield [(i, j)]
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            ni, nj = i + di, j + dj
            if ni < n and nj < m:
                for rest in walk(ni, nj):
                    yield [(i, j)] + rest
    return list(walk(0, 0))


def soft_dtw_bruteforce(a, b, gamma):
    costs = np.array([sum((a[i] - b[j]) ** 2 for i, j in p) for p in alignment_paths(len(a), len(b))])
    mn = costs.min()
    return mn - gamma * np.log(np.sum(np.exp(-(costs - mn) / gamma)))


def central_diff(f, x, h=1e-3):
    """Central finite-difference gradient of scalar ``f`` at float64 array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in itertools.product(*(range(s) for s in x.shape)):
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def gradient_error(analytic, numeric, small=1e-6):
    """Max relative error; entries with |analytic| < ``small`` report absolute error."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(analytic - numeric)
    tiny = np.abs(analytic) < small
    rel = np.where(tiny, 0.0, diff / np.maximum(np.abs(analytic), 1e-30))
    abs_err = np.where(tiny, diff, 0.0)
    return float(rel.max(initial=0.0)), float(abs_err.max(initial=0.0))


def engine_grads(fn, arrays, weight):
    """Gradients of sum(fn(*tensors) * weight) w.r.t. every input, via the tape."""
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = fn(*tensors)
        loss = sum_all(mul(out, Tensor(weight))) if weight is not None else out
    backward(loss, tape)
    return [t.grad for t in tensors]


# criterion number -> (passed, detail); printed in the terminal summary
ACCEPTANCE = {}


def verdict(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    assert passed, detail
